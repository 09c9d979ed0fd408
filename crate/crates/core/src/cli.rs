//! Command-line front end: `verify`, `expsum` and `distribution`.
//!
//! Exit codes: 0 success, 1 a check failed or a computation broke, 2 bad
//! configuration.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distribution::{
    self, compare_distribution, normalized_elements, sample_yf, winsor_level, MomentRow, Reference, TwistedSpectrum,
};
use crate::error::{Error, Result};
use crate::expsum::{bad_character_count, write_csv, ExpSumEvaluator, ExpSumRecord};
use crate::hecke::{classify_prime, eigendecompose, split_level, trace_magnitude_check, HeckeGroup, PrimeKind};
use crate::modarith::{self, PrimePower};
use crate::quantization::{self, FourierObservable, StateVector, TorusAutomorphism, DENSE_CAP};

#[derive(Debug, Parser)]
#[command(name = "catmap", version, about = "Hecke eigenfunctions of the quantized cat map modulo prime powers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the verification suites and print a pass/fail table.
    Verify(Options),
    /// Evaluate E(nu, chi) for every character and write CSV (or JSON).
    Expsum(Options),
    /// Compare normalized matrix elements with the limiting model.
    Distribution(Options),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Matrix entries a,b,c,d of A = [[a,b],[c,d]].
    #[arg(long, value_delimiter = ',', num_args = 4, allow_negative_numbers = true)]
    pub matrix: Option<Vec<i64>>,
    /// Odd prime(s); comma separated for `verify`.
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<u64>>,
    /// Exponent(s); comma separated for `verify`.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<u32>>,
    /// Frequencies nu, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub nu: Option<Vec<i64>>,
    /// Observable as JSON records {n1, n2, re, im}.
    #[arg(long)]
    pub obs: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of model samples for `distribution`.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// JSON file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Settings read from `--config`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub matrix: Option<[i64; 4]>,
    pub p: Option<Vec<u64>>,
    pub k: Option<Vec<u32>>,
    pub nu: Option<Vec<i64>>,
    pub obs: Option<PathBuf>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }

    /// Flags override file values.
    pub fn merge(self, flags: &Options) -> Result<Self> {
        let matrix = match &flags.matrix {
            Some(m) => Some(
                <[i64; 4]>::try_from(m.as_slice())
                    .map_err(|_| Error::Config("--matrix takes exactly four integers".into()))?,
            ),
            None => self.matrix,
        };
        Ok(Self {
            matrix,
            p: flags.p.clone().or(self.p),
            k: flags.k.clone().or(self.k),
            nu: flags.nu.clone().or(self.nu),
            obs: flags.obs.clone().or(self.obs),
            seed: flags.seed.or(self.seed),
            samples: flags.samples.or(self.samples),
            out: flags.out.clone().or(self.out),
            format: flags.format.or(self.format),
            jobs: flags.jobs.or(self.jobs),
        })
    }

    pub fn automorphism(&self) -> Result<TorusAutomorphism> {
        match self.matrix {
            Some([a, b, c, d]) => TorusAutomorphism::new(a, b, c, d),
            None => Ok(TorusAutomorphism::standard()),
        }
    }

    fn single_p(&self, default: u64) -> Result<u64> {
        match self.p.as_deref() {
            None => Ok(default),
            Some([p]) => Ok(*p),
            Some(_) => Err(Error::Config("expected a single --p".into())),
        }
    }

    fn single_k(&self, default: u32) -> Result<u32> {
        match self.k.as_deref() {
            None => Ok(default),
            Some([k]) => Ok(*k),
            Some(_) => Err(Error::Config("expected a single --k".into())),
        }
    }
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(Error),
    Run(Error),
    Checks(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn config_err(e: Error) -> Failure {
    Failure::Config(e)
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Checks(n)) => {
            eprintln!("{n} check(s) failed");
            ExitCode::from(1)
        }
    }
}

pub fn run(cli: Cli) -> std::result::Result<(), Failure> {
    let options = match &cli.command {
        Command::Verify(o) | Command::Expsum(o) | Command::Distribution(o) => o,
    };
    let base = match &options.config {
        Some(path) => RunConfig::from_file(path).map_err(config_err)?,
        None => RunConfig::default(),
    };
    let config = base.merge(options).map_err(config_err)?;
    let a = config.automorphism().map_err(config_err)?;
    if let Some(jobs) = config.jobs {
        configure_threads(jobs);
    }
    match cli.command {
        Command::Verify(_) => cmd_verify(&config, &a),
        Command::Expsum(_) => cmd_expsum(&config, &a),
        Command::Distribution(_) => cmd_distribution(&config, &a),
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(jobs: usize) {
    // Only the first call can set the global pool; later calls are no-ops.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_jobs: usize) {}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn validated_prime_power(
    a: &TorusAutomorphism,
    p: u64,
    k: u32,
) -> std::result::Result<(PrimePower, PrimeKind), Failure> {
    let pp = PrimePower::new(p, k).map_err(config_err)?;
    let kind = classify_prime(a, p).map_err(config_err)?;
    Ok((pp, kind))
}

/// One row of the `verify` table.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub p: u64,
    pub k: u32,
    pub suite: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub const DEFAULT_PRIMES: [u64; 5] = [3, 5, 7, 11, 13];

fn cmd_verify(config: &RunConfig, a: &TorusAutomorphism) -> std::result::Result<(), Failure> {
    let explicit = config.p.is_some();
    let primes = config.p.clone().unwrap_or_else(|| DEFAULT_PRIMES.to_vec());
    let ks = config.k.clone().unwrap_or_else(|| vec![1, 2, 3]);
    let mut cases = Vec::new();
    for &p in &primes {
        match classify_prime(a, p) {
            Err(Error::Ramified { .. }) if !explicit => {
                eprintln!("warning: skipping p = {p}, ramified for D = {}", a.discriminant());
                continue;
            }
            Err(e) => return Err(config_err(e)),
            Ok(_) => {}
        }
        for &k in &ks {
            cases.push(PrimePower::new(p, k).map_err(config_err)?);
        }
    }
    let mut rows = Vec::new();
    for pp in cases {
        for row in verify_case(a, pp)? {
            println!(
                "{:>4} {:>2}  {:<14} {}  {}",
                row.p,
                row.k,
                row.suite,
                if row.passed { "PASS" } else { "FAIL" },
                row.detail
            );
            rows.push(row);
        }
    }
    if let Some(path) = &config.out {
        let mut out = open_output(Some(path))?;
        match config.format.unwrap_or(Format::Json) {
            Format::Json => {
                serde_json::to_writer_pretty(&mut out, &rows).map_err(Error::from)?;
                writeln!(out).map_err(Error::from)?;
            }
            Format::Csv => {
                let mut w = csv::Writer::from_writer(&mut out);
                for row in &rows {
                    w.serialize(row).map_err(Error::from)?;
                }
                w.flush().map_err(Error::from)?;
            }
        }
        out.flush().map_err(Error::from)?;
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::Checks(failed));
    }
    Ok(())
}

/// Test vectors `n` with `p` not dividing `Q(n)`, at least four distinct `Q` values when possible.
pub fn probe_vectors(a: &TorusAutomorphism, p: u64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    'outer: for r in 1i64..=6 {
        for n1 in -r..=r {
            for n2 in [-r, r] {
                for n in [(n1, n2), (n2, n1)] {
                    let q = a.quadratic_form(n);
                    if q.rem_euclid(p as i64) != 0 && seen.insert(q) {
                        out.push(n);
                        if out.len() == 6 {
                            break 'outer;
                        }
                    }
                }
            }
        }
    }
    out
}

fn verify_case(a: &TorusAutomorphism, pp: PrimePower) -> Result<Vec<CheckRow>> {
    let (p, k) = (pp.p(), pp.k());
    let mut rows = Vec::new();
    let mut push = |suite: &'static str, passed: bool, detail: String| {
        rows.push(CheckRow { p, k, suite, passed, detail });
    };

    // modarith: square roots and inverses against exhaustive search.
    let mut ok = true;
    for nu in [1i64, 2, 3, 5, -1] {
        ok &= modarith::sqrt_set(nu, p, k) == modarith::sqrt_set_exhaustive(nu, p, k);
    }
    for x in (1..pp.modulus()).filter(|&x| pp.is_unit(x)).take(200) {
        ok &= pp.mul(x, modarith::inv_mod(x, &pp)?) == 1;
    }
    push("modarith", ok, "sqrt_set and inv_mod vs exhaustive".into());

    // quantization: unitarity and Egorov on probe states.
    let b = a.reduce(&pp);
    let probes: Vec<StateVector> = (0..3).map(|y| StateVector::delta(pp, (y * 7 + 1) % pp.modulus())).collect();
    let mut worst = 0.0f64;
    for psi in &probes {
        let image = quantization::apply_propagator(&b, psi)?;
        worst = worst.max((image.norm() - psi.norm()).abs());
        for n in probe_vectors(a, p).into_iter().take(3) {
            let lhs = quantization::apply_propagator(&b, &quantization::apply_twisted(a.act(n), psi))?;
            let rhs = quantization::apply_twisted(n, &image);
            let diff = lhs.amplitudes().iter().zip(rhs.amplitudes()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            worst = worst.max(diff);
        }
    }
    push("quantization", worst < 1e-8, format!("unitarity/Egorov defect {worst:.1e}"));

    // hecke: group order, traces, multiplicities.
    let group = HeckeGroup::build(a, pp)?;
    let expected_order = match group.kind() {
        PrimeKind::Split => pp.power(k - 1) * (p - 1),
        PrimeKind::Inert => pp.power(k - 1) * (p + 1),
    };
    let mut traces_ok = group.order() == expected_order;
    let step = (group.order() / 50).max(1);
    for i in (0..group.order()).step_by(step as usize) {
        traces_ok &= trace_magnitude_check(&group, group.element(i))?.passed;
    }
    push("hecke-group", traces_ok, format!("{} |C| = {}, traces vs kernels", group.kind(), group.order()));

    let decomposition = if pp.modulus() <= DENSE_CAP { Some(eigendecompose(&group)?) } else { None };
    if let Some(dec) = &decomposition {
        let mult_ok = match group.kind() {
            PrimeKind::Inert => dec.multiplicities().iter().all(|&m| m == 1),
            PrimeKind::Split => {
                let anchor = dec.split_anchor()?;
                dec.clusters.iter().all(|c| {
                    let j = (c.label + group.order() - anchor) % group.order();
                    c.multiplicity() as u32 == k - split_level(j, &pp) + 1
                })
            }
        };
        push(
            "hecke-eigen",
            mult_ok && dec.dimension() as u64 == pp.modulus(),
            format!("{} joint eigenspaces, {} excluded", dec.clusters.len(), dec.excluded_count()),
        );
    }

    // expsum: closed form vs brute force.
    if k >= 2 {
        let ev = ExpSumEvaluator::new(&group)?;
        let mut worst = 0.0f64;
        for nu in [1i64, 2] {
            for chi in group.characters() {
                worst = worst.max((ev.closed(nu, &chi)? - ev.bruteforce(nu, &chi)?).norm());
            }
        }
        push("expsum", worst < 1e-7, format!("max |closed - brute| {worst:.1e}"));
    }

    // Matrix elements as exponential sums, then slow decay.
    let ns = probe_vectors(a, p);
    if let Some(dec) = &decomposition {
        let report = distribution::theorem1_with(&group, dec, &ns)?;
        push(
            "theorem1",
            report.passed(),
            format!(
                "{} eigenfunctions, sign {:+}, unique {}",
                report.n_eigenfunctions,
                report.sign.unwrap_or(0),
                report.matched_unique
            ),
        );
        if k == 3 {
            let probe = distribution::slow_decay_probe(a, pp, &ns)?;
            let ok = !probe.large_characters.is_empty()
                && (probe.max_abs_e - (p * p) as f64).abs() < 1e-6 * (p * p) as f64
                && (probe.max_element - probe.expected_element).abs() < 1e-6 * probe.expected_element;
            push("slow-decay", ok, format!("|<T(n)psi,psi>| = {:.6} for |E| = p^2", probe.max_element));
        }
    }

    // distribution: well-formed normalized elements.
    if pp.modulus() <= DENSE_CAP || group.kind() == PrimeKind::Split {
        let f = FourierObservable::cosine(ns[0], 1.0);
        let elements = normalized_elements(&f, a, pp)?;
        let spectrum = TwistedSpectrum::from_observable(&f, a);
        let scale = spectrum.coefficients().values().next().map_or(0.0, |c| c.re);
        let cmp = compare_distribution(&elements.values, Reference::Mu { scale }, winsor_level(p))?;
        let finite = elements.values.values().iter().all(|v| v.is_finite());
        let counted = elements.values.len() + elements.excluded == pp.modulus() as usize;
        push(
            "distribution",
            finite && counted && elements.max_imaginary < 1e-7,
            format!("{} values, ks vs mu {:.3}", elements.values.len(), cmp.ks),
        );
    }
    Ok(rows)
}

/// Serializable form of an [`ExpSumRecord`].
#[derive(Debug, Clone, Serialize)]
struct ExpSumRow {
    p: u64,
    k: u32,
    nu: i64,
    chi_index: u64,
    re: f64,
    im: f64,
    theta: Option<f64>,
    good: bool,
    vanished: bool,
}

impl From<&ExpSumRecord> for ExpSumRow {
    fn from(r: &ExpSumRecord) -> Self {
        Self {
            p: r.p,
            k: r.k,
            nu: r.nu,
            chi_index: r.chi_index,
            re: r.value.re,
            im: r.value.im,
            theta: r.theta,
            good: r.good,
            vanished: r.vanished,
        }
    }
}

fn cmd_expsum(config: &RunConfig, a: &TorusAutomorphism) -> std::result::Result<(), Failure> {
    let p = config.single_p(101).map_err(config_err)?;
    let k = config.single_k(2).map_err(config_err)?;
    if k < 2 {
        return Err(config_err(Error::KTooSmall { k }));
    }
    let (pp, _) = validated_prime_power(a, p, k)?;
    let nus = config.nu.clone().unwrap_or_else(|| vec![1]);
    if let Some(&nu) = nus.iter().find(|&&nu| nu.rem_euclid(p as i64) == 0) {
        return Err(config_err(Error::NonUnitNu { nu }));
    }
    let group = HeckeGroup::build(a, pp)?;
    let records = ExpSumEvaluator::new(&group)?.scan(&nus)?;
    if records.iter().any(|r| !r.value.re.is_finite() || !r.value.im.is_finite()) {
        return Err(Failure::Run(Error::Numerical("non-finite exponential sum".into())));
    }
    let mut out = open_output(config.out.as_deref())?;
    match config.format.unwrap_or(Format::Csv) {
        Format::Csv => write_csv(&records, &mut out)?,
        Format::Json => {
            let rows: Vec<ExpSumRow> = records.iter().map(ExpSumRow::from).collect();
            serde_json::to_writer(&mut out, &rows).map_err(Error::from)?;
            writeln!(out).map_err(Error::from)?;
        }
    }
    out.flush().map_err(Error::from)?;
    Ok(())
}

/// JSON report of `distribution`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub p: u64,
    pub k: u32,
    pub kind: PrimeKind,
    pub observable_digest: String,
    pub n_eigenfunctions: usize,
    pub n_excluded_multiplicity: usize,
    pub n_bad_character: u64,
    pub ks: f64,
    pub moments: Vec<MomentRow>,
    pub winsorized: usize,
    pub sign: Option<i8>,
    pub matched_unique: bool,
    /// Model compared against: `mu` (single frequency) or `sampler`.
    pub model: String,
    /// `N / #C`, the finite-N factor between matrix elements and the model.
    pub scale: f64,
}

pub fn observable_digest(f: &FourierObservable) -> String {
    let digest = Sha256::digest(f.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn default_observable() -> FourierObservable {
    FourierObservable::cosine((1, 0), 1.0)
}

/// Builds the distribution report for `f` at `p^k`, returning the matrix elements too.
pub fn distribution_report(
    f: &FourierObservable,
    a: &TorusAutomorphism,
    pp: PrimePower,
    seed: u64,
    samples: usize,
) -> Result<(DistributionReport, distribution::EmpiricalSet)> {
    f.require_real()?;
    let group = HeckeGroup::build(a, pp)?;
    let elements = normalized_elements(f, a, pp)?;
    if elements.values.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite matrix element".into()));
    }
    let spectrum = TwistedSpectrum::from_observable(f, a);
    let scale = pp.modulus() as f64 / group.order() as f64;
    let clip = winsor_level(pp.p());
    let (cmp, model) = if spectrum.coefficients().len() <= 1 {
        let fsharp = spectrum.coefficients().values().next().map_or(0.0, |c| c.re);
        (compare_distribution(&elements.values, Reference::Mu { scale: fsharp * scale }, clip)?, "mu")
    } else {
        let raw = sample_yf(&spectrum, seed, samples)?;
        let scaled = distribution::EmpiricalSet::new(
            raw.values().iter().map(|v| v * scale).collect(),
            distribution::SampleSource::Sampler,
        );
        (compare_distribution(&elements.values, Reference::Sample(&scaled), clip)?, "sampler")
    };
    let theorem1 = theorem1_for_report(a, &group, pp)?;
    let report = DistributionReport {
        p: pp.p(),
        k: pp.k(),
        kind: group.kind(),
        observable_digest: observable_digest(f),
        n_eigenfunctions: elements.values.len(),
        n_excluded_multiplicity: elements.excluded,
        n_bad_character: bad_character_count(&group),
        ks: cmp.ks,
        moments: cmp.moments,
        winsorized: cmp.winsorized,
        sign: theorem1.as_ref().and_then(|r| r.sign),
        matched_unique: theorem1.is_some_and(|r| r.matched_unique),
        model: model.into(),
        scale,
    };
    Ok((report, elements.values))
}

fn theorem1_for_report(
    a: &TorusAutomorphism,
    group: &HeckeGroup,
    pp: PrimePower,
) -> Result<Option<distribution::Theorem1Report>> {
    let ns = probe_vectors(a, pp.p());
    if pp.modulus() <= DENSE_CAP {
        let dec = eigendecompose(group)?;
        return distribution::theorem1_with(group, &dec, &ns).map(Some);
    }
    match group.kind() {
        PrimeKind::Split => distribution::theorem1_verify_split(a, pp, &ns).map(Some),
        PrimeKind::Inert => Ok(None),
    }
}

fn cmd_distribution(config: &RunConfig, a: &TorusAutomorphism) -> std::result::Result<(), Failure> {
    let p = config.single_p(101).map_err(config_err)?;
    let k = config.single_k(2).map_err(config_err)?;
    let (pp, _) = validated_prime_power(a, p, k)?;
    let f = match &config.obs {
        Some(path) => FourierObservable::from_json_file(path).map_err(config_err)?,
        None => default_observable(),
    };
    f.require_real().map_err(config_err)?;
    let spectrum = TwistedSpectrum::from_observable(&f, a);
    if let Some(nu) = spectrum.non_unit_frequency(p) {
        return Err(config_err(Error::BadNu { nu, p }));
    }
    if spectrum.dropped_zero_class() {
        eprintln!("warning: frequencies with Q(n) = 0 were dropped");
    }
    let seed = config.seed.unwrap_or(0);
    let samples = config.samples.unwrap_or(100_000);
    let (report, values) = distribution_report(&f, a, pp, seed, samples)?;
    if !report.ks.is_finite() || report.moments.iter().any(|m| !m.left.is_finite() || !m.right.is_finite()) {
        return Err(Failure::Run(Error::Numerical("non-finite statistic".into())));
    }
    let mut out = open_output(config.out.as_deref())?;
    match config.format.unwrap_or(Format::Json) {
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &report).map_err(Error::from)?;
            writeln!(out).map_err(Error::from)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["value"]).map_err(Error::from)?;
            for v in values.values() {
                w.write_record([v.to_string()]).map_err(Error::from)?;
            }
            w.flush().map_err(Error::from)?;
        }
    }
    out.flush().map_err(Error::from)?;
    Ok(())
}
