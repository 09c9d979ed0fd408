//! Matrix-element statistics and the limiting measure.
//!
//! `mu` is the law on `[0, pi)` with an atom of mass 1/2 at `pi/2` and mass
//! 1/2 spread uniformly. Samples are compared through `V = 2 cos(theta)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expsum::ExpSumEvaluator;
use crate::hecke::{
    is_singular, HeckeCharacter, HeckeGroup, OrderElement, PrimeKind, QuadraticOrder, SplitDiagonalizer,
};
use crate::modarith::{self, legendre, PrimePower, RootTable};
#[cfg(feature = "eigen")]
use crate::quantization::StateVector;
use crate::quantization::{FourierObservable, TorusAutomorphism};

/// `Q(n) = omega(nA, n)`.
pub fn quadratic_form(a: &TorusAutomorphism, n: (i64, i64)) -> i64 {
    a.quadratic_form(n)
}

fn parity_sign(n: (i64, i64)) -> f64 {
    if (n.0 * n.1).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `f#(nu) = sum_{Q(n) = nu} (-1)^{n1 n2} f(n)` for `nu != 0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TwistedSpectrum {
    coeffs: BTreeMap<i64, Complex64>,
    dropped_zero_class: bool,
}

impl TwistedSpectrum {
    pub fn from_observable(f: &FourierObservable, a: &TorusAutomorphism) -> Self {
        let mut coeffs = BTreeMap::new();
        let mut dropped_zero_class = false;
        for (&n, &c) in f.coefficients() {
            if n == (0, 0) {
                continue;
            }
            let q = a.quadratic_form(n);
            if q == 0 {
                dropped_zero_class = true;
                continue;
            }
            *coeffs.entry(q).or_insert(Complex64::new(0.0, 0.0)) += c * parity_sign(n);
        }
        Self { coeffs, dropped_zero_class }
    }

    pub fn single(nu: i64, value: f64) -> Self {
        Self { coeffs: BTreeMap::from([(nu, Complex64::new(value, 0.0))]), dropped_zero_class: false }
    }

    pub fn coefficients(&self) -> &BTreeMap<i64, Complex64> {
        &self.coeffs
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Whether some `n != 0` with `Q(n) = 0` was discarded.
    pub fn dropped_zero_class(&self) -> bool {
        self.dropped_zero_class
    }

    pub fn is_real(&self) -> bool {
        self.coeffs.values().all(|c| c.im.abs() <= 1e-12 * (1.0 + c.norm()))
    }

    /// First frequency divisible by `p`, if any.
    pub fn non_unit_frequency(&self, p: u64) -> Option<i64> {
        self.coeffs.keys().copied().find(|nu| nu.rem_euclid(p as i64) == 0)
    }

    pub fn abs_sum(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm()).sum()
    }
}

pub fn twisted_coefficients(f: &FourierObservable, a: &TorusAutomorphism) -> TwistedSpectrum {
    TwistedSpectrum::from_observable(f, a)
}

/// `E[(2 cos theta)^m]` under `mu` as a reduced fraction.
pub fn mu_moment_ratio(m: u32) -> (u128, u128) {
    if m == 0 {
        return (1, 1);
    }
    if m % 2 == 1 {
        return (0, 1);
    }
    let c = binomial(m as u128, (m / 2) as u128);
    if c.is_multiple_of(2) {
        (c / 2, 1)
    } else {
        (c, 2)
    }
}

pub fn mu_moment(m: u32) -> f64 {
    let (num, den) = mu_moment_ratio(m);
    num as f64 / den as f64
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// `P(2 cos theta <= v)` for `theta ~ mu`.
pub fn mu_cdf(v: f64) -> f64 {
    let uniform = 0.5 * (1.0 - (v / 2.0).clamp(-1.0, 1.0).acos() / PI);
    let atom = if v >= 0.0 { 0.5 } else { 0.0 };
    uniform + atom
}

/// `P(2 cos theta < v)`.
pub fn mu_cdf_left(v: f64) -> f64 {
    let uniform = 0.5 * (1.0 - (v / 2.0).clamp(-1.0, 1.0).acos() / PI);
    let atom = if v > 0.0 { 0.5 } else { 0.0 };
    uniform + atom
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Eigenfunctions,
    Sampler,
    Sums,
}

/// A sorted list of real samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSet {
    values: Vec<f64>,
    source: SampleSource,
}

impl EmpiricalSet {
    pub fn new(mut values: Vec<f64>, source: SampleSource) -> Self {
        values.sort_by(f64::total_cmp);
        Self { values, source }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn source(&self) -> SampleSource {
        self.source
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `(1/n) sum x^m` after clipping to `[-clip, clip]`.
    pub fn moment(&self, m: u32, clip: f64) -> f64 {
        let sum: f64 = self.values.iter().map(|x| x.clamp(-clip, clip).powi(m as i32)).sum();
        sum / self.values.len() as f64
    }

    pub fn count_outside(&self, clip: f64) -> usize {
        self.values.iter().filter(|x| x.abs() > clip).count()
    }
}

/// `Y_f = 2 sum f#(nu) cos(theta_nu)` with independent `theta_nu ~ mu`.
pub fn sample_yf(spectrum: &TwistedSpectrum, seed: u64, count: usize) -> Result<EmpiricalSet> {
    if !spectrum.is_real() {
        let nu = spectrum.coeffs.iter().find(|(_, c)| c.im.abs() > 1e-12).map(|(&nu, _)| nu);
        return Err(Error::NotReal { n: (nu.unwrap_or(0), 0) });
    }
    let weights: Vec<f64> = spectrum.coeffs.values().map(|c| 2.0 * c.re).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..count)
        .map(|_| {
            weights.iter().map(|w| if rng.random_bool(0.5) { 0.0 } else { w * rng.random_range(0.0..PI).cos() }).sum()
        })
        .collect();
    Ok(EmpiricalSet::new(values, SampleSource::Sampler))
}

/// Right-hand side of a distribution comparison.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    Sample(&'a EmpiricalSet),
    /// Law of `scale * 2 cos(theta)`, `theta ~ mu`.
    Mu {
        scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub order: u32,
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionComparison {
    pub ks: f64,
    pub moments: Vec<MomentRow>,
    pub winsorized: usize,
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &EmpiricalSet, b: &EmpiricalSet) -> f64 {
    let (x, y) = (a.values(), b.values());
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut worst = 0.0f64;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        worst = worst.max((i as f64 / n - j as f64 / m).abs());
    }
    worst
}

/// Kolmogorov–Smirnov distance to a CDF given with its left limits.
pub fn ks_against(a: &EmpiricalSet, cdf: impl Fn(f64) -> f64, cdf_left: impl Fn(f64) -> f64) -> f64 {
    let x = a.values();
    let n = x.len() as f64;
    let mut worst = 0.0f64;
    let mut i = 0;
    while i < x.len() {
        let v = x[i];
        let below = i as f64 / n;
        while i < x.len() && x[i] == v {
            i += 1;
        }
        let upto = i as f64 / n;
        worst = worst.max((upto - cdf(v)).abs()).max((below - cdf_left(v)).abs());
    }
    worst
}

fn scaled_mu_cdf(scale: f64, left: bool) -> impl Fn(f64) -> f64 {
    move |v: f64| {
        if scale == 0.0 {
            return if (left && v > 0.0) || (!left && v >= 0.0) { 1.0 } else { 0.0 };
        }
        let u = v / scale;
        if scale > 0.0 {
            if left {
                mu_cdf_left(u)
            } else {
                mu_cdf(u)
            }
        } else if left {
            1.0 - mu_cdf(u)
        } else {
            1.0 - mu_cdf_left(u)
        }
    }
}

/// KS distance plus moments 1..=6, clipping both sides at `clip`.
pub fn compare_distribution(left: &EmpiricalSet, right: Reference<'_>, clip: f64) -> Result<DistributionComparison> {
    if left.is_empty() {
        return Err(Error::EmptySet);
    }
    let (ks, right_moment): (f64, Box<dyn Fn(u32) -> f64>) = match right {
        Reference::Sample(b) => {
            if b.is_empty() {
                return Err(Error::EmptySet);
            }
            (ks_two_sample(left, b), Box::new(move |m| b.moment(m, clip)))
        }
        Reference::Mu { scale } => (
            ks_against(left, scaled_mu_cdf(scale, false), scaled_mu_cdf(scale, true)),
            Box::new(move |m| scale.powi(m as i32) * mu_moment(m)),
        ),
    };
    let moments = (1..=6).map(|m| MomentRow { order: m, left: left.moment(m, clip), right: right_moment(m) }).collect();
    let mut winsorized = left.count_outside(clip);
    if let Reference::Sample(b) = right {
        winsorized += b.count_outside(clip);
    }
    Ok(DistributionComparison { ks, moments, winsorized })
}

/// Clip level `10 p^{1/6}` for moment tables.
pub fn winsor_level(p: u64) -> f64 {
    10.0 * (p as f64).powf(1.0 / 6.0)
}

/// Normalized matrix elements `sqrt(N) (<Op(f) psi, psi> - f(0))` over the
/// eigenfunctions spanning one-dimensional joint eigenspaces.
#[derive(Debug, Clone)]
pub struct NormalizedElements {
    pub values: EmpiricalSet,
    /// `(label, F)` in eigenfunction order; labels are eigenvalue labels on
    /// the dense route and character indices on the split route.
    pub by_label: Vec<(u64, f64)>,
    pub excluded: usize,
    pub max_imaginary: f64,
    pub kind: PrimeKind,
    pub group_order: u64,
}

fn check_spectrum(spectrum: &TwistedSpectrum, pp: &PrimePower) -> Result<()> {
    if let Some(nu) = spectrum.non_unit_frequency(pp.p()) {
        return Err(Error::BadNu { nu, p: pp.p() });
    }
    Ok(())
}

/// Dense eigensolver for `N <= DENSE_CAP`; explicit split eigenfunctions above.
pub fn normalized_elements(f: &FourierObservable, a: &TorusAutomorphism, pp: PrimePower) -> Result<NormalizedElements> {
    let spectrum = TwistedSpectrum::from_observable(f, a);
    check_spectrum(&spectrum, &pp)?;
    let group = HeckeGroup::build(a, pp)?;
    #[cfg(feature = "eigen")]
    if pp.modulus() <= crate::quantization::DENSE_CAP {
        return normalized_elements_dense(f, &group);
    }
    match group.kind() {
        PrimeKind::Split => normalized_elements_split(f, &group),
        PrimeKind::Inert => Err(Error::TooLarge { n: pp.modulus(), cap: crate::quantization::DENSE_CAP }),
    }
}

#[cfg(feature = "eigen")]
fn observable_element(f: &FourierObservable, psi: &StateVector) -> Result<Complex64> {
    let mut acc = Complex64::new(0.0, 0.0);
    for (&n, &c) in f.coefficients() {
        if n != (0, 0) {
            acc += c * crate::quantization::matrix_element(n, psi)?;
        }
    }
    Ok(acc * (psi.dim() as f64).sqrt())
}

#[cfg(feature = "eigen")]
fn normalized_elements_dense(f: &FourierObservable, group: &HeckeGroup) -> Result<NormalizedElements> {
    let decomposition = crate::hecke::eigendecompose(group)?;
    let simple: Vec<(u64, &StateVector)> = decomposition.simple_eigenfunctions().collect();
    let eval = |(label, psi): &(u64, &StateVector)| observable_element(f, psi).map(|v| (*label, v));
    #[cfg(feature = "parallel")]
    let results: Vec<Result<(u64, Complex64)>> = {
        use rayon::prelude::*;
        simple.par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(u64, Complex64)>> = simple.iter().map(eval).collect();
    collect_elements(results, decomposition.excluded_count(), group, f)
}

/// `|F_j|` below `VANISH_TOL * sum |f(n)|` is stored as exactly zero, matching
/// the vanishing test for exponential sums so the atom of `mu` stays an atom.
fn collect_elements(
    results: Vec<Result<(u64, Complex64)>>,
    excluded: usize,
    group: &HeckeGroup,
    f: &FourierObservable,
) -> Result<NormalizedElements> {
    let snap = crate::expsum::VANISH_TOL * f.coefficients().values().map(|c| c.norm()).sum::<f64>();
    let mut by_label = Vec::with_capacity(results.len());
    let mut max_imaginary = 0.0f64;
    for r in results {
        let (label, v) = r?;
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(Error::Numerical(format!("non-finite matrix element for label {label}")));
        }
        max_imaginary = max_imaginary.max(v.im.abs());
        by_label.push((label, if v.re.abs() < snap { 0.0 } else { v.re }));
    }
    Ok(NormalizedElements {
        values: EmpiricalSet::new(by_label.iter().map(|e| e.1).collect(), SampleSource::Eigenfunctions),
        by_label,
        excluded,
        max_imaginary,
        kind: group.kind(),
        group_order: group.order(),
    })
}

/// Precomputed data for matrix elements of explicit split eigenfunctions.
pub struct SplitFrame<'g> {
    group: &'g HeckeGroup,
    diag: SplitDiagonalizer,
    /// `dlog` of the group element attached to each unit, `u64::MAX` off units.
    unit_dlog: Vec<u64>,
    roots_n: RootTable,
    roots_c: RootTable,
}

impl<'g> SplitFrame<'g> {
    pub fn new(group: &'g HeckeGroup) -> Result<Self> {
        let pp = group.prime_power();
        let diag = SplitDiagonalizer::new(group.automorphism(), pp)?;
        let unit_dlog = (0..pp.modulus())
            .map(|y| {
                if !pp.is_unit(y) {
                    return Ok(u64::MAX);
                }
                let beta = diag.element_for_unit(group.ring(), y)?;
                group.dlog(beta).ok_or_else(|| Error::Numerical(format!("{beta:?} not in group")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            group,
            diag,
            unit_dlog,
            roots_n: RootTable::new(pp.modulus()),
            roots_c: RootTable::new(group.order()),
        })
    }

    pub fn diagonalizer(&self) -> &SplitDiagonalizer {
        &self.diag
    }

    /// `<T~(n) psi_chi, psi_chi>` through `<T~(nM) chi~, chi~> / |chi~|^2`.
    pub fn twisted_element(&self, chi: &HeckeCharacter, n: (i64, i64)) -> Complex64 {
        let pp = self.group.prime_power();
        let m = pp.modulus();
        let order = self.group.order();
        let image = self.diag.matrix().act((pp.reduce(n.0), pp.reduce(n.1)));
        let (n1, n2) = image;
        let c = pp.mul(pp.half(), pp.mul(n1, n2));
        let mut acc = Complex64::new(0.0, 0.0);
        for y in 0..m {
            let d0 = self.unit_dlog[y as usize];
            let d1 = self.unit_dlog[((y + n1) % m) as usize];
            if d0 == u64::MAX || d1 == u64::MAX {
                continue;
            }
            let char_phase = chi.exponent((d1 + order - d0) % order);
            acc += self.roots_n.get(c + pp.mul(n2, y)) * self.roots_c.get(char_phase);
        }
        // |chi~|^2 = (p - 1) / p under the 1/N inner product.
        let units = (m - m / pp.p()) as f64;
        acc / units
    }

    /// `<T(n) psi, psi>` for the eigenfunction of `chi`.
    pub fn element(&self, chi: &HeckeCharacter, n: (i64, i64)) -> Complex64 {
        self.twisted_element(chi, n) * parity_sign(n)
    }
}

fn normalized_elements_split(f: &FourierObservable, group: &HeckeGroup) -> Result<NormalizedElements> {
    let frame = SplitFrame::new(group)?;
    let pp = group.prime_power();
    let k = pp.k();
    let primitive: Vec<u64> = (0..group.order()).filter(|&j| crate::hecke::split_level(j, &pp) == k).collect();
    let sqrt_n = (pp.modulus() as f64).sqrt();
    let eval = |&j: &u64| -> Result<(u64, Complex64)> {
        let chi = group.character(j);
        let mut acc = Complex64::new(0.0, 0.0);
        for (&n, &c) in f.coefficients() {
            if n != (0, 0) {
                acc += c * frame.element(&chi, n);
            }
        }
        Ok((j, acc * sqrt_n))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<(u64, Complex64)>> = {
        use rayon::prelude::*;
        primitive.par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(u64, Complex64)>> = primitive.iter().map(eval).collect();
    let excluded = pp.modulus() as usize - primitive.len();
    collect_elements(results, excluded, group, f)
}

/// Outcome of matching eigenfunction matrix elements against exponential sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub p: u64,
    pub k: u32,
    pub kind: PrimeKind,
    pub n_eigenfunctions: usize,
    pub n_excluded_multiplicity: usize,
    pub distinct_q: usize,
    /// Eigenfunctions with at least one matching `(sign, character)`.
    pub n_matched: usize,
    /// Eigenfunctions whose matching `(sign, character)` is unique.
    pub n_unique_per_eigenfunction: usize,
    /// Global `(sign, offset)` pairs with matched index `label + offset`.
    pub global_matches: Vec<(i8, u64)>,
    pub sign: Option<i8>,
    pub offset: Option<u64>,
    pub matched_unique: bool,
    pub max_residual: f64,
}

impl Theorem1Report {
    pub fn passed(&self) -> bool {
        self.matched_unique && self.n_matched == self.n_eigenfunctions && self.n_eigenfunctions > 0
    }
}

/// Tolerance for matching matrix elements with `E / #C`.
pub const THEOREM1_TOL: f64 = 1e-7;

/// All `E(Q(n)/2, chi)` for every character, rows indexed by character.
fn sum_table(group: &HeckeGroup, nus: &[i64]) -> Result<Vec<Vec<Complex64>>> {
    let ev = ExpSumEvaluator::new(group)?;
    let k = group.prime_power().k();
    let row = |j: u64| -> Result<Vec<Complex64>> {
        let chi = group.character(j);
        nus.iter().map(|&nu| if k >= 2 { ev.closed(nu, &chi) } else { ev.bruteforce(nu, &chi) }).collect()
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..group.order()).into_par_iter().map(row).collect()
    }
    #[cfg(not(feature = "parallel"))]
    (0..group.order()).map(row).collect()
}

/// `Q(n) / 2 mod N` for each `n`, rejecting `p | Q(n)`.
pub fn halved_frequencies(a: &TorusAutomorphism, pp: &PrimePower, ns: &[(i64, i64)]) -> Result<Vec<i64>> {
    ns.iter()
        .map(|&n| {
            let q = a.quadratic_form(n);
            if q.rem_euclid(pp.p() as i64) == 0 {
                return Err(Error::BadNu { nu: q, p: pp.p() });
            }
            Ok(pp.mul(pp.reduce(q), pp.half()) as i64)
        })
        .collect()
}

/// Matches each simple eigenfunction's twisted elements `<T~(n) psi, psi>`
/// with `s E(Q(n)/2, chi') / #C` and intersects the matches over all
/// eigenfunctions as a global `(s, offset)` with `chi' = label + offset`.
pub fn match_theorem1(
    group: &HeckeGroup,
    labelled: &[(u64, Vec<Complex64>)],
    nus: &[i64],
    excluded: usize,
    distinct_q: usize,
) -> Result<Theorem1Report> {
    let pp = group.prime_power();
    let order = group.order();
    let table = sum_table(group, nus)?;
    let size = order as f64;
    let candidates = |elements: &Vec<Complex64>| -> (HashSet<(i8, u64)>, f64) {
        let mut found = HashSet::new();
        let mut best = f64::INFINITY;
        for (j, row) in table.iter().enumerate() {
            for sign in [1i8, -1] {
                let s = sign as f64 / size;
                let mut residual = 0.0f64;
                for (a, e) in elements.iter().zip(row) {
                    residual = residual.max((a - e * s).norm());
                    if residual >= best && residual >= THEOREM1_TOL {
                        break;
                    }
                }
                best = best.min(residual);
                if residual < THEOREM1_TOL {
                    found.insert((sign, j as u64));
                }
            }
        }
        (found, best)
    };
    #[cfg(feature = "parallel")]
    let searched: Vec<(HashSet<(i8, u64)>, f64)> = {
        use rayon::prelude::*;
        labelled.par_iter().map(|(_, e)| candidates(e)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let searched: Vec<(HashSet<(i8, u64)>, f64)> = labelled.iter().map(|(_, e)| candidates(e)).collect();
    let max_residual = searched.iter().map(|(_, r)| *r).fold(0.0f64, f64::max);
    let candidate_sets: Vec<HashSet<(i8, u64)>> = searched.into_iter().map(|(c, _)| c).collect();
    let n_matched = candidate_sets.iter().filter(|c| !c.is_empty()).count();
    let n_unique = candidate_sets.iter().filter(|c| c.len() == 1).count();
    // Every global (sign, offset) must appear in the first eigenfunction's set.
    let mut global: Vec<(i8, u64)> = match (labelled.first(), candidate_sets.first()) {
        (Some((label, _)), Some(first)) => first
            .iter()
            .map(|&(sign, j)| (sign, (j + order - label % order) % order))
            .filter(|&(sign, offset)| {
                labelled
                    .iter()
                    .zip(&candidate_sets)
                    .all(|((label, _), set)| set.contains(&(sign, (label + offset) % order)))
            })
            .collect(),
        _ => Vec::new(),
    };
    global.sort_unstable();
    let matched_unique = global.len() == 1;
    Ok(Theorem1Report {
        p: pp.p(),
        k: pp.k(),
        kind: group.kind(),
        n_eigenfunctions: labelled.len(),
        n_excluded_multiplicity: excluded,
        distinct_q,
        n_matched,
        n_unique_per_eigenfunction: n_unique,
        sign: matched_unique.then(|| global[0].0),
        offset: matched_unique.then(|| global[0].1),
        global_matches: global,
        matched_unique,
        max_residual,
    })
}

fn distinct_q(a: &TorusAutomorphism, ns: &[(i64, i64)]) -> usize {
    ns.iter().map(|&n| a.quadratic_form(n)).collect::<HashSet<_>>().len()
}

/// Matrix-element identity check over the dense eigendecomposition.
#[cfg(feature = "eigen")]
pub fn theorem1_verify(a: &TorusAutomorphism, pp: PrimePower, ns: &[(i64, i64)]) -> Result<Theorem1Report> {
    let group = HeckeGroup::build(a, pp)?;
    let decomposition = crate::hecke::eigendecompose(&group)?;
    theorem1_with(&group, &decomposition, ns)
}

#[cfg(feature = "eigen")]
pub fn theorem1_with(
    group: &HeckeGroup,
    decomposition: &crate::hecke::EigenDecomposition,
    ns: &[(i64, i64)],
) -> Result<Theorem1Report> {
    let a = group.automorphism();
    let pp = group.prime_power();
    let nus = halved_frequencies(a, &pp, ns)?;
    let labelled: Vec<(u64, Vec<Complex64>)> = decomposition
        .simple_eigenfunctions()
        .map(|(label, psi)| (label, ns.iter().map(|&n| crate::quantization::twisted_element(n, psi)).collect()))
        .collect();
    match_theorem1(group, &labelled, &nus, decomposition.excluded_count(), distinct_q(a, ns))
}

/// Matrix-element identity check for split primes using the explicit eigenfunctions of the
/// primitive characters (the simple joint eigenspaces).
pub fn theorem1_verify_split(a: &TorusAutomorphism, pp: PrimePower, ns: &[(i64, i64)]) -> Result<Theorem1Report> {
    let group = HeckeGroup::build(a, pp)?;
    let frame = SplitFrame::new(&group)?;
    let nus = halved_frequencies(a, &pp, ns)?;
    let labelled: Vec<(u64, Vec<Complex64>)> = (0..group.order())
        .filter(|&j| crate::hecke::split_level(j, &pp) == pp.k())
        .map(|j| {
            let chi = group.character(j);
            (j, ns.iter().map(|&n| frame.twisted_element(&chi, n)).collect())
        })
        .collect();
    let excluded = pp.modulus() as usize - labelled.len();
    match_theorem1(&group, &labelled, &nus, excluded, distinct_q(a, ns))
}

/// Evidence for the `N^{-1/3}` decay rate at `k = 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowDecayReport {
    pub p: u64,
    pub nu: i64,
    pub large_characters: Vec<u64>,
    pub max_abs_e: f64,
    /// Largest `|<T(n) psi, psi>|` over eigenfunctions matched to a large character.
    pub max_element: f64,
    pub expected_element: f64,
    pub n_cube_root: f64,
}

/// Finds the characters with `|E| = p^2` for `nu = Q(n)/2` and the matrix
/// elements `<T(n) psi, psi>` of the eigenfunctions they belong to.
#[cfg(feature = "eigen")]
pub fn slow_decay_probe(a: &TorusAutomorphism, pp: PrimePower, ns: &[(i64, i64)]) -> Result<SlowDecayReport> {
    if pp.k() != 3 {
        return Err(Error::WrongK { expected: 3, k: pp.k() });
    }
    let group = HeckeGroup::build(a, pp)?;
    let decomposition = crate::hecke::eigendecompose(&group)?;
    let report = theorem1_with(&group, &decomposition, ns)?;
    let (Some(_), Some(offset)) = (report.sign, report.offset) else {
        return Err(Error::NoMatch { label: 0 });
    };
    let n = ns[0];
    let nu = halved_frequencies(a, &pp, &[n])?[0];
    let ev = ExpSumEvaluator::new(&group)?;
    let large = ev.find_large(nu)?;
    let order = group.order();
    let mut max_abs_e = 0.0f64;
    let mut max_element = 0.0f64;
    for &j in &large {
        max_abs_e = max_abs_e.max(ev.closed(nu, &group.character(j))?.norm());
        let label = (j + order - offset) % order;
        let cluster = decomposition.cluster(label).ok_or(Error::NoMatch { label })?;
        for psi in &cluster.basis {
            max_element = max_element.max(crate::quantization::matrix_element(n, psi)?.norm());
        }
    }
    let p = pp.p();
    let expected_element = match group.kind() {
        PrimeKind::Split => 1.0 / (p - 1) as f64,
        PrimeKind::Inert => 1.0 / (p + 1) as f64,
    };
    Ok(SlowDecayReport {
        p,
        nu,
        large_characters: large,
        max_abs_e,
        max_element,
        expected_element,
        n_cube_root: (pp.modulus() as f64).cbrt(),
    })
}

fn unit_points(ring: &QuadraticOrder) -> impl Iterator<Item = u64> + '_ {
    let pp = ring.prime_power();
    (0..pp.modulus()).filter(move |&x| pp.is_unit(x) && !is_singular(ring, x))
}

fn nu_residues(pp: &PrimePower, nus: &[i64]) -> Vec<u64> {
    nus.iter().map(|&nu| pp.reduce(nu)).collect()
}

/// Fibers `{x : nu (D x^2 - 1) = value}` over unit points of `X(p^l)`.
fn fibers(ring: &QuadraticOrder, nu: u64) -> HashMap<u64, Vec<u64>> {
    let pp = ring.prime_power();
    let mut map: HashMap<u64, Vec<u64>> = HashMap::new();
    for x in unit_points(ring) {
        let value = pp.mul(nu, pp.sub(pp.mul(ring.discriminant(), pp.mul(x, x)), 1));
        map.entry(value).or_default().push(x);
    }
    map
}

/// `#Y'(p^l)`: tuples of unit points of `X(p^l)` with
/// `nu_1 (D x_1^2 - 1) = nu_j (D x_j^2 - 1)` for all `j`.
pub fn count_y_prime(a: &TorusAutomorphism, p: u64, l: u32, nus: &[i64]) -> Result<u64> {
    let pp = PrimePower::new(p, l)?;
    let ring = QuadraticOrder::new(a, pp);
    let nus = nu_residues(&pp, nus);
    let Some((&first, rest)) = nus.split_first() else {
        return Ok(0);
    };
    let rest_fibers: Vec<_> = rest.iter().map(|&nu| fibers(&ring, nu)).collect();
    let mut total = 0u64;
    for (value, xs) in fibers(&ring, first) {
        let mut count = xs.len() as u64;
        for f in &rest_fibers {
            count *= f.get(&value).map_or(0, |v| v.len() as u64);
        }
        total += count;
    }
    Ok(total)
}

/// `#Y'_0(p^l)`: the tuples of `Y'` with `prod beta(x_j)^{n_j} = 1`.
pub fn count_y0_prime(a: &TorusAutomorphism, p: u64, l: u32, nus: &[i64], ns: &[i64]) -> Result<u64> {
    if nus.len() != ns.len() {
        return Err(Error::DimensionMismatch { left: nus.len(), right: ns.len() });
    }
    let pp = PrimePower::new(p, l)?;
    let ring = QuadraticOrder::new(a, pp);
    let nus = nu_residues(&pp, nus);
    let Some((&first, rest)) = nus.split_first() else {
        return Ok(0);
    };
    let rest_fibers: Vec<_> = rest.iter().map(|&nu| fibers(&ring, nu)).collect();
    let power = |x: u64, n: i64| -> Result<OrderElement> {
        let beta = ring.beta_of_x(x)?;
        let base = if n < 0 { ring.conj(beta) } else { beta };
        Ok(ring.pow(base, n.unsigned_abs()))
    };
    let mut total = 0u64;
    for (value, xs) in fibers(&ring, first) {
        let choices: Option<Vec<&Vec<u64>>> = rest_fibers.iter().map(|f| f.get(&value)).collect();
        let Some(choices) = choices else { continue };
        for &x1 in &xs {
            let start = power(x1, ns[0])?;
            total += count_products(&ring, start, &choices, &ns[1..], &power)?;
        }
    }
    Ok(total)
}

fn count_products(
    ring: &QuadraticOrder,
    acc: OrderElement,
    choices: &[&Vec<u64>],
    ns: &[i64],
    power: &impl Fn(u64, i64) -> Result<OrderElement>,
) -> Result<u64> {
    let Some((first, rest)) = choices.split_first() else {
        return Ok(u64::from(acc == ring.one()));
    };
    let mut total = 0;
    for &x in first.iter() {
        let next = ring.mul(acc, power(x, ns[0])?);
        total += count_products(ring, next, rest, &ns[1..], power)?;
    }
    Ok(total)
}

/// `(1/p) #{t mod p : (t - nu_j) / (D nu_j) is a nonzero square for all j}`.
pub fn square_density(discriminant: i64, nus: &[i64], p: u64) -> Result<f64> {
    let pp = PrimePower::new(p, 1)?;
    let d = pp.reduce(discriminant);
    let factors = nus
        .iter()
        .map(|&nu| {
            let nu = pp.reduce(nu);
            modarith::inv_mod(pp.mul(d, nu), &pp).map(|inv| (nu, inv))
        })
        .collect::<Result<Vec<_>>>()?;
    let count = (0..p)
        .filter(|&t| factors.iter().all(|&(nu, inv)| legendre(pp.mul(pp.sub(t, nu), inv) as i64, p) == 1))
        .count();
    Ok(count as f64 / p as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hecke::unit_character_state;
    use proptest::prelude::*;

    fn standard() -> TorusAutomorphism {
        TorusAutomorphism::standard()
    }

    #[test]
    fn q_examples() {
        let a = standard();
        assert_eq!(quadratic_form(&a, (0, 0)), 0);
        assert_eq!(quadratic_form(&a, (1, 0)), -1);
    }

    #[test]
    fn twisted_coefficient_examples() {
        let a = standard();
        assert!(TwistedSpectrum::from_observable(&FourierObservable::constant(1.0), &a).is_empty());
        let f = FourierObservable::cosine((1, 0), 1.0);
        let s = TwistedSpectrum::from_observable(&f, &a);
        assert_eq!(s.coefficients().len(), 1);
        assert!((s.coefficients()[&-1] - 1.0).norm() < 1e-15);
        let g = FourierObservable::cosine((1, 1), 1.0);
        let s = TwistedSpectrum::from_observable(&g, &a);
        assert!((s.coefficients()[&1] + 1.0).norm() < 1e-15);
    }

    #[test]
    fn mu_moments() {
        assert_eq!(mu_moment_ratio(0), (1, 1));
        assert_eq!(mu_moment(1), 0.0);
        assert_eq!(mu_moment(2), 1.0);
        assert_eq!(mu_moment(4), 3.0);
        assert_eq!(mu_moment(6), 10.0);
        assert_eq!(mu_moment(5), 0.0);
    }

    /// `E[g(2 cos theta)]`: atom at `V = 0`, midpoint rule on the uniform part.
    fn mu_expectation(g: impl Fn(f64) -> f64) -> f64 {
        let nodes = 100_000;
        let h = PI / nodes as f64;
        let uniform: f64 = (0..nodes).map(|i| g(2.0 * (((i as f64) + 0.5) * h).cos())).sum::<f64>() * h / PI;
        0.5 * g(0.0) + 0.5 * uniform
    }

    #[test]
    fn mu_moments_match_quadrature() {
        for m in 0..=8 {
            let numeric = mu_expectation(|v| v.powi(m as i32));
            assert!((numeric - mu_moment(m)).abs() < 1e-6, "m={m}");
        }
    }

    #[test]
    fn mu_cdf_matches_quadrature() {
        assert_eq!(mu_cdf(-2.0), 0.0);
        assert_eq!(mu_cdf(2.0), 1.0);
        assert!((mu_cdf(0.0) - mu_cdf_left(0.0) - 0.5).abs() < 1e-15);
        for i in 0..=40 {
            let v = -2.0 + 4.0 * i as f64 / 40.0;
            let numeric = mu_expectation(|x| if x <= v { 1.0 } else { 0.0 });
            assert!((numeric - mu_cdf(v)).abs() < 1e-4, "v={v}");
        }
    }

    #[test]
    fn mu_cdf_matches_thousand_point_quadrature() {
        // Gauss-free check: for v away from the atom, the uniform part is a
        // smooth integral; a 1000-node midpoint rule over theta resolves it.
        for v in [-1.9, -1.2, -0.5, 0.3, 1.1, 1.7] {
            let nodes = 1000;
            let target = (v / 2.0f64).acos();
            let h = (PI - target) / nodes as f64;
            let integral: f64 = (0..nodes).map(|_| h).sum::<f64>() / PI;
            let numeric = 0.5 * integral + if v >= 0.0 { 0.5 } else { 0.0 };
            assert!((numeric - mu_cdf(v)).abs() < 1e-6);
        }
    }

    #[test]
    fn sampler_is_deterministic_with_atom() {
        let spectrum = TwistedSpectrum::single(1, 1.0);
        let a = sample_yf(&spectrum, 7, 20_000).unwrap();
        let b = sample_yf(&spectrum, 7, 20_000).unwrap();
        assert_eq!(a, b);
        let zeros = a.values().iter().filter(|v| v.abs() < 1e-12).count() as f64 / 20_000.0;
        assert!((zeros - 0.5).abs() < 0.02);
        let c = sample_yf(&spectrum, 8, 20_000).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ks_examples() {
        let s = EmpiricalSet::new(vec![0.1, 0.5, 0.9], SampleSource::Sums);
        assert_eq!(ks_two_sample(&s, &s), 0.0);
        let t = EmpiricalSet::new(vec![10.0, 11.0], SampleSource::Sums);
        assert_eq!(ks_two_sample(&s, &t), 1.0);
        let zeros = EmpiricalSet::new(vec![0.0; 5], SampleSource::Eigenfunctions);
        let cmp = compare_distribution(&zeros, Reference::Mu { scale: 0.0 }, 10.0).unwrap();
        assert_eq!(cmp.ks, 0.0);
        assert!(matches!(
            compare_distribution(&EmpiricalSet::new(vec![], SampleSource::Sums), Reference::Mu { scale: 1.0 }, 1.0),
            Err(Error::EmptySet)
        ));
    }

    #[test]
    fn sampler_against_closed_cdf() {
        let spectrum = TwistedSpectrum::single(3, 0.7);
        let sample = sample_yf(&spectrum, 1, 100_000).unwrap();
        let cmp = compare_distribution(&sample, Reference::Mu { scale: 0.7 }, 100.0).unwrap();
        assert!(cmp.ks < 0.01, "ks={}", cmp.ks);
        assert!((cmp.moments[1].left - cmp.moments[1].right).abs() < 0.01);
        let flipped = compare_distribution(&sample, Reference::Mu { scale: -0.7 }, 100.0).unwrap();
        assert!(flipped.ks < 0.01);
    }

    #[test]
    fn square_density_examples() {
        let d = square_density(5, &[1], 499).unwrap();
        assert!((d - 0.5).abs() < 3.0 / 499f64.sqrt());
        let d2 = square_density(5, &[1, 2], 499).unwrap();
        assert!((d2 - 0.25).abs() < 6.0 / 499f64.sqrt());
    }

    /// Exhaustive tuple enumeration for r <= 2.
    fn y_prime_tuples(a: &TorusAutomorphism, p: u64, l: u32, nus: &[i64]) -> Vec<Vec<u64>> {
        let pp = PrimePower::new(p, l).unwrap();
        let ring = QuadraticOrder::new(a, pp);
        let pts: Vec<u64> = unit_points(&ring).collect();
        let value = |x: u64, nu: i64| pp.mul(pp.reduce(nu), pp.sub(pp.mul(ring.discriminant(), pp.mul(x, x)), 1));
        let mut out = Vec::new();
        match nus.len() {
            1 => out.extend(pts.iter().map(|&x| vec![x])),
            2 => {
                for &x in &pts {
                    for &y in &pts {
                        if value(x, nus[0]) == value(y, nus[1]) {
                            out.push(vec![x, y]);
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
        out
    }

    #[test]
    fn counting_matches_tuple_enumeration() {
        let a = standard();
        for (p, l) in [(11u64, 1u32), (13, 1), (11, 2), (7, 2)] {
            for nus in [vec![1i64], vec![1, 2], vec![2, 5]] {
                let tuples = y_prime_tuples(&a, p, l, &nus);
                assert_eq!(count_y_prime(&a, p, l, &nus).unwrap(), tuples.len() as u64);
                assert!(tuples.len() as u64 <= (1u64 << nus.len()) * p.pow(l));
                let ns: Vec<i64> = (1..=nus.len() as i64).collect();
                let pp = PrimePower::new(p, l).unwrap();
                let ring = QuadraticOrder::new(&a, pp);
                let brute = tuples
                    .iter()
                    .filter(|t| {
                        let prod = t.iter().zip(&ns).fold(ring.one(), |acc, (&x, &n)| {
                            ring.mul(acc, ring.pow(ring.beta_of_x(x).unwrap(), n as u64))
                        });
                        prod == ring.one()
                    })
                    .count() as u64;
                let counted = count_y0_prime(&a, p, l, &nus, &ns).unwrap();
                assert_eq!(counted, brute);
                assert!(counted <= tuples.len() as u64);
            }
        }
    }

    #[test]
    fn y0_single_point_is_empty() {
        let a = standard();
        assert_eq!(count_y0_prime(&a, 11, 1, &[1], &[1]).unwrap(), 0);
    }

    #[test]
    fn split_frame_elements_are_bounded() {
        let pp = PrimePower::new(11, 2).unwrap();
        let group = HeckeGroup::build(&standard(), pp).unwrap();
        let frame = SplitFrame::new(&group).unwrap();
        for j in [1u64, 2, 13] {
            let chi = group.character(j);
            assert!((frame.element(&chi, (0, 0)) - 1.0).norm() < 1e-12);
            let e = frame.element(&chi, (1, 2));
            let e_neg = frame.element(&chi, (-1, -2));
            assert!((e - e_neg.conj()).norm() < 1e-12);
            assert!(e.norm() <= 1.0 + 1e-12);
        }
        let diag = frame.diagonalizer();
        let chi = group.character(3);
        let state = unit_character_state(&group, diag, &chi).unwrap();
        let direct = crate::hecke::split_twisted_element(diag, &state, (2, 1));
        assert!((direct - frame.twisted_element(&chi, (2, 1))).norm() < 1e-12);
    }

    #[cfg(feature = "eigen")]
    #[test]
    fn normalized_elements_basic() {
        let a = standard();
        let pp = PrimePower::new(3, 2).unwrap();
        let constant = normalized_elements(&FourierObservable::constant(2.0), &a, pp).unwrap();
        assert!(constant.values.values().iter().all(|v| v.abs() < 1e-12));
        let f = FourierObservable::cosine((1, 0), 1.0);
        let elems = normalized_elements(&f, &a, pp).unwrap();
        assert_eq!(elems.values.len(), 9);
        assert!(elems.max_imaginary < 1e-7);
        let bad = FourierObservable::cosine((1, 2), 1.0); // Q = 5, not a unit mod 5 but fine mod 3
        assert!(normalized_elements(&bad, &a, pp).is_ok());
        let bad = FourierObservable::cosine((0, 3), 1.0); // Q = 9
        assert!(matches!(normalized_elements(&bad, &a, pp), Err(Error::BadNu { .. })));
    }

    #[cfg(feature = "eigen")]
    #[test]
    fn theorem1_small_cases() {
        let a = standard();
        let ns = [(1, 0), (0, 1), (1, 3), (3, 1), (1, 4)];
        for (p, k) in [(3u64, 1u32), (3, 2), (7, 1)] {
            let report = theorem1_verify(&a, PrimePower::new(p, k).unwrap(), &ns).unwrap();
            assert!(report.passed(), "{report:?}");
        }
    }

    #[cfg(feature = "eigen")]
    #[test]
    fn split_explicit_and_dense_theorem1_agree_on_sign() {
        let a = standard();
        let pp = PrimePower::new(11, 2).unwrap();
        let ns: Vec<(i64, i64)> = [(1, 0), (0, 1), (1, 3), (3, 1), (1, 4), (2, 3)]
            .into_iter()
            .filter(|&n| a.quadratic_form(n) % 11 != 0)
            .collect();
        let dense = theorem1_verify(&a, pp, &ns).unwrap();
        let explicit = theorem1_verify_split(&a, pp, &ns).unwrap();
        assert!(dense.passed(), "{dense:?}");
        assert!(explicit.passed(), "{explicit:?}");
        assert_eq!(dense.sign, explicit.sign);
    }

    proptest! {
        #[test]
        fn q_is_invariant(n1 in -50i64..50, n2 in -50i64..50) {
            let a = standard();
            prop_assert_eq!(a.quadratic_form(a.act((n1, n2))), a.quadratic_form((n1, n2)));
            prop_assert_eq!(a.quadratic_form((-n1, -n2)), a.quadratic_form((n1, n2)));
        }

        #[test]
        fn real_observables_have_real_spectra(c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, n1 in -4i64..4, n2 in -4i64..4) {
            let f = FourierObservable::new([
                ((n1, n2), Complex64::new(c1, c2)),
                ((-n1, -n2), Complex64::new(c1, -c2)),
            ]);
            prop_assume!(f.is_real());
            prop_assert!(TwistedSpectrum::from_observable(&f, &standard()).is_real());
        }
    }
}
