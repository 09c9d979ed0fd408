//! The sums `E(nu, chi) = sum_{x in X(p^k)} e_{p^k}(nu x) chi(beta(x))`.
//!
//! Each term's phase is assembled as one exact fraction over
//! `lcm(p^k, |C|)` before a single complex exponential is taken.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hecke::{is_singular, HeckeCharacter, HeckeGroup};
use crate::modarith::{self, gauss_quadratic, inv_mod_raw, sqrt_set, PrimePower};

const MISSING: u64 = u64::MAX;

/// `|E|` below `VANISH_TOL * p^{k/2}` counts as zero.
pub const VANISH_TOL: f64 = 1e-8;

/// One evaluated sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpSumRecord {
    pub p: u64,
    pub k: u32,
    pub nu: i64,
    pub chi_index: u64,
    pub value: Complex64,
    pub theta: Option<f64>,
    pub good: bool,
    pub vanished: bool,
}

impl ExpSumRecord {
    pub fn new(pp: &PrimePower, nu: i64, chi_index: u64, value: Complex64, good: bool) -> Self {
        let scale = (pp.modulus() as f64).sqrt();
        let theta = good.then(|| theta_of_value(value.re, pp));
        Self { p: pp.p(), k: pp.k(), nu, chi_index, value, theta, good, vanished: value.norm() < VANISH_TOL * scale }
    }
}

/// `arccos(E / (2 p^{k/2}))`, clamped to `[0, pi]`.
pub fn theta_of_value(e: f64, pp: &PrimePower) -> f64 {
    let scale = 2.0 * (pp.modulus() as f64).sqrt();
    (e / scale).clamp(-1.0, 1.0).acos()
}

pub fn theta_angle(record: &ExpSumRecord) -> Result<f64> {
    if !record.good {
        return Err(Error::BadCharacter { index: record.chi_index, nu: record.nu });
    }
    let pp = PrimePower::new(record.p, record.k)?;
    Ok(theta_of_value(record.value.re, &pp))
}

/// Precomputed tables for evaluating `E(nu, chi)` over one group.
#[derive(Debug, Clone)]
pub struct ExpSumEvaluator<'g> {
    group: &'g HeckeGroup,
    dlog_beta: Vec<u64>,
    lcm: u128,
    t_scale: Option<u128>,
}

impl<'g> ExpSumEvaluator<'g> {
    pub fn new(group: &'g HeckeGroup) -> Result<Self> {
        let dlog_beta = group.dlog_beta_table().into_iter().map(|d| d.unwrap_or(MISSING)).collect();
        let n = group.order() as u128;
        let m = group.prime_power().modulus() as u128;
        let lcm = m / gcd(m, n) * n;
        let t_scale = match group.congruence_unit() {
            Ok(u) => {
                let d = group.dlog(u).ok_or_else(|| Error::Numerical("congruence unit is not in the group".into()))?;
                Some(d as u128 * group.t_chi_modulus() as u128 / n)
            }
            Err(Error::KTooSmall { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { group, dlog_beta, lcm, t_scale })
    }

    pub fn group(&self) -> &HeckeGroup {
        self.group
    }

    pub fn prime_power(&self) -> PrimePower {
        self.group.prime_power()
    }

    /// `dlog(beta(x))`, `None` on singular points.
    pub fn dlog_beta(&self, x: u64) -> Option<u64> {
        let d = self.dlog_beta[(x % self.prime_power().modulus()) as usize];
        (d != MISSING).then_some(d)
    }

    pub fn t_chi(&self, chi: &HeckeCharacter) -> Result<u64> {
        let k = self.prime_power().k();
        let scale = self.t_scale.ok_or(Error::KTooSmall { k })?;
        Ok(((chi.index() as u128 * scale) % self.group.t_chi_modulus() as u128) as u64)
    }

    /// `2 t_chi != -nu (mod p)`.
    pub fn is_good(&self, nu: i64, chi: &HeckeCharacter) -> Result<bool> {
        let p = self.prime_power().p();
        let t = self.t_chi(chi)?;
        Ok(!(2 * (t % p) + modarith::reduce(nu, p)).is_multiple_of(p))
    }

    /// Exact phase numerator of `e_{p^k}(nu x) chi(beta(x))` over `lcm`.
    fn term_phase(&self, nu: u64, x: u64, dlog: u64, chi: &HeckeCharacter) -> u128 {
        let m = self.prime_power().modulus() as u128;
        let n = self.group.order() as u128;
        let additive = (nu as u128 * x as u128 % m) * (self.lcm / m);
        let multiplicative = chi.exponent(dlog) as u128 * (self.lcm / n);
        (additive + multiplicative) % self.lcm
    }

    fn term(&self, nu: u64, x: u64, chi: &HeckeCharacter) -> Option<Complex64> {
        let dlog = self.dlog_beta(x)?;
        Some(modarith::e_frac(self.term_phase(nu, x, dlog, chi), self.lcm))
    }

    fn check_nu(&self, nu: i64) -> Result<u64> {
        let pp = self.prime_power();
        if nu.rem_euclid(pp.p() as i64) == 0 {
            return Err(Error::NonUnitNu { nu });
        }
        Ok(pp.reduce(nu))
    }

    /// Direct summation over `X(p^k)`.
    pub fn bruteforce(&self, nu: i64, chi: &HeckeCharacter) -> Result<Complex64> {
        let nu = self.check_nu(nu)?;
        let m = self.prime_power().modulus();
        Ok((0..m).filter_map(|x| self.term(nu, x, chi)).sum())
    }

    /// Closed form: `p^l` times a sum over `Sq((2 t_chi + nu) / (nu D), p^l)`,
    /// with an extra quadratic Gauss sum factor when `k = 2l + 1`.
    pub fn closed(&self, nu: i64, chi: &HeckeCharacter) -> Result<Complex64> {
        let pp = self.prime_power();
        let k = pp.k();
        if k < 2 {
            return Err(Error::KTooSmall { k });
        }
        let nu_r = self.check_nu(nu)?;
        let p = pp.p();
        let l = k / 2;
        let pl = pp.power(l);
        let t = self.t_chi(chi)? as u128;
        let ring = self.group.ring();
        let disc = ring.discriminant();

        let nu_d = modarith::mul_mod(nu_r % pl, disc % pl, pl);
        let nu_d_inv = inv_mod_raw(nu_d, pl).ok_or(Error::NonUnitNu { nu })?;
        let target = modarith::mul_mod(((2 * t + nu_r as u128) % pl as u128) as u64, nu_d_inv, pl);

        let mut sum = Complex64::new(0.0, 0.0);
        for x in sqrt_set(target as i64, p, l) {
            if is_singular(ring, x) {
                continue;
            }
            let Some(term) = self.term(nu_r, x, chi) else {
                continue;
            };
            if k.is_multiple_of(2) {
                debug_assert!(
                    self.term(nu_r, x + pl, chi).is_some_and(|other| (other - term).norm() < 1e-9),
                    "closed form depends on the lift of x = {x}"
                );
                sum += term;
            } else {
                sum += term * self.gauss_factor(x, nu_r, t as u64)?;
            }
        }
        Ok(sum * pl as f64)
    }

    /// `G(x) = sum_y e_p(f y^2 + g y)` with `f = 2 t D x / (D x^2 - 1)^2` and
    /// `g = p^{-l} (nu - 2 t / (D x^2 - 1))`, computed modulo `p^{l+1}`.
    fn gauss_factor(&self, x: u64, nu: u64, t: u64) -> Result<Complex64> {
        let pp = self.prime_power();
        let p = pp.p();
        let l = pp.k() / 2;
        let big = pp.power(l + 1);
        let disc = self.group.ring().discriminant() % big;
        let dx2m1 = (modarith::mul_mod(disc, modarith::mul_mod(x, x, big), big) + big - 1) % big;
        let inv = inv_mod_raw(dx2m1, big).ok_or(Error::SingularPoint { x })?;
        let f = modarith::mul_mod(
            modarith::mul_mod(2 * t % big, modarith::mul_mod(disc, x, big), big),
            modarith::mul_mod(inv, inv, big),
            big,
        ) % p;
        let shifted = (nu % big + big - modarith::mul_mod(2 * t % big, inv, big)) % big;
        let pl = pp.power(l);
        if !shifted.is_multiple_of(pl) {
            return Err(Error::Numerical(format!("g(x) is not divisible by p^l at x = {x}")));
        }
        Ok(gauss_quadratic(f as i64, (shifted / pl) as i64, p))
    }

    pub fn record(&self, nu: i64, chi: &HeckeCharacter) -> Result<ExpSumRecord> {
        let value = self.closed(nu, chi)?;
        let good = self.is_good(nu, chi)?;
        Ok(ExpSumRecord::new(&self.prime_power(), nu, chi.index(), value, good))
    }

    /// One record per `(chi, nu)` from the closed form, ordered by
    /// `(chi_index, nu)` in input `nu` order.
    pub fn scan(&self, nus: &[i64]) -> Result<Vec<ExpSumRecord>> {
        for &nu in nus {
            self.check_nu(nu)?;
        }
        let per_char = |j: u64| -> Result<Vec<ExpSumRecord>> {
            let chi = self.group.character(j);
            nus.iter().map(|&nu| self.record(nu, &chi)).collect()
        };
        #[cfg(feature = "parallel")]
        let chunks: Vec<Result<Vec<ExpSumRecord>>> = {
            use rayon::prelude::*;
            (0..self.group.order()).into_par_iter().map(per_char).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let chunks: Vec<Result<Vec<ExpSumRecord>>> = (0..self.group.order()).map(per_char).collect();
        let mut out = Vec::with_capacity(chunks.len() * nus.len());
        for chunk in chunks {
            out.extend(chunk?);
        }
        Ok(out)
    }

    /// Characters with `2 t_chi = -nu (mod p^2)` for `k = 3`, where `|E| = p^2`.
    pub fn find_large(&self, nu: i64) -> Result<Vec<u64>> {
        let pp = self.prime_power();
        if pp.k() != 3 {
            return Err(Error::WrongK { expected: 3, k: pp.k() });
        }
        let nu_r = self.check_nu(nu)?;
        let p2 = pp.power(2);
        let target = (p2 - nu_r % p2) % p2;
        let mut out = Vec::new();
        for chi in self.group.characters() {
            let t = self.t_chi(&chi)?;
            if (2 * t) % p2 != target {
                continue;
            }
            let value = self.closed(nu, &chi)?;
            let expected = p2 as f64;
            if (value.norm() - expected).abs() > 1e-6 * expected {
                return Err(Error::Numerical(format!(
                    "|E| = {} for character {}, expected {expected}",
                    value.norm(),
                    chi.index()
                )));
            }
            out.push(chi.index());
        }
        Ok(out)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `p^{k-2} (p -+ 1)`: the number of characters with `2 t_chi = -nu (mod p)`.
pub fn bad_character_count(group: &HeckeGroup) -> u64 {
    group.order() / group.prime_power().p()
}

/// Writes records with columns `p,k,nu,chi_index,re,im,theta,good,vanished`.
pub fn write_csv<W: Write>(records: &[ExpSumRecord], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["p", "k", "nu", "chi_index", "re", "im", "theta", "good", "vanished"])?;
    for r in records {
        writer.write_record([
            r.p.to_string(),
            r.k.to_string(),
            r.nu.to_string(),
            r.chi_index.to_string(),
            r.value.re.to_string(),
            r.value.im.to_string(),
            r.theta.map(|t| t.to_string()).unwrap_or_default(),
            r.good.to_string(),
            r.vanished.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantization::TorusAutomorphism;
    use proptest::prelude::*;

    fn group_for(p: u64, k: u32) -> HeckeGroup {
        let a = if p == 5 { TorusAutomorphism::new(3, 1, 2, 1).unwrap() } else { TorusAutomorphism::standard() };
        HeckeGroup::build(&a, PrimePower::new(p, k).unwrap()).unwrap()
    }

    /// Reference sum built from group elements directly, with floating phases.
    fn naive_sum(group: &HeckeGroup, nu: i64, j: u64) -> Complex64 {
        let pp = group.prime_power();
        let n = group.order() as f64;
        (0..pp.modulus())
            .filter_map(|x| {
                let beta = group.beta_of_x(x).ok()?;
                let d = group.dlog(beta)? as f64;
                let additive = modarith::e_n(nu * x as i64, pp.modulus());
                Some(additive * Complex64::from_polar(1.0, std::f64::consts::TAU * j as f64 * d / n))
            })
            .sum()
    }

    #[test]
    fn bruteforce_matches_naive_reference() {
        let g = group_for(7, 2);
        let ev = ExpSumEvaluator::new(&g).unwrap();
        for j in [0u64, 1, 13, 55] {
            let lhs = ev.bruteforce(3, &g.character(j)).unwrap();
            assert!((lhs - naive_sum(&g, 3, j)).norm() < 1e-9);
        }
    }

    #[test]
    fn k1_trivial_character() {
        // Inert: X is everything, so the sum is a complete additive sum.
        let g = group_for(7, 1);
        let ev = ExpSumEvaluator::new(&g).unwrap();
        assert!(ev.bruteforce(1, &g.character(0)).unwrap().norm() < 1e-10);
        // Split: two excluded points +-d^{-1} with d^2 = D.
        let g = group_for(11, 1);
        let ev = ExpSumEvaluator::new(&g).unwrap();
        let d = 4u64; // 4^2 = 5 mod 11
        let d_inv = inv_mod_raw(d, 11).unwrap();
        for nu in 1..11 {
            let expected = -2.0 * (std::f64::consts::TAU * (nu * d_inv) as f64 / 11.0).cos();
            let got = ev.bruteforce(nu as i64, &g.character(0)).unwrap();
            assert!((got - expected).norm() < 1e-10, "nu={nu}");
        }
    }

    #[test]
    fn closed_form_equals_bruteforce() {
        for (p, k) in [(3u64, 2u32), (3, 3), (3, 4), (5, 2), (5, 3), (11, 2), (7, 3)] {
            let g = group_for(p, k);
            let ev = ExpSumEvaluator::new(&g).unwrap();
            let nonresidue = (2..p as i64).find(|&v| modarith::legendre(v, p) == -1).unwrap();
            for nu in [1, 2, nonresidue] {
                for chi in g.characters() {
                    let a = ev.bruteforce(nu, &chi).unwrap();
                    let b = ev.closed(nu, &chi).unwrap();
                    assert!((a - b).norm() < 1e-7, "p={p} k={k} nu={nu} j={} {a} {b}", chi.index());
                }
            }
        }
    }

    #[test]
    fn closed_form_vanishes_off_the_squares() {
        let g = group_for(11, 2);
        let ev = ExpSumEvaluator::new(&g).unwrap();
        let disc = g.ring().discriminant();
        let mut seen = 0;
        for chi in g.characters() {
            let t = ev.t_chi(&chi).unwrap();
            let target = (2 * t + 1) % 11 * inv_mod_raw(disc % 11, 11).unwrap() % 11;
            if modarith::legendre(target as i64, 11) == -1 {
                assert!(ev.closed(1, &chi).unwrap().norm() < 1e-12);
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn closed_form_errors() {
        let g = group_for(7, 1);
        let ev = ExpSumEvaluator::new(&g).unwrap();
        assert!(matches!(ev.closed(1, &g.character(1)), Err(Error::KTooSmall { .. })));
        let g = group_for(7, 2);
        let ev = ExpSumEvaluator::new(&g).unwrap();
        assert!(matches!(ev.closed(14, &g.character(1)), Err(Error::NonUnitNu { .. })));
        assert!(matches!(ev.bruteforce(0, &g.character(1)), Err(Error::NonUnitNu { .. })));
        assert!(matches!(ev.find_large(1), Err(Error::WrongK { .. })));
    }

    #[test]
    fn theta_examples() {
        let pp = PrimePower::new(7, 2).unwrap();
        assert!((theta_of_value(0.0, &pp) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(theta_of_value(14.0, &pp).abs() < 1e-15);
        assert!((theta_of_value(-14.0, &pp) - std::f64::consts::PI).abs() < 1e-15);
        let bad = ExpSumRecord::new(&pp, 1, 3, Complex64::new(1.0, 0.0), false);
        assert!(matches!(theta_angle(&bad), Err(Error::BadCharacter { .. })));
        assert!(bad.theta.is_none());
    }

    #[test]
    fn large_sums_for_k3() {
        for p in [3u64, 5, 7] {
            let g = group_for(p, 3);
            let ev = ExpSumEvaluator::new(&g).unwrap();
            let large = ev.find_large(1).unwrap();
            assert!(!large.is_empty(), "p={p}");
            for j in large {
                let r = ev.record(1, &g.character(j)).unwrap();
                assert!(!r.good);
                assert!((r.value.norm() - (p * p) as f64).abs() < 1e-6 * (p * p) as f64);
            }
        }
    }

    #[test]
    fn scan_structure() {
        let g = group_for(7, 2);
        let ev = ExpSumEvaluator::new(&g).unwrap();
        let records = ev.scan(&[1, 3]).unwrap();
        assert_eq!(records.len() as u64, g.order() * 2);
        assert!(records
            .windows(2)
            .all(|w| (w[0].chi_index, w[0].nu) < (w[1].chi_index, w[1].nu) || (w[0].chi_index == w[1].chi_index)));
        let bad = records.iter().filter(|r| r.nu == 1 && !r.good).count() as u64;
        assert_eq!(bad, 7 + 1);
        assert_eq!(bad, bad_character_count(&g));
        let bound = 2.0 * 7.0 * (1.0 + 1e-8);
        for r in &records {
            assert!(r.value.im.abs() < 1e-8 * (1.0 + r.value.norm()));
            if r.good {
                assert!(r.value.norm() <= bound);
            }
        }
    }

    #[test]
    fn nonvanishing_good_sums_pair_conjugate_terms() {
        let g = group_for(11, 2);
        let ev = ExpSumEvaluator::new(&g).unwrap();
        let disc = g.ring().discriminant();
        for chi in g.characters() {
            if !ev.is_good(1, &chi).unwrap() {
                continue;
            }
            let t = ev.t_chi(&chi).unwrap();
            let target = (2 * t + 1) % 11 * inv_mod_raw(disc % 11, 11).unwrap() % 11;
            let roots: Vec<_> =
                sqrt_set(target as i64, 11, 1).into_iter().filter(|&x| !is_singular(g.ring(), x)).collect();
            if roots.len() == 2 {
                let a = ev.term(1, roots[0], &chi).unwrap();
                let b = ev.term(1, roots[1], &chi).unwrap();
                assert!((a - b.conj()).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let pp = PrimePower::new(3, 2).unwrap();
        let records = vec![
            ExpSumRecord::new(&pp, 1, 0, Complex64::new(3.0, 0.0), true),
            ExpSumRecord::new(&pp, 1, 1, Complex64::new(0.0, 0.0), false),
        ];
        let mut buf = Vec::new();
        write_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "p,k,nu,chi_index,re,im,theta,good,vanished");
        assert!(lines[1].starts_with("3,2,1,0,3,0,"));
        assert_eq!(lines[2], "3,2,1,1,0,0,,false,true");
    }

    proptest! {
        #[test]
        fn sums_are_real(seed in 0u64..50, nu in 1i64..125) {
            prop_assume!(nu % 5 != 0);
            let g = group_for(5, 3);
            let ev = ExpSumEvaluator::new(&g).unwrap();
            let chi = g.character(seed * 7 % g.order());
            let e = ev.bruteforce(nu, &chi).unwrap();
            prop_assert!(e.im.abs() < 1e-8 * (1.0 + e.norm()));
        }
    }
}
