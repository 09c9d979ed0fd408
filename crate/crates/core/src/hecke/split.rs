//! Explicit Hecke eigenfunctions for split primes.
//!
//! When `D` is a square mod `p`, some `M` in `SL(2, Z/p^k)` diagonalizes `A`.
//! A character `chi` of `C(p^k) = (Z/p^k)^*` extended by zero off the units is
//! an eigenfunction of every diagonal propagator, so `U~(M) chi~` is a joint
//! eigenfunction of the Hecke operators.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::modarith::{self, inv_mod, sqrt_set, PrimePower};
use crate::quantization::{apply_propagator, twisted_element, ResidueMatrix, StateVector, TorusAutomorphism};

use super::{HeckeCharacter, HeckeGroup, OrderElement, PrimeKind, QuadraticOrder};

/// `M` with `M^{-1} A M = diag(y, y^{-1})` and `det M = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitDiagonalizer {
    matrix: ResidueMatrix,
    eigenvalue: u64,
    pp: PrimePower,
}

impl SplitDiagonalizer {
    pub fn new(a: &TorusAutomorphism, pp: PrimePower) -> Result<Self> {
        let p = pp.p();
        if modarith::legendre(a.discriminant(), p) != 1 {
            return Err(Error::NotSplit { p });
        }
        let d = *sqrt_set(a.discriminant(), p, pp.k()).first().ok_or(Error::NotSplit { p })?;
        let t = pp.reduce(a.trace());
        let y = pp.mul(pp.add(t, d), pp.half());
        let y_inv = inv_mod(y, &pp)?;
        let [a11, a12, a21, a22] = a.entries().map(|e| pp.reduce(e));
        let eigenvector = |lambda: u64| -> Result<(u64, u64)> {
            let first = (a12, pp.sub(lambda, a11));
            let second = (pp.sub(lambda, a22), a21);
            [first, second]
                .into_iter()
                .find(|v| v.0 % p != 0 || v.1 % p != 0)
                .ok_or_else(|| Error::Numerical("no eigenvector mod p".into()))
        };
        let v = eigenvector(y)?;
        let w = eigenvector(y_inv)?;
        let det = pp.sub(pp.mul(v.0, w.1), pp.mul(w.0, v.1));
        let det_inv = inv_mod(det, &pp)?;
        let w = (pp.mul(w.0, det_inv), pp.mul(w.1, det_inv));
        let matrix = ResidueMatrix::new([[v.0, w.0], [v.1, w.1]], &pp);
        let out = Self { matrix, eigenvalue: y, pp };
        debug_assert!(out.diagonalizes(a));
        Ok(out)
    }

    pub fn matrix(&self) -> &ResidueMatrix {
        &self.matrix
    }

    /// `y` with `M^{-1} A M = diag(y, y^{-1})`.
    pub fn eigenvalue(&self) -> u64 {
        self.eigenvalue
    }

    pub fn diagonalizes(&self, a: &TorusAutomorphism) -> bool {
        let pp = &self.pp;
        let conj = self.matrix.inverse_sl2().mul(&a.reduce(pp)).mul(&self.matrix);
        let y_inv = inv_mod(self.eigenvalue, pp).unwrap_or(0);
        self.matrix.det() == 1 && conj.entries == [[self.eigenvalue, 0], [0, y_inv]]
    }

    /// The `beta` with `M^{-1} iota(beta) M = diag(x, x^{-1})`.
    pub fn element_for_unit(&self, ring: &QuadraticOrder, x: u64) -> Result<OrderElement> {
        let pp = &self.pp;
        let x_inv = inv_mod(x, pp)?;
        let y = self.eigenvalue;
        let spread = pp.sub(y, inv_mod(y, pp)?);
        let b = pp.mul(pp.sub(x, x_inv), inv_mod(spread, pp)?);
        let a = pp.sub(x, pp.mul(b, y));
        let beta = OrderElement::new(a, b);
        debug_assert_eq!(ring.norm(beta), 1);
        Ok(beta)
    }
}

/// Level of a character index in the split case: `0` for the trivial
/// character, else the least `l >= 1` with `p^{k-l} | j`.
pub fn split_level(j: u64, pp: &PrimePower) -> u32 {
    if j == 0 {
        return 0;
    }
    let k = pp.k();
    (1..=k).find(|&l| j.is_multiple_of(pp.power(k - l))).unwrap_or(k)
}

fn require_split(group: &HeckeGroup) -> Result<()> {
    if group.kind() != PrimeKind::Split {
        return Err(Error::NotSplit { p: group.prime_power().p() });
    }
    Ok(())
}

/// `chi~(y) = chi(y)` on units, zero elsewhere, under `C(p^k) = (Z/p^k)^*`.
pub fn unit_character_state(group: &HeckeGroup, diag: &SplitDiagonalizer, chi: &HeckeCharacter) -> Result<StateVector> {
    require_split(group)?;
    let pp = group.prime_power();
    let amps = (0..pp.modulus())
        .map(|y| {
            if !pp.is_unit(y) {
                return Ok(Complex64::new(0.0, 0.0));
            }
            let beta = diag.element_for_unit(group.ring(), y)?;
            let d = group.dlog(beta).ok_or_else(|| Error::Numerical(format!("{beta:?} is not in the group")))?;
            Ok(chi.value(d))
        })
        .collect::<Result<Vec<_>>>()?;
    StateVector::new(pp, amps)
}

/// The normalized joint eigenfunction `U~(M) chi~`.
pub fn split_eigenfunction(group: &HeckeGroup, diag: &SplitDiagonalizer, chi: &HeckeCharacter) -> Result<StateVector> {
    let chi_tilde = unit_character_state(group, diag, chi)?;
    apply_propagator(diag.matrix(), &chi_tilde)?.normalized()
}

/// `<T~(n) psi, psi>` for `psi = U~(M) chi~ / |chi~|`, evaluated as
/// `<T~(nM) chi~, chi~> / |chi~|^2` without building `psi`.
pub fn split_twisted_element(diag: &SplitDiagonalizer, chi_tilde: &StateVector, n: (i64, i64)) -> Complex64 {
    let pp = chi_tilde.prime_power();
    let image = diag.matrix().act((pp.reduce(n.0), pp.reduce(n.1)));
    let norm_sq = chi_tilde.norm().powi(2);
    twisted_element((image.0 as i64, image.1 as i64), chi_tilde) / norm_sq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hecke::hecke_operator;
    use crate::quantization::{apply_twisted, inner_product};

    fn setup(p: u64, k: u32) -> (HeckeGroup, SplitDiagonalizer) {
        let a = TorusAutomorphism::standard();
        let pp = PrimePower::new(p, k).unwrap();
        (HeckeGroup::build(&a, pp).unwrap(), SplitDiagonalizer::new(&a, pp).unwrap())
    }

    #[test]
    fn diagonalizer_is_valid() {
        let a = TorusAutomorphism::standard();
        for (p, k) in [(11u64, 1u32), (11, 2), (19, 3), (101, 2)] {
            let diag = SplitDiagonalizer::new(&a, PrimePower::new(p, k).unwrap()).unwrap();
            assert!(diag.diagonalizes(&a));
            let pp = PrimePower::new(p, k).unwrap();
            let y = diag.eigenvalue();
            assert_eq!(pp.add(y, inv_mod(y, &pp).unwrap()), pp.reduce(a.trace()));
        }
        assert!(matches!(SplitDiagonalizer::new(&a, PrimePower::new(3, 2).unwrap()), Err(Error::NotSplit { .. })));
    }

    #[test]
    fn unit_elements_lie_in_group() {
        let (g, diag) = setup(11, 2);
        for x in (1..121).filter(|x| x % 11 != 0) {
            let beta = diag.element_for_unit(g.ring(), x).unwrap();
            assert!(g.contains(beta));
            let conj = diag.matrix().inverse_sl2().mul(&g.iota(beta)).mul(diag.matrix());
            let pp = g.prime_power();
            assert_eq!(conj.entries, [[x, 0], [0, inv_mod(x, &pp).unwrap()]]);
        }
    }

    #[test]
    fn eigenfunctions_are_joint_eigenvectors() {
        for (p, k) in [(11u64, 1u32), (11, 2)] {
            let (g, diag) = setup(p, k);
            let u = hecke_operator(&g, g.generator()).unwrap();
            for j in [0u64, 1, 3, g.order() - 1] {
                let psi = split_eigenfunction(&g, &diag, &g.character(j)).unwrap();
                assert!((psi.norm() - 1.0).abs() < 1e-12);
                let image = u.apply(&psi).unwrap();
                let lambda = inner_product(&image, &psi).unwrap();
                let residual: f64 = image
                    .amplitudes()
                    .iter()
                    .zip(psi.amplitudes())
                    .map(|(a, b)| (a - lambda * b).norm_sqr())
                    .sum::<f64>()
                    / psi.dim() as f64;
                assert!(residual.sqrt() < 1e-7, "p={p} k={k} j={j}");
            }
        }
    }

    #[test]
    fn egorov_frame_matches_direct_elements() {
        let (g, diag) = setup(11, 2);
        for j in [1u64, 7, 50] {
            let chi = g.character(j);
            let chi_tilde = unit_character_state(&g, &diag, &chi).unwrap();
            let psi = split_eigenfunction(&g, &diag, &chi).unwrap();
            for n in [(1, 0), (0, 1), (1, 2), (3, -1)] {
                let direct = inner_product(&apply_twisted(n, &psi), &psi).unwrap();
                let framed = split_twisted_element(&diag, &chi_tilde, n);
                assert!((direct - framed).norm() < 1e-10, "j={j} n={n:?}");
            }
            assert!((chi_tilde.norm().powi(2) - 10.0 / 11.0).abs() < 1e-12);
        }
    }
}
