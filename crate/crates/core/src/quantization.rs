//! The Hilbert space `L^2(Z/NZ)`, elementary operators and the propagator.
//!
//! Conventions: `n = (n1, n2)` acts as a row vector, so `n -> nB`. The twisted
//! operators satisfy `T(a) T(b) = e_N(omega(a, b) / 2) T(a + b)` and depend on
//! `n` only modulo `N`.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modarith::{self, inv_mod_raw, valuation, LinearSolver, PrimePower, RootTable};

/// Largest dimension for which dense operators are built.
pub const DENSE_CAP: u64 = 8192;

/// Largest modulus for which [`kernel_size`] counts the kernel exhaustively.
pub const KERNEL_EXHAUSTIVE_LIMIT: u64 = 1000;

/// A hyperbolic matrix in `SL(2, Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusAutomorphism {
    a: i64,
    b: i64,
    c: i64,
    d: i64,
}

impl TorusAutomorphism {
    pub fn new(a: i64, b: i64, c: i64, d: i64) -> Result<Self> {
        let det = a * d - b * c;
        if det != 1 {
            return Err(Error::NotUnimodular { a, b, c, d, det });
        }
        let trace = a + d;
        if trace.abs() <= 2 {
            return Err(Error::NotHyperbolic { trace });
        }
        Ok(Self { a, b, c, d })
    }

    /// `[[2, 1], [1, 1]]`.
    pub fn standard() -> Self {
        Self { a: 2, b: 1, c: 1, d: 1 }
    }

    pub fn entries(&self) -> [i64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn trace(&self) -> i64 {
        self.a + self.d
    }

    /// `D = t^2 - 4`.
    pub fn discriminant(&self) -> i64 {
        self.trace() * self.trace() - 4
    }

    /// The row vector `nA`.
    pub fn act(&self, n: (i64, i64)) -> (i64, i64) {
        (n.0 * self.a + n.1 * self.c, n.0 * self.b + n.1 * self.d)
    }

    /// `Q(n) = omega(nA, n)`.
    pub fn quadratic_form(&self, n: (i64, i64)) -> i64 {
        omega(self.act(n), n)
    }

    pub fn reduce(&self, pp: &PrimePower) -> ResidueMatrix {
        ResidueMatrix::from_integers([[self.a, self.b], [self.c, self.d]], pp)
    }
}

impl std::fmt::Display for TorusAutomorphism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.a, self.b, self.c, self.d)
    }
}

/// `omega(n, m) = n1 m2 - n2 m1`.
pub fn omega(n: (i64, i64), m: (i64, i64)) -> i64 {
    n.0 * m.1 - n.1 * m.0
}

/// A 2x2 matrix over `Z/NZ`, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ResidueMatrix {
    pub entries: [[u64; 2]; 2],
    pub modulus: u64,
}

impl ResidueMatrix {
    pub fn new(entries: [[u64; 2]; 2], pp: &PrimePower) -> Self {
        let m = pp.modulus();
        let entries = entries.map(|row| row.map(|x| x % m));
        Self { entries, modulus: m }
    }

    pub fn from_integers(entries: [[i64; 2]; 2], pp: &PrimePower) -> Self {
        let m = pp.modulus();
        Self { entries: entries.map(|row| row.map(|x| modarith::reduce(x, m))), modulus: m }
    }

    pub fn identity(pp: &PrimePower) -> Self {
        Self::new([[1, 0], [0, 1]], pp)
    }

    pub fn scalar(s: u64, pp: &PrimePower) -> Self {
        Self::new([[s, 0], [0, s]], pp)
    }

    fn mm(&self, x: u64, y: u64) -> u64 {
        modarith::mul_mod(x, y, self.modulus)
    }

    pub fn mul(&self, other: &Self) -> Self {
        let m = self.modulus;
        let [[a, b], [c, d]] = self.entries;
        let [[e, f], [g, h]] = other.entries;
        let add = |x: u64, y: u64| (x + y) % m;
        Self {
            entries: [
                [add(self.mm(a, e), self.mm(b, g)), add(self.mm(a, f), self.mm(b, h))],
                [add(self.mm(c, e), self.mm(d, g)), add(self.mm(c, f), self.mm(d, h))],
            ],
            modulus: m,
        }
    }

    pub fn det(&self) -> u64 {
        let [[a, b], [c, d]] = self.entries;
        (self.mm(a, d) + self.modulus - self.mm(b, c)) % self.modulus
    }

    pub fn trace(&self) -> u64 {
        (self.entries[0][0] + self.entries[1][1]) % self.modulus
    }

    /// Inverse of a matrix with determinant one.
    pub fn inverse_sl2(&self) -> Self {
        let m = self.modulus;
        let [[a, b], [c, d]] = self.entries;
        Self { entries: [[d, (m - b) % m], [(m - c) % m, a]], modulus: m }
    }

    pub fn sub_identity(&self) -> Self {
        let m = self.modulus;
        let [[a, b], [c, d]] = self.entries;
        Self { entries: [[(a + m - 1) % m, b], [c, (d + m - 1) % m]], modulus: m }
    }

    pub fn is_identity(&self) -> bool {
        self.entries == [[1 % self.modulus, 0], [0, 1 % self.modulus]]
    }

    /// The row vector `nB`.
    pub fn act(&self, n: (u64, u64)) -> (u64, u64) {
        let m = self.modulus;
        let [[a, b], [c, d]] = self.entries;
        ((self.mm(n.0, a) + self.mm(n.1, c)) % m, (self.mm(n.0, b) + self.mm(n.1, d)) % m)
    }
}

/// A state in `L^2(Z/NZ)` with inner product `(1/N) sum phi(y) conj(psi(y))`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pp: PrimePower,
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn new(pp: PrimePower, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() as u64 != pp.modulus() {
            return Err(Error::DimensionMismatch { left: amps.len(), right: pp.modulus() as usize });
        }
        Ok(Self { pp, amps })
    }

    pub fn zeros(pp: PrimePower) -> Self {
        Self { pp, amps: vec![Complex64::new(0.0, 0.0); pp.modulus() as usize] }
    }

    /// The point mass at `y`, scaled to unit norm.
    pub fn delta(pp: PrimePower, y: u64) -> Self {
        let mut v = Self::zeros(pp);
        v.amps[(y % pp.modulus()) as usize] = Complex64::new((pp.modulus() as f64).sqrt(), 0.0);
        v
    }

    pub fn prime_power(&self) -> PrimePower {
        self.pp
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        let sum: f64 = self.amps.iter().map(|z| z.norm_sqr()).sum();
        (sum / self.amps.len() as f64).sqrt()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let norm = self.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::NotNormalized { norm });
        }
        for z in &mut self.amps {
            *z /= norm;
        }
        Ok(self)
    }

    pub fn scale(&mut self, s: Complex64) {
        for z in &mut self.amps {
            *z *= s;
        }
    }
}

pub fn inner_product(phi: &StateVector, psi: &StateVector) -> Result<Complex64> {
    if phi.dim() != psi.dim() {
        return Err(Error::DimensionMismatch { left: phi.dim(), right: psi.dim() });
    }
    let sum: Complex64 = phi.amps.iter().zip(&psi.amps).map(|(a, b)| a * b.conj()).sum();
    Ok(sum / phi.dim() as f64)
}

fn twisted_phase_exponent(n: (i64, i64), pp: &PrimePower) -> (u64, u64, u64) {
    let m = pp.modulus();
    let n1 = modarith::reduce(n.0, m);
    let n2 = modarith::reduce(n.1, m);
    let c = pp.mul(pp.half(), pp.mul(n1, n2));
    (n1, n2, c)
}

/// `(T(n) psi)(y) = e_{2N}(n1 n2) e_N(n2 y) psi(y + n1)`.
pub fn apply_elementary(n: (i64, i64), psi: &StateVector) -> StateVector {
    let pp = psi.pp;
    let m = pp.modulus();
    let two_n = 2 * m;
    let prefactor =
        modarith::e_n(modarith::reduce(n.0, two_n) as i64 * modarith::reduce(n.1, two_n) as i64 % two_n as i64, two_n);
    let n1 = modarith::reduce(n.0, m);
    let n2 = modarith::reduce(n.1, m);
    let amps = (0..m)
        .map(|y| {
            let phase = modarith::e_n(pp.mul(n2, y) as i64, m);
            prefactor * phase * psi.amps[((y + n1) % m) as usize]
        })
        .collect();
    StateVector { pp, amps }
}

/// `(-1)^{n1 n2} T(n)`, which equals `e_N(n1 n2 / 2) e_N(n2 y) psi(y + n1)`.
pub fn apply_twisted(n: (i64, i64), psi: &StateVector) -> StateVector {
    let pp = psi.pp;
    let m = pp.modulus();
    let (n1, n2, c) = twisted_phase_exponent(n, &pp);
    let amps = (0..m)
        .map(|y| {
            let phase = modarith::e_n(((c + pp.mul(n2, y)) % m) as i64, m);
            phase * psi.amps[((y + n1) % m) as usize]
        })
        .collect();
    StateVector { pp, amps }
}

/// `<T(n) psi, psi>` for a normalized state.
pub fn matrix_element(n: (i64, i64), psi: &StateVector) -> Result<Complex64> {
    let norm = psi.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized { norm });
    }
    inner_product(&apply_elementary(n, psi), psi)
}

/// Twisted matrix element `<T~(n) psi, psi>`; no normalization check.
pub fn twisted_element(n: (i64, i64), psi: &StateVector) -> Complex64 {
    let pp = psi.pp;
    let m = pp.modulus();
    let (n1, n2, c) = twisted_phase_exponent(n, &pp);
    let roots = RootTable::new(m);
    let sum: Complex64 = (0..m)
        .map(|y| roots.get(c + pp.mul(n2, y)) * psi.amps[((y + n1) % m) as usize] * psi.amps[y as usize].conj())
        .sum();
    sum / m as f64
}

/// A trigonometric polynomial on the torus given by its Fourier coefficients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FourierObservable {
    coeffs: BTreeMap<(i64, i64), Complex64>,
    real: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct CoefficientRecord {
    n1: i64,
    n2: i64,
    re: f64,
    im: f64,
}

impl FourierObservable {
    pub fn new(coeffs: impl IntoIterator<Item = ((i64, i64), Complex64)>) -> Self {
        let mut map = BTreeMap::new();
        for (n, c) in coeffs {
            *map.entry(n).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        let real = conjugate_symmetric(&map).is_ok();
        Self { coeffs: map, real }
    }

    pub fn constant(c: f64) -> Self {
        Self::new([((0, 0), Complex64::new(c, 0.0))])
    }

    /// `amp * (e(n.x) + e(-n.x)) / 2`, i.e. `amp * cos(2 pi n.x)`.
    pub fn cosine(n: (i64, i64), amp: f64) -> Self {
        let half = Complex64::new(amp / 2.0, 0.0);
        Self::new([(n, half), ((-n.0, -n.1), half)])
    }

    pub fn coefficients(&self) -> &BTreeMap<(i64, i64), Complex64> {
        &self.coeffs
    }

    pub fn coefficient(&self, n: (i64, i64)) -> Complex64 {
        self.coeffs.get(&n).copied().unwrap_or_default()
    }

    /// Phase-space average, i.e. the zero coefficient.
    pub fn mean(&self) -> Complex64 {
        self.coefficient((0, 0))
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn require_real(&self) -> Result<()> {
        conjugate_symmetric(&self.coeffs)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let records: Vec<CoefficientRecord> =
            serde_json::from_str(text).map_err(|e| Error::Observable(e.to_string()))?;
        if records.iter().any(|r| !r.re.is_finite() || !r.im.is_finite()) {
            return Err(Error::Observable("non-finite coefficient".into()));
        }
        Ok(Self::new(records.into_iter().map(|r| ((r.n1, r.n2), Complex64::new(r.re, r.im)))))
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let records: Vec<CoefficientRecord> =
            self.coeffs.iter().map(|(&(n1, n2), c)| CoefficientRecord { n1, n2, re: c.re, im: c.im }).collect();
        serde_json::to_string(&records).expect("coefficient records serialize")
    }
}

fn conjugate_symmetric(map: &BTreeMap<(i64, i64), Complex64>) -> Result<()> {
    const TOL: f64 = 1e-12;
    for (&n, &c) in map {
        let partner = map.get(&(-n.0, -n.1)).copied().unwrap_or_default();
        if (partner - c.conj()).norm() > TOL * (1.0 + c.norm()) {
            return Err(Error::NotReal { n });
        }
    }
    Ok(())
}

/// A dense `N x N` complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    pp: PrimePower,
    dim: usize,
    data: Vec<Complex64>,
}

impl DenseOperator {
    pub fn zeros(pp: PrimePower) -> Result<Self> {
        check_cap(&pp)?;
        let dim = pp.modulus() as usize;
        Ok(Self { pp, dim, data: vec![Complex64::new(0.0, 0.0); dim * dim] })
    }

    pub fn identity(pp: PrimePower) -> Result<Self> {
        let mut op = Self::zeros(pp)?;
        for i in 0..op.dim {
            op.data[i * op.dim + i] = Complex64::new(1.0, 0.0);
        }
        Ok(op)
    }

    pub fn from_fn(pp: PrimePower, f: impl Fn(usize, usize) -> Complex64) -> Result<Self> {
        let mut op = Self::zeros(pp)?;
        let dim = op.dim;
        for (idx, z) in op.data.iter_mut().enumerate() {
            *z = f(idx / dim, idx % dim);
        }
        Ok(op)
    }

    pub fn prime_power(&self) -> PrimePower {
        self.pp
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.dim + col]
    }

    pub fn row(&self, row: usize) -> &[Complex64] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        if psi.dim() != self.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: psi.dim() });
        }
        let amps = (0..self.dim).map(|i| self.row(i).iter().zip(&psi.amps).map(|(a, b)| a * b).sum()).collect();
        Ok(StateVector { pp: self.pp, amps })
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut data = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.data[i * n + j].conj();
            }
        }
        Self { pp: self.pp, dim: n, data }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: other.dim });
        }
        let n = self.dim;
        let mut data = vec![Complex64::new(0.0, 0.0); n * n];
        let row_product = |(i, out): (usize, &mut [Complex64])| {
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (o, &b) in out.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            data.par_chunks_mut(n).enumerate().for_each(row_product);
        }
        #[cfg(not(feature = "parallel"))]
        data.chunks_mut(n).enumerate().for_each(row_product);
        Ok(Self { pp: self.pp, dim: n, data })
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// `max |U U* - I|` entrywise.
    pub fn unitarity_defect(&self) -> f64 {
        let prod = self.matmul(&self.adjoint()).expect("square");
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod.get(i, j) - target).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let n = self.dim;
        (0..n).all(|i| (0..n).all(|j| (self.get(i, j) - self.get(j, i).conj()).norm() <= tol))
    }

    /// `T~(n) * self`.
    pub fn left_twisted(&self, n: (i64, i64)) -> Self {
        let m = self.pp.modulus();
        let (n1, n2, c) = twisted_phase_exponent(n, &self.pp);
        let roots = RootTable::new(m);
        let dim = self.dim;
        let mut data = Vec::with_capacity(dim * dim);
        for y in 0..m {
            let phase = roots.get(c + self.pp.mul(n2, y));
            data.extend(self.row(((y + n1) % m) as usize).iter().map(|z| phase * z));
        }
        Self { pp: self.pp, dim, data }
    }

    /// `self* T~(n) self`.
    pub fn conjugate_twisted(&self, n: (i64, i64)) -> Self {
        self.adjoint().matmul(&self.left_twisted(n)).expect("square")
    }

    pub fn scaled(mut self, s: Complex64) -> Self {
        for z in &mut self.data {
            *z *= s;
        }
        self
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn check_cap(pp: &PrimePower) -> Result<()> {
    if pp.modulus() > DENSE_CAP {
        return Err(Error::TooLarge { n: pp.modulus(), cap: DENSE_CAP });
    }
    Ok(())
}

/// Dense matrix of `T(n)`.
pub fn elementary_operator(n: (i64, i64), pp: PrimePower) -> Result<DenseOperator> {
    let mut op = DenseOperator::zeros(pp)?;
    let m = pp.modulus();
    let n1 = modarith::reduce(n.0, m);
    let mut basis = StateVector::zeros(pp);
    basis.amps.fill(Complex64::new(1.0, 0.0));
    let phases = apply_elementary(n, &basis);
    for y in 0..m {
        op.data[(y * m + (y + n1) % m) as usize] = phases.amps[y as usize];
    }
    Ok(op)
}

/// Dense matrix of `T~(n)`.
pub fn twisted_operator(n: (i64, i64), pp: PrimePower) -> Result<DenseOperator> {
    let identity = DenseOperator::identity(pp)?;
    Ok(identity.left_twisted(n))
}

/// `Op_N(f) = sum f(n) T(n)`.
pub fn op_of_observable(f: &FourierObservable, pp: PrimePower) -> Result<DenseOperator> {
    let mut op = DenseOperator::zeros(pp)?;
    for (&n, &c) in f.coefficients() {
        if c == Complex64::new(0.0, 0.0) {
            continue;
        }
        op.add_assign(&elementary_operator(n, pp)?.scaled(c));
    }
    Ok(op)
}

/// `#{m in (Z/NZ)^2 : m(B - I) = 0}`.
pub fn kernel_size(b: &ResidueMatrix, pp: &PrimePower) -> u64 {
    if pp.modulus() <= KERNEL_EXHAUSTIVE_LIMIT {
        kernel_size_exhaustive(b, pp)
    } else {
        kernel_size_smith(b, pp)
    }
}

pub fn kernel_size_exhaustive(b: &ResidueMatrix, pp: &PrimePower) -> u64 {
    let r = b.sub_identity();
    let m = pp.modulus();
    let mut count = 0;
    for m1 in 0..m {
        for m2 in 0..m {
            if r.act((m1, m2)) == (0, 0) {
                count += 1;
            }
        }
    }
    count
}

/// Kernel size from the Smith normal form of `B - I` over `Z/p^k`.
pub fn kernel_size_smith(b: &ResidueMatrix, pp: &PrimePower) -> u64 {
    let r = b.sub_identity().entries;
    let k = pp.k();
    let m = pp.modulus();
    let p = pp.p();
    let val = |x: u64| valuation(x % m, p).map_or(k, |v| v.min(k));
    let mut pivot = (0, 0);
    for i in 0..2 {
        for j in 0..2 {
            if val(r[i][j]) < val(r[pivot.0][pivot.1]) {
                pivot = (i, j);
            }
        }
    }
    let v1 = val(r[pivot.0][pivot.1]);
    if v1 == k {
        return m * m;
    }
    let (i, j) = pivot;
    let (oi, oj) = (1 - i, 1 - j);
    let unit = r[i][j] / p.pow(v1);
    let unit_inv = inv_mod_raw(unit, m).expect("unit part is invertible");
    // r' = r[oi][oj] - r[oi][j] * r[i][oj] / r[i][j]
    let quotient = modarith::mul_mod(r[oi][j] / p.pow(v1), unit_inv, m);
    let correction = modarith::mul_mod(quotient, r[i][oj], m);
    let rest = (r[oi][oj] + m - correction) % m;
    let v2 = val(rest);
    p.pow(v1 + v2)
}

/// Phase exponent bookkeeping for `sum_m T~(m) T~(-mB)`.
struct PropagatorKernel {
    pp: PrimePower,
    b: ResidueMatrix,
    half: u64,
    iterate_second: bool,
    solver: LinearSolver,
    other_coeff: u64,
}

impl PropagatorKernel {
    fn new(b: &ResidueMatrix, pp: &PrimePower) -> Self {
        let m = pp.modulus();
        let [[b00, _], [b10, _]] = b.entries;
        // First component of w = m(I - B): m1 (1 - b00) - m2 b10.
        let u1 = (m + 1 - b00) % m;
        let u2 = (m - b10) % m;
        let v = |x: u64| valuation(x, pp.p()).unwrap_or(u32::MAX);
        let iterate_second = v(u1) <= v(u2);
        let (solve_coeff, other_coeff) = if iterate_second { (u1, u2) } else { (u2, u1) };
        Self {
            pp: *pp,
            b: *b,
            half: pp.half(),
            iterate_second,
            solver: LinearSolver::new(solve_coeff, pp),
            other_coeff,
        }
    }

    /// Calls `f(w2, K_m)` for every `m` whose `w1` equals `s`.
    fn for_each_in_row(&self, s: u64, mut f: impl FnMut(u64, u64)) {
        let pp = &self.pp;
        let m = pp.modulus();
        for free in 0..m {
            let rhs = pp.sub(s, pp.mul(self.other_coeff, free));
            self.solver.for_each_solution(rhs, |solved| {
                let (m1, m2) = if self.iterate_second { (solved, free) } else { (free, solved) };
                let image = self.b.act((m1, m2));
                let (q1, q2) = (pp.neg(image.0), pp.neg(image.1));
                let w2 = pp.add(m2, q2);
                let exponent = pp.add(pp.mul(self.half, pp.add(pp.mul(m1, m2), pp.mul(q1, q2))), pp.mul(m1, q2));
                f(w2, exponent);
            });
        }
    }
}

fn check_det(b: &ResidueMatrix, pp: &PrimePower) -> Result<()> {
    let det = b.det();
    if det != 1 % pp.modulus() {
        return Err(Error::DetNotOne { det, modulus: pp.modulus() });
    }
    Ok(())
}

/// `U~(B) = (|ker(B - I)|^{1/2} N)^{-1} sum_m T~(m) T~(-mB)`.
///
/// Built one off-diagonal `y -> y + s` at a time: the phases of all terms with
/// first shift component `s` are binned by their second component and an
/// inverse FFT turns the bins into the diagonal.
pub fn propagator(b: &ResidueMatrix, pp: PrimePower) -> Result<DenseOperator> {
    check_det(b, &pp)?;
    let mut op = DenseOperator::zeros(pp)?;
    let m = pp.modulus();
    let dim = m as usize;
    let kernel = PropagatorKernel::new(b, &pp);
    let roots = RootTable::new(m);
    let scale = 1.0 / (kernel_size(b, &pp) as f64).sqrt();
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(dim);

    let diagonal = |s: u64| -> Vec<Complex64> {
        let mut bins = vec![Complex64::new(0.0, 0.0); dim];
        kernel.for_each_in_row(s, |w2, exponent| bins[w2 as usize] += roots.get(exponent));
        fft.process(&mut bins);
        bins
    };

    const CHUNK: u64 = 64;
    let mut start = 0;
    while start < m {
        let end = (start + CHUNK).min(m);
        #[cfg(feature = "parallel")]
        let diagonals: Vec<Vec<Complex64>> = {
            use rayon::prelude::*;
            (start..end).into_par_iter().map(diagonal).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let diagonals: Vec<Vec<Complex64>> = (start..end).map(diagonal).collect();
        for (offset, diag) in diagonals.into_iter().enumerate() {
            let s = start as usize + offset;
            for (y, value) in diag.into_iter().enumerate() {
                op.data[y * dim + (y + s) % dim] = value * scale / m as f64;
            }
        }
        start = end;
    }
    Ok(op)
}

/// `U~(B) psi` without storing the matrix, one diagonal at a time.
pub fn apply_propagator(b: &ResidueMatrix, psi: &StateVector) -> Result<StateVector> {
    let pp = psi.pp;
    check_det(b, &pp)?;
    let m = pp.modulus();
    let dim = m as usize;
    let kernel = PropagatorKernel::new(b, &pp);
    let roots = RootTable::new(m);
    let scale = 1.0 / ((kernel_size(b, &pp) as f64).sqrt() * m as f64);
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(dim);
    let contribution = |s: u64| -> Vec<Complex64> {
        let mut bins = vec![Complex64::new(0.0, 0.0); dim];
        kernel.for_each_in_row(s, |w2, exponent| bins[w2 as usize] += roots.get(exponent));
        fft.process(&mut bins);
        let s = s as usize;
        bins.iter().enumerate().map(|(y, u)| u * psi.amps[(y + s) % dim]).collect()
    };
    let add = |mut acc: Vec<Complex64>, part: Vec<Complex64>| {
        for (a, b) in acc.iter_mut().zip(part) {
            *a += b;
        }
        acc
    };
    let zero = || vec![Complex64::new(0.0, 0.0); dim];
    #[cfg(feature = "parallel")]
    let mut amps = {
        use rayon::prelude::*;
        (0..m).into_par_iter().fold(zero, |acc, s| add(acc, contribution(s))).reduce(zero, add)
    };
    #[cfg(not(feature = "parallel"))]
    let mut amps = (0..m).fold(zero(), |acc, s| add(acc, contribution(s)));
    for z in &mut amps {
        *z *= scale;
    }
    Ok(StateVector { pp, amps })
}

/// `Tr U~(B)` without forming the matrix: `|ker|^{-1/2} sum_{m in ker} e_N(K_m)`.
pub fn propagator_trace(b: &ResidueMatrix, pp: &PrimePower) -> Result<Complex64> {
    check_det(b, pp)?;
    let m = pp.modulus();
    let kernel = PropagatorKernel::new(b, pp);
    let mut sum = Complex64::new(0.0, 0.0);
    let mut count = 0u64;
    kernel.for_each_in_row(0, |w2, exponent| {
        if w2 == 0 {
            sum += modarith::e_n(exponent as i64, m);
            count += 1;
        }
    });
    Ok(sum / (count as f64).sqrt())
}
