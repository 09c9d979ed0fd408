//! Exact arithmetic in `Z/p^kZ` for odd primes `p`.
//!
//! Residues are stored as `u64` in `[0, p^k)`; every product goes through
//! `u128`, so no modular quantity ever passes through floating point. The only
//! transcendental step is [`e_n`], which reduces its argument first.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest modulus accepted by [`PrimePower::new`].
pub const MAX_MODULUS: u64 = 1 << 40;

/// Cutoff below which [`sqrt_set`] searches exhaustively.
pub const SQRT_EXHAUSTIVE_LIMIT: u64 = 10_000;

/// An odd prime power `N = p^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrimePower {
    p: u64,
    k: u32,
    modulus: u64,
}

impl PrimePower {
    pub fn new(p: u64, k: u32) -> Result<Self> {
        if p == 2 {
            return Err(Error::EvenPrime);
        }
        if p < 3 || !is_prime(p) {
            return Err(Error::InvalidPrime { p });
        }
        if k == 0 {
            return Err(Error::InvalidExponent);
        }
        let modulus = p.checked_pow(k).filter(|&n| n <= MAX_MODULUS).ok_or(Error::ModulusTooLarge { p, k })?;
        Ok(Self { p, k, modulus })
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// `N = p^k`.
    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// `p^l` for `l <= k`.
    pub fn power(&self, l: u32) -> u64 {
        debug_assert!(l <= self.k);
        self.p.pow(l)
    }

    /// The same prime with a different exponent.
    pub fn with_exponent(&self, l: u32) -> Result<Self> {
        Self::new(self.p, l)
    }

    pub fn reduce(&self, a: i64) -> u64 {
        reduce(a, self.modulus)
    }

    pub fn mul(&self, a: u64, b: u64) -> u64 {
        mul_mod(a, b, self.modulus)
    }

    pub fn add(&self, a: u64, b: u64) -> u64 {
        ((a as u128 + b as u128) % self.modulus as u128) as u64
    }

    pub fn sub(&self, a: u64, b: u64) -> u64 {
        let m = self.modulus;
        (a % m + m - b % m) % m
    }

    pub fn neg(&self, a: u64) -> u64 {
        self.sub(0, a)
    }

    pub fn is_unit(&self, a: u64) -> bool {
        !a.is_multiple_of(self.p)
    }

    /// Inverse of 2, i.e. `(N + 1) / 2`.
    pub fn half(&self) -> u64 {
        self.modulus.div_ceil(2)
    }
}

impl std::fmt::Display for PrimePower {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}^{}", self.p, self.k)
    }
}

pub fn reduce(a: i64, m: u64) -> u64 {
    (a as i128).rem_euclid(m as i128) as u64
}

pub fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

pub fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    if m == 1 {
        return 0;
    }
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Inverse modulo an arbitrary modulus, `None` when `gcd(a, m) != 1`.
pub fn inv_mod_raw(a: u64, m: u64) -> Option<u64> {
    let (mut old_r, mut r) = ((a % m) as i128, m as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    if old_r != 1 {
        return None;
    }
    Some(old_s.rem_euclid(m as i128) as u64)
}

/// `a^{-1} mod p^k`.
pub fn inv_mod(a: u64, pp: &PrimePower) -> Result<u64> {
    let m = pp.modulus();
    if pp.modulus() == 1 {
        return Ok(0);
    }
    inv_mod_raw(a % m, m).ok_or(Error::NonUnit { a: a % m, modulus: m })
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n.is_multiple_of(2) {
        return n == 2;
    }
    let mut d = 3u64;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

/// Distinct prime factors of `n`, ascending.
pub fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut d = 2u64;
    while d * d <= n {
        if n.is_multiple_of(d) {
            out.push(d);
            while n.is_multiple_of(d) {
                n /= d;
            }
        }
        d += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// p-adic valuation; `None` for zero.
pub fn valuation(a: u64, p: u64) -> Option<u32> {
    if a == 0 {
        return None;
    }
    let mut v = 0;
    let mut a = a;
    while a.is_multiple_of(p) {
        a /= p;
        v += 1;
    }
    Some(v)
}

/// Legendre symbol via Euler's criterion.
pub fn legendre(a: i64, p: u64) -> i8 {
    let a = reduce(a, p);
    if a == 0 {
        return 0;
    }
    if pow_mod(a, (p - 1) / 2, p) == 1 {
        1
    } else {
        -1
    }
}

/// A square root of the quadratic residue `a` modulo the odd prime `p`.
pub fn tonelli_shanks(a: u64, p: u64) -> Option<u64> {
    let a = a % p;
    if a == 0 {
        return Some(0);
    }
    if legendre(a as i64, p) != 1 {
        return None;
    }
    if p % 4 == 3 {
        return Some(pow_mod(a, (p + 1) / 4, p));
    }
    let mut q = p - 1;
    let mut s = 0u32;
    while q.is_multiple_of(2) {
        q /= 2;
        s += 1;
    }
    let z = (2..p).find(|&z| legendre(z as i64, p) == -1)?;
    let mut m = s;
    let mut c = pow_mod(z, q, p);
    let mut t = pow_mod(a, q, p);
    let mut r = pow_mod(a, q.div_ceil(2), p);
    while t != 1 {
        let mut i = 0u32;
        let mut t2 = t;
        while t2 != 1 {
            t2 = mul_mod(t2, t2, p);
            i += 1;
        }
        let b = pow_mod(c, 1u64 << (m - i - 1), p);
        m = i;
        c = mul_mod(b, b, p);
        t = mul_mod(t, c, p);
        r = mul_mod(r, b, p);
    }
    Some(r)
}

/// `Sq(nu, p^l) = {x mod p^l : x^2 = nu}`, sorted ascending.
pub fn sqrt_set(nu: i64, p: u64, l: u32) -> Vec<u64> {
    if l == 0 {
        return vec![0];
    }
    if p.pow(l) <= SQRT_EXHAUSTIVE_LIMIT {
        sqrt_set_exhaustive(nu, p, l)
    } else {
        sqrt_set_hensel(nu, p, l)
    }
}

pub fn sqrt_set_exhaustive(nu: i64, p: u64, l: u32) -> Vec<u64> {
    let m = p.pow(l);
    let nu = reduce(nu, m);
    (0..m).filter(|&x| mul_mod(x, x, m) == nu).collect()
}

/// Tonelli–Shanks modulo `p`, Hensel lifting to `p^l`, and reduction of the
/// non-unit case `nu = p^a u` to the unit case.
pub fn sqrt_set_hensel(nu: i64, p: u64, l: u32) -> Vec<u64> {
    let m = p.pow(l);
    let nu = reduce(nu, m);
    let Some(a) = valuation(nu, p) else {
        // nu = 0: x = p^ceil(l/2) * z for every z mod p^floor(l/2).
        let step = p.pow(l.div_ceil(2));
        return (0..p.pow(l / 2)).map(|z| z * step).collect();
    };
    if a % 2 == 1 {
        return Vec::new();
    }
    let unit = nu / p.pow(a);
    let rest = l - a;
    let Some(z0) = hensel_lift(unit, p, rest) else {
        return Vec::new();
    };
    let half = a / 2;
    let scale = p.pow(half);
    let lift_mod = p.pow(rest);
    let lifts = p.pow(half);
    let mut out = Vec::with_capacity(2 * lifts as usize);
    for root in [z0, (lift_mod - z0) % lift_mod] {
        for j in 0..lifts {
            let z = root + j * lift_mod;
            out.push(mul_mod(z, scale, m));
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// A root of `z^2 = u` modulo `p^e` for a unit `u`.
fn hensel_lift(u: u64, p: u64, e: u32) -> Option<u64> {
    let mut z = tonelli_shanks(u % p, p)?;
    let mut modulus = p;
    for _ in 1..e {
        modulus *= p;
        let f = (mul_mod(z, z, modulus) as i128 - (u % modulus) as i128).rem_euclid(modulus as i128) as u64;
        let inv = inv_mod_raw(mul_mod(2, z, modulus), modulus)?;
        z = (z as i128 - mul_mod(f, inv, modulus) as i128).rem_euclid(modulus as i128) as u64;
    }
    Some(z)
}

/// `e_n(x) = exp(2 pi i x / n)` with `x` reduced modulo `n` first.
pub fn e_n(x: i64, n: u64) -> Complex64 {
    let r = reduce(x, n);
    Complex64::from_polar(1.0, TAU * (r as f64) / (n as f64))
}

/// `e(num / den)` for an already reduced numerator.
pub fn e_frac(num: u128, den: u128) -> Complex64 {
    let r = num % den;
    Complex64::from_polar(1.0, TAU * (r as f64 / den as f64))
}

/// Tabulated `e_n(x)` for all `x mod n`.
#[derive(Debug, Clone)]
pub struct RootTable {
    n: u64,
    table: Vec<Complex64>,
}

impl RootTable {
    pub fn new(n: u64) -> Self {
        let table = (0..n).map(|x| Complex64::from_polar(1.0, TAU * (x as f64) / (n as f64))).collect();
        Self { n, table }
    }

    pub fn modulus(&self) -> u64 {
        self.n
    }

    #[inline]
    pub fn get(&self, x: u64) -> Complex64 {
        self.table[(x % self.n) as usize]
    }
}

/// `sum_{y mod p} e_p(f y^2 + g y)` by direct summation.
pub fn gauss_quadratic(f: i64, g: i64, p: u64) -> Complex64 {
    let f = reduce(f, p);
    let g = reduce(g, p);
    (0..p)
        .map(|y| {
            let phase = (mul_mod(f, mul_mod(y, y, p), p) + mul_mod(g, y, p)) % p;
            e_n(phase as i64, p)
        })
        .sum()
}

/// All `x mod p^k` with `a x = b (mod p^k)`.
pub fn solve_linear(a: u64, b: u64, pp: &PrimePower) -> Vec<u64> {
    LinearSolver::new(a, pp).solve(b)
}

/// Precomputed solver for `a x = b (mod p^k)` with fixed `a`.
#[derive(Debug, Clone)]
pub struct LinearSolver {
    modulus: u64,
    gcd: u64,
    reduced_modulus: u64,
    inverse: u64,
}

impl LinearSolver {
    pub fn new(a: u64, pp: &PrimePower) -> Self {
        let modulus = pp.modulus();
        let a = a % modulus;
        let gcd = match valuation(a, pp.p()) {
            None => modulus,
            Some(v) => pp.p().pow(v.min(pp.k())),
        };
        let reduced_modulus = modulus / gcd;
        let inverse = if reduced_modulus == 1 {
            0
        } else {
            inv_mod_raw((a / gcd) % reduced_modulus, reduced_modulus).unwrap_or(0)
        };
        Self { modulus, gcd, reduced_modulus, inverse }
    }

    /// Number of solutions of any solvable right-hand side.
    pub fn multiplicity(&self) -> u64 {
        self.gcd
    }

    pub fn for_each_solution(&self, b: u64, mut f: impl FnMut(u64)) {
        let b = b % self.modulus;
        if !b.is_multiple_of(self.gcd) {
            return;
        }
        let x0 = mul_mod(b / self.gcd, self.inverse, self.reduced_modulus);
        for j in 0..self.gcd {
            f(x0 + j * self.reduced_modulus);
        }
    }

    pub fn solve(&self, b: u64) -> Vec<u64> {
        let mut out = Vec::new();
        self.for_each_solution(b, |x| out.push(x));
        out
    }
}
