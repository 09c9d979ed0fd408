use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{p} is not an odd prime")]
    InvalidPrime { p: u64 },
    #[error("exponent must be at least 1")]
    InvalidExponent,
    #[error("{p}^{k} does not fit in the supported modulus range")]
    ModulusTooLarge { p: u64, k: u32 },
    #[error("{a} is not a unit modulo {modulus}")]
    NonUnit { a: u64, modulus: u64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("matrix [[{a}, {b}], [{c}, {d}]] is not in SL(2, Z): determinant {det}")]
    NotUnimodular { a: i64, b: i64, c: i64, d: i64, det: i64 },
    #[error("matrix with trace {trace} is not hyperbolic (|trace| must exceed 2)")]
    NotHyperbolic { trace: i64 },
    #[error("matrix has determinant {det} modulo {modulus}, expected 1")]
    DetNotOne { det: u64, modulus: u64 },
    #[error("state is not normalized (norm {norm})")]
    NotNormalized { norm: f64 },
    #[error("prime {p} is ramified (p divides D = {discriminant})")]
    Ramified { p: u64, discriminant: i64 },
    #[error("p = 2 is not supported")]
    EvenPrime,
    #[error("prime {p} is not split for this matrix")]
    NotSplit { p: u64 },
    #[error("x = {x} is a singular point of the parametrization (D x^2 = 1 mod p)")]
    SingularPoint { x: u64 },
    #[error("nu = {nu} is not a unit modulo p")]
    NonUnitNu { nu: i64 },
    #[error("closed-form evaluation needs k >= 2, got k = {k}")]
    KTooSmall { k: u32 },
    #[error("operation requires k = {expected}, got k = {k}")]
    WrongK { expected: u32, k: u32 },
    #[error("character {index} is not good for nu = {nu}")]
    BadCharacter { index: u64, nu: i64 },
    #[error("twisted frequency {nu} is divisible by p = {p}")]
    BadNu { nu: i64, p: u64 },
    #[error("empirical set is empty")]
    EmptySet,
    #[error("dimension {n} exceeds the dense operator cap {cap}")]
    TooLarge { n: u64, cap: u64 },
    #[error("observable is not real-valued: coefficient of {n:?} is not the conjugate of that of its negative")]
    NotReal { n: (i64, i64) },
    #[error("eigenvalue clustering found {found} clusters, expected {expected}")]
    ClusterMismatch { found: usize, expected: usize },
    #[error("no character matches eigenfunction with label {label}")]
    NoMatch { label: u64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid observable file: {0}")]
    Observable(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
