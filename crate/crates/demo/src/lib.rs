//! Browser bindings for three small experiments:
//! angles of exponential sums, matrix-element statistics against the
//! limiting model, and the density of an explicit split eigenfunction.

use catmap::distribution::{normalized_elements, sample_yf, TwistedSpectrum};
use catmap::expsum::ExpSumEvaluator;
use catmap::hecke::{split_eigenfunction, HeckeGroup, SplitDiagonalizer};
use catmap::modarith::PrimePower;
use catmap::quantization::{FourierObservable, TorusAutomorphism};
use wasm_bindgen::prelude::*;

/// Larger moduli make the page unresponsive.
const MAX_MODULUS: u64 = 60_000;

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn matrix(a: &[i32]) -> Result<TorusAutomorphism, JsValue> {
    match *a {
        [a, b, c, d] => TorusAutomorphism::new(a as i64, b as i64, c as i64, d as i64).map_err(err),
        _ => Err(err("the matrix needs four entries")),
    }
}

fn setup(a: &[i32], p: u32, k: u32) -> Result<(TorusAutomorphism, PrimePower), JsValue> {
    let a = matrix(a)?;
    let pp = PrimePower::new(p as u64, k).map_err(err)?;
    if pp.modulus() > MAX_MODULUS {
        return Err(err(format!("p^k = {} is too large for the browser (limit {MAX_MODULUS})", pp.modulus())));
    }
    Ok((a, pp))
}

/// Kind of `p` for `A`: "split", "inert", or an error for ramified primes.
#[wasm_bindgen]
pub fn prime_kind(a: Vec<i32>, p: u32) -> Result<String, JsValue> {
    let a = matrix(&a)?;
    catmap::hecke::classify_prime(&a, p as u64).map(|k| k.to_string()).map_err(err)
}

/// `theta` with `E(nu, chi) = 2 p^{k/2} cos(theta)` over characters with
/// `2 t_chi != -nu (mod p)`.
#[wasm_bindgen]
pub fn exp_sum_angles(a: Vec<i32>, p: u32, k: u32, nu: i32) -> Result<Vec<f64>, JsValue> {
    let (a, pp) = setup(&a, p, k)?;
    let group = HeckeGroup::build(&a, pp).map_err(err)?;
    let records = ExpSumEvaluator::new(&group).map_err(err)?.scan(&[nu as i64]).map_err(err)?;
    Ok(records.iter().filter_map(|r| r.theta).collect())
}

/// Normalized matrix elements of `cos(2 pi (n1 x + n2 y))` for a split prime,
/// followed by `samples` draws from the limiting model. The first entry is
/// the number of matrix elements.
#[wasm_bindgen]
pub fn matrix_elements_vs_model(
    a: Vec<i32>,
    p: u32,
    k: u32,
    n1: i32,
    n2: i32,
    samples: u32,
    seed: u32,
) -> Result<Vec<f64>, JsValue> {
    let (a, pp) = setup(&a, p, k)?;
    let f = FourierObservable::cosine((n1 as i64, n2 as i64), 1.0);
    let elements = normalized_elements(&f, &a, pp).map_err(err)?;
    let model = sample_yf(&TwistedSpectrum::from_observable(&f, &a), seed as u64, samples as usize).map_err(err)?;
    let mut out = Vec::with_capacity(1 + elements.values.len() + model.len());
    out.push(elements.values.len() as f64);
    out.extend_from_slice(elements.values.values());
    out.extend_from_slice(model.values());
    Ok(out)
}

/// `|psi(y)|^2` for the eigenfunction attached to character `j` (split `p`).
#[wasm_bindgen]
pub fn split_eigenfunction_density(a: Vec<i32>, p: u32, k: u32, j: u32) -> Result<Vec<f64>, JsValue> {
    let (a, pp) = setup(&a, p, k)?;
    if pp.modulus() > 3000 {
        return Err(err("eigenfunction densities are limited to p^k <= 3000"));
    }
    let group = HeckeGroup::build(&a, pp).map_err(err)?;
    let diag = SplitDiagonalizer::new(&a, pp).map_err(err)?;
    let chi = group.character(j as u64 % group.order());
    let psi = split_eigenfunction(&group, &diag, &chi).map_err(err)?;
    Ok(psi.amplitudes().iter().map(|z| z.norm_sqr()).collect())
}
