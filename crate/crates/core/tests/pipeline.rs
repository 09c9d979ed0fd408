//! Cross-module consistency: eigenfunction matrix elements against the
//! exponential-sum pipeline, exceptional-set counts and sampler moments.

use num_complex::Complex64;

use catmap::distribution::{normalized_elements, sample_yf, theorem1_verify, SplitFrame, TwistedSpectrum};
use catmap::expsum::{bad_character_count, ExpSumEvaluator};
use catmap::hecke::{eigendecompose, split_level, HeckeGroup, PrimeKind};
use catmap::modarith::PrimePower;
use catmap::quantization::{FourierObservable, TorusAutomorphism};

fn pp(p: u64, k: u32) -> PrimePower {
    PrimePower::new(p, k).unwrap()
}

fn probes(a: &TorusAutomorphism, p: u64) -> Vec<(i64, i64)> {
    [(1, 0), (0, 1), (1, 1), (1, 2), (2, 1), (1, 3), (3, 1), (1, -2)]
        .into_iter()
        .filter(|&n| a.quadratic_form(n).rem_euclid(p as i64) != 0)
        .collect()
}

/// `F_j` from the eigensolver equals `sqrt(N) s (-1)^{n1 n2} E(Q(n)/2, chi') / #C`
/// for `f = cos(2 pi n.x)`, with `chi'` taken from the matched twist.
#[test]
fn matrix_elements_agree_with_exponential_sums() {
    let a = TorusAutomorphism::standard();
    for (p, k) in [(7u64, 2u32), (11, 2), (13, 2)] {
        let pp = pp(p, k);
        let n = (1, 2);
        let f = FourierObservable::cosine(n, 1.0);
        let group = HeckeGroup::build(&a, pp).unwrap();
        let report = theorem1_verify(&a, pp, &probes(&a, p)).unwrap();
        assert!(report.passed());
        let (sign, offset) = (report.sign.unwrap() as f64, report.offset.unwrap());
        let elements = normalized_elements(&f, &a, pp).unwrap();
        let ev = ExpSumEvaluator::new(&group).unwrap();
        let half = pp.mul(pp.reduce(a.quadratic_form(n)), pp.half()) as i64;
        let parity = if (n.0 * n.1) % 2 == 0 { 1.0 } else { -1.0 };
        let order = group.order();
        let root_n = (pp.modulus() as f64).sqrt();
        for &(label, value) in &elements.by_label {
            let chi = group.character((label + offset) % order);
            let e = ev.closed(half, &chi).unwrap();
            let expected = (root_n * sign * parity * e / order as f64).re;
            assert!((expected - value).abs() < 1e-6, "p={p} label={label}: {expected} vs {value}");
        }
    }
}

#[test]
fn exceptional_values_are_bounded_by_bad_characters() {
    let a = TorusAutomorphism::standard();
    let f = FourierObservable::cosine((1, 0), 1.0);
    let spectrum = TwistedSpectrum::from_observable(&f, &a);
    for (p, k) in [(3u64, 2u32), (3, 3), (7, 2), (7, 3), (11, 2), (13, 2)] {
        let pp = pp(p, k);
        let group = HeckeGroup::build(&a, pp).unwrap();
        let elements = normalized_elements(&f, &a, pp).unwrap();
        let n = pp.modulus() as f64;
        let bound =
            2.0 * spectrum.abs_sum() * (1.0 + (p as f64).powf(-0.5)) * n.sqrt() * n.sqrt() / group.order() as f64;
        let large = elements.values.values().iter().filter(|v| v.abs() > bound).count() as u64;
        assert!(large <= bad_character_count(&group), "p={p} k={k}: {large} large values");
    }
}

#[test]
fn slow_decay_element_appears_at_k3() {
    let a = TorusAutomorphism::standard();
    let pp = pp(3, 3);
    let f = FourierObservable::cosine((1, 0), 1.0);
    let elements = normalized_elements(&f, &a, pp).unwrap();
    let max = elements.values.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max >= 27f64.sqrt() / 4.0 - 1e-9, "max |F| = {max}");
}

#[test]
fn split_routes_agree() {
    // The dense route at N = 121 against the explicit eigenfunctions.
    let a = TorusAutomorphism::standard();
    let pp = pp(11, 2);
    let f = FourierObservable::new([
        ((1, 0), Complex64::new(0.5, 0.0)),
        ((-1, 0), Complex64::new(0.5, 0.0)),
        ((2, 1), Complex64::new(0.0, 0.3)),
        ((-2, -1), Complex64::new(0.0, -0.3)),
    ]);
    let dense = normalized_elements(&f, &a, pp).unwrap();
    let group = HeckeGroup::build(&a, pp).unwrap();
    assert_eq!(group.kind(), PrimeKind::Split);
    let frame = SplitFrame::new(&group).unwrap();
    let mut explicit: Vec<f64> = (0..group.order())
        .filter(|&j| split_level(j, &pp) == 2)
        .map(|j| {
            let chi = group.character(j);
            let v: Complex64 = f.coefficients().iter().map(|(&n, &c)| c * frame.element(&chi, n)).sum();
            v.re * 11.0
        })
        .collect();
    explicit.sort_by(f64::total_cmp);
    assert_eq!(explicit.len(), dense.values.len());
    for (x, y) in explicit.iter().zip(dense.values.values()) {
        assert!((x - y).abs() < 1e-7, "{x} vs {y}");
    }
    let decomposition = eigendecompose(&group).unwrap();
    assert_eq!(decomposition.excluded_count(), dense.excluded);
}

#[test]
fn sampler_variance_and_mean() {
    let fsharp = 0.8;
    let sample = sample_yf(&TwistedSpectrum::single(1, fsharp), 11, 1_000_000).unwrap();
    let mean = sample.mean();
    let var = sample.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / sample.len() as f64;
    // Half the mass sits at V = 0 and the uniform half has E[V^2] = 2.
    let expected = fsharp * fsharp * (0.5 * 0.0 + 0.5 * 2.0);
    assert!((var - expected).abs() < 0.01 * expected, "var = {var}");
    assert!(mean.abs() < 0.01 * 2.0 * fsharp);
}
