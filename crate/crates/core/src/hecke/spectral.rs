//! Joint eigenspaces of the Hecke operators from a dense eigensolver.
//!
//! Only `U~(iota(g))` for the generator `g` is diagonalized. It commutes with
//! the parity operator `y -> -y` (the image of `-1`), so the even and odd
//! subspaces are treated separately. Each block `B` is unitary; the Hermitian
//! matrix `(w B + conj(w) B*) / 2` shares its eigenvectors, and near-degenerate
//! groups are split again with a rotated Hermitian part.

use faer::{c64, Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::modarith::PrimePower;
use crate::quantization::{propagator, DenseOperator, StateVector};

use super::{HeckeGroup, PrimeKind};

const ROTATION: f64 = 0.5;
const GROUP_GAP: f64 = 1e-5;
const CLUSTER_TOL: f64 = 1e-6;

/// A joint eigenspace with its eigenvalue label `j` (eigenvalue
/// `e^{i phase} e(j / |C|)` of the generator) and an orthonormal basis.
#[derive(Debug, Clone)]
pub struct EigenCluster {
    pub label: u64,
    pub angle: f64,
    pub basis: Vec<StateVector>,
}

impl EigenCluster {
    pub fn multiplicity(&self) -> usize {
        self.basis.len()
    }
}

#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub pp: PrimePower,
    pub kind: PrimeKind,
    pub group_order: u64,
    /// Fitted global phase of the generator's eigenvalues.
    pub phase: f64,
    /// Largest distance of a cluster angle from its root of unity.
    pub label_residual: f64,
    pub clusters: Vec<EigenCluster>,
}

impl EigenDecomposition {
    pub fn dimension(&self) -> usize {
        self.clusters.iter().map(EigenCluster::multiplicity).sum()
    }

    pub fn multiplicities(&self) -> Vec<usize> {
        self.clusters.iter().map(EigenCluster::multiplicity).collect()
    }

    pub fn cluster(&self, label: u64) -> Option<&EigenCluster> {
        self.clusters.binary_search_by_key(&label, |c| c.label).ok().map(|i| &self.clusters[i])
    }

    /// Eigenfunctions spanning one-dimensional eigenspaces, with labels.
    pub fn simple_eigenfunctions(&self) -> impl Iterator<Item = (u64, &StateVector)> {
        self.clusters.iter().filter(|c| c.multiplicity() == 1).map(|c| (c.label, &c.basis[0]))
    }

    pub fn excluded_count(&self) -> usize {
        self.clusters.iter().filter(|c| c.multiplicity() > 1).map(|c| c.multiplicity()).sum()
    }

    /// Label of the trivial character in the split case: the unique cluster
    /// of dimension `k + 1`.
    pub fn split_anchor(&self) -> Result<u64> {
        let k = self.pp.k() as usize;
        let mut found = self.clusters.iter().filter(|c| c.multiplicity() == k + 1);
        match (found.next(), found.next()) {
            (Some(c), None) => Ok(c.label),
            _ => Err(Error::Numerical("no unique eigenspace of dimension k + 1".into())),
        }
    }

    /// Largest `|<u, v>|` over pairs of distinct basis vectors.
    pub fn max_overlap(&self) -> f64 {
        let vectors: Vec<&StateVector> = self.clusters.iter().flat_map(|c| &c.basis).collect();
        let mut worst = 0.0f64;
        for (i, u) in vectors.iter().enumerate() {
            for v in &vectors[i + 1..] {
                let dot: Complex64 = u.amplitudes().iter().zip(v.amplitudes()).map(|(a, b)| a * b.conj()).sum();
                worst = worst.max(dot.norm() / u.dim() as f64);
            }
        }
        worst
    }
}

struct ParityBasis {
    n: usize,
}

impl ParityBasis {
    fn even_dim(&self) -> usize {
        self.n.div_ceil(2)
    }

    fn odd_dim(&self) -> usize {
        self.n / 2
    }

    /// Support of the `i`-th basis vector as `(index, coefficient)` pairs.
    fn support(&self, even: bool, i: usize) -> Vec<(usize, f64)> {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        if even {
            if i == 0 {
                vec![(0, 1.0)]
            } else {
                vec![(i, r), (self.n - i, r)]
            }
        } else {
            let y = i + 1;
            vec![(y, r), (self.n - y, -r)]
        }
    }

    fn block(&self, u: &DenseOperator, even: bool) -> Mat<c64> {
        let dim = if even { self.even_dim() } else { self.odd_dim() };
        let supports: Vec<_> = (0..dim).map(|i| self.support(even, i)).collect();
        Mat::from_fn(dim, dim, |i, j| {
            let mut acc = Complex64::new(0.0, 0.0);
            for &(a, ca) in &supports[i] {
                for &(b, cb) in &supports[j] {
                    acc += u.get(a, b) * (ca * cb);
                }
            }
            acc
        })
    }

    fn expand(&self, even: bool, v: impl Fn(usize) -> Complex64, dim: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        let scale = (self.n as f64).sqrt();
        for i in 0..dim {
            for (idx, c) in self.support(even, i) {
                out[idx] += v(i) * (c * scale);
            }
        }
        out
    }
}

fn hermitian_part(b: &Mat<c64>, rotation: f64) -> Mat<c64> {
    let w = Complex64::from_polar(1.0, rotation);
    let n = b.nrows();
    Mat::from_fn(n, n, |i, j| (w * b[(i, j)] + (w * b[(j, i)]).conj()) * 0.5)
}

/// Eigenvalue of `B` on an eigenvector `v`, read off from its largest entry.
fn eigenvalue_at_peak(b: &Mat<c64>, v: &Mat<c64>, col: usize) -> Complex64 {
    let n = b.nrows();
    let peak =
        (0..n).max_by(|&i, &j| v[(i, col)].norm_sqr().total_cmp(&v[(j, col)].norm_sqr())).expect("nonempty block");
    let row: Complex64 = (0..n).map(|j| b[(peak, j)] * v[(j, col)]).sum();
    row / v[(peak, col)]
}

/// Eigenpairs of a unitary block as `(angle, eigenvector)`.
fn diagonalize_block(b: &Mat<c64>) -> Result<Vec<(f64, Vec<Complex64>)>> {
    let n = b.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let h = hermitian_part(b, ROTATION);
    let evd = h.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))?;
    let values: Vec<f64> = (0..n).map(|i| evd.S()[i].re).collect();
    let vectors = evd.U();
    drop(h);

    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[end] - values[end - 1] < GROUP_GAP {
            end += 1;
        }
        let g = end - start;
        let v = Mat::from_fn(n, g, |i, j| vectors[(i, start + j)]);
        let resolved = if g == 1 {
            v
        } else {
            // Restrict B to the group and split by the rotated Hermitian part.
            let bv = b * &v;
            let s = v.adjoint() * &bv;
            let k = hermitian_part(&s, ROTATION + std::f64::consts::FRAC_PI_2);
            let inner = k
                .self_adjoint_eigen(Side::Lower)
                .map_err(|e| Error::Numerical(format!("eigensolver failed: {e:?}")))?;
            &v * inner.U()
        };
        for col in 0..g {
            let lambda = eigenvalue_at_peak(b, &resolved, col);
            out.push((lambda.arg(), (0..n).map(|i| resolved[(i, col)]).collect()));
        }
        start = end;
    }
    Ok(out)
}

/// Joint eigendecomposition of the Hecke operators on `L^2(Z/p^k)`.
pub fn eigendecompose(group: &HeckeGroup) -> Result<EigenDecomposition> {
    let pp = group.prime_power();
    let n = pp.modulus() as usize;
    let order = group.order();
    let basis = ParityBasis { n };
    let (even_block, odd_block) = {
        let u = propagator(&group.iota(group.generator()), pp)?;
        (basis.block(&u, true), basis.block(&u, false))
    };

    let mut pairs: Vec<(f64, StateVector)> = Vec::with_capacity(n);
    for (even, block) in [(true, even_block), (false, odd_block)] {
        let dim = block.nrows();
        for (angle, v) in diagonalize_block(&block)? {
            let amps = basis.expand(even, |i| v[i], dim);
            pairs.push((angle, StateVector::new(pp, amps)?));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Cluster on the circle.
    let mut groups: Vec<Vec<(f64, StateVector)>> = Vec::new();
    for (angle, v) in pairs {
        match groups.last_mut() {
            Some(last) if angle - last.last().expect("nonempty").0 < CLUSTER_TOL => last.push((angle, v)),
            _ => groups.push(vec![(angle, v)]),
        }
    }
    if groups.len() > 1 {
        let first = groups[0][0].0;
        let last = groups.last().and_then(|g| g.last()).map(|x| x.0).unwrap_or(first);
        if first + std::f64::consts::TAU - last < CLUSTER_TOL {
            let tail = groups.pop().expect("more than one group");
            groups[0].extend(tail);
        }
    }

    let expected = match group.kind() {
        PrimeKind::Inert => n,
        PrimeKind::Split => order as usize,
    };
    if groups.len() != expected {
        return Err(Error::ClusterMismatch { found: groups.len(), expected });
    }

    let centre = |g: &[(f64, StateVector)]| -> Complex64 {
        g.iter().map(|(a, _)| Complex64::from_polar(1.0, *a)).sum::<Complex64>() / g.len() as f64
    };
    let order_f = order as f64;
    let fitted: Complex64 = groups.iter().map(|g| Complex64::from_polar(1.0, centre(g).arg() * order_f)).sum();
    let phase = fitted.arg() / order_f;

    let mut clusters = Vec::with_capacity(groups.len());
    let mut label_residual = 0.0f64;
    for g in groups {
        let angle = centre(&g).arg();
        let turns = (angle - phase) * order_f / std::f64::consts::TAU;
        let rounded = turns.round();
        label_residual = label_residual.max((turns - rounded).abs() * std::f64::consts::TAU / order_f);
        let label = (rounded as i64).rem_euclid(order as i64) as u64;
        clusters.push(EigenCluster { label, angle, basis: g.into_iter().map(|(_, v)| v).collect() });
    }
    clusters.sort_by_key(|c| c.label);
    if clusters.windows(2).any(|w| w[0].label == w[1].label) {
        return Err(Error::Numerical("two eigenvalue clusters received the same label".into()));
    }
    if label_residual > CLUSTER_TOL {
        return Err(Error::Numerical(format!("cluster angles deviate from roots of unity by {label_residual:e}")));
    }

    Ok(EigenDecomposition { pp, kind: group.kind(), group_order: order, phase, label_residual, clusters })
}
