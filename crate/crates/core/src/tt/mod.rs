//! Functional tensor trains.
//!
//! `g(x) = sum_alpha G[alpha] prod_i P^i_{alpha_i}(x_i)` with the coefficient
//! tensor `G` held as a train of order-3 cores `r_i x n_i x r_{i+1}`. Because
//! every `P^i` family is orthonormal, the L2 norm of `g` equals the Frobenius
//! norm of `G`.

mod als;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisDescriptor, OrthonormalBasis1D};
use crate::error::{Error, Result};

pub use als::{fit_als, FitDiagnostics, FitOptions};

const DOMAIN_TOL: f64 = 1e-9;

/// Order-3 core, row-major `[left][basis][right]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Core {
    pub r0: usize,
    pub n: usize,
    pub r1: usize,
    pub data: Vec<f64>,
}

impl Core {
    pub fn zeros(r0: usize, n: usize, r1: usize) -> Self {
        Core { r0, n, r1, data: vec![0.0; r0 * n * r1] }
    }

    pub fn from_vec(r0: usize, n: usize, r1: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != r0 * n * r1 {
            return Err(Error::ShapeMismatch(format!("core {r0}x{n}x{r1} with {} entries", data.len())));
        }
        Ok(Core { r0, n, r1, data })
    }

    #[inline]
    pub fn at(&self, a: usize, j: usize, b: usize) -> f64 {
        self.data[(a * self.n + j) * self.r1 + b]
    }

    #[inline]
    pub fn at_mut(&mut self, a: usize, j: usize, b: usize) -> &mut f64 {
        &mut self.data[(a * self.n + j) * self.r1 + b]
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `sum_j G[:, j, :] w_j` as an `r0 x r1` row-major matrix.
    pub fn weighted_slice(&self, w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for a in 0..self.r0 {
            for (j, &wj) in w.iter().enumerate().take(self.n) {
                if wj == 0.0 {
                    continue;
                }
                let base = (a * self.n + j) * self.r1;
                let row = &mut out[a * self.r1..(a + 1) * self.r1];
                for (o, g) in row.iter_mut().zip(&self.data[base..base + self.r1]) {
                    *o += wj * g;
                }
            }
        }
    }

    /// Rows `(a, j)`, columns `b`.
    pub fn left_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.r0 * self.n, self.r1, &self.data)
    }

    /// Rows `a`, columns `(j, b)`.
    pub fn right_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.r0, self.n * self.r1, &self.data)
    }

    pub fn from_left_unfolding(m: &DMatrix<f64>, r0: usize, n: usize) -> Self {
        let r1 = m.ncols();
        let mut c = Core::zeros(r0, n, r1);
        for row in 0..r0 * n {
            for b in 0..r1 {
                c.data[row * r1 + b] = m[(row, b)];
            }
        }
        c
    }

    pub fn from_right_unfolding(m: &DMatrix<f64>, n: usize) -> Self {
        let r0 = m.nrows();
        let r1 = m.ncols() / n;
        let mut c = Core::zeros(r0, n, r1);
        for a in 0..r0 {
            for col in 0..n * r1 {
                c.data[a * n * r1 + col] = m[(a, col)];
            }
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct ExtendedTT {
    cores: Vec<Core>,
    bases: Vec<Arc<OrthonormalBasis1D>>,
}

/// Rounded train together with the truncation bound `sqrt(sum sigma^2)`.
#[derive(Debug, Clone)]
pub struct Rounded {
    pub tt: ExtendedTT,
    pub bound: f64,
}

impl ExtendedTT {
    pub fn new(cores: Vec<Core>, bases: Vec<Arc<OrthonormalBasis1D>>) -> Result<Self> {
        if cores.is_empty() || cores.len() != bases.len() {
            return Err(Error::ShapeMismatch(format!("{} cores for {} bases", cores.len(), bases.len())));
        }
        if cores[0].r0 != 1 || cores.last().unwrap().r1 != 1 {
            return Err(Error::ShapeMismatch("boundary ranks must be 1".into()));
        }
        for (i, c) in cores.iter().enumerate() {
            if c.n != bases[i].size() {
                return Err(Error::ShapeMismatch(format!("core {i} has {} slices, basis has {}", c.n, bases[i].size())));
            }
            if i + 1 < cores.len() && c.r1 != cores[i + 1].r0 {
                return Err(Error::ShapeMismatch(format!("rank mismatch between cores {i} and {}", i + 1)));
            }
        }
        Ok(ExtendedTT { cores, bases })
    }

    /// Rank-1 train from per-dimension coefficient vectors.
    pub fn rank_one(vectors: Vec<Vec<f64>>, bases: Vec<Arc<OrthonormalBasis1D>>) -> Result<Self> {
        let cores = vectors.into_iter().map(|v| Core { r0: 1, n: v.len(), r1: 1, data: v }).collect();
        Self::new(cores, bases)
    }

    pub fn dim(&self) -> usize {
        self.cores.len()
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn bases(&self) -> &[Arc<OrthonormalBasis1D>] {
        &self.bases
    }

    /// `[r_0, r_1, ..., r_d]` with `r_0 = r_d = 1`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.r0).collect();
        r.push(1);
        r
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.n).collect()
    }

    /// Evaluates from precomputed basis values `phis[i][j] = P^i_j(x_i)`.
    pub fn evaluate_with_values(&self, phis: &[&[f64]]) -> f64 {
        let mut v = vec![1.0];
        let mut next = Vec::new();
        let mut slice = Vec::new();
        for (core, phi) in self.cores.iter().zip(phis) {
            slice.resize(core.r0 * core.r1, 0.0);
            core.weighted_slice(phi, &mut slice);
            next.clear();
            next.resize(core.r1, 0.0);
            for (a, va) in v.iter().enumerate() {
                for (b, nb) in next.iter_mut().enumerate() {
                    *nb += va * slice[a * core.r1 + b];
                }
            }
            std::mem::swap(&mut v, &mut next);
        }
        v[0]
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let mut phis = Vec::with_capacity(self.dim());
        for (i, (b, &xi)) in self.bases.iter().zip(x).enumerate() {
            if !b.contains(xi, DOMAIN_TOL * (1.0 + xi.abs())) {
                return Err(Error::OutOfDomain { dim: i, value: xi });
            }
            phis.push(b.eval_vec(xi));
        }
        let refs: Vec<&[f64]> = phis.iter().map(|p| p.as_slice()).collect();
        Ok(self.evaluate_with_values(&refs))
    }

    /// `sum_k prod_i (sum_j G^i[k_{i-1}, j, k_i] vectors_i[j])`.
    pub fn contract_rank1(&self, vectors: &[Vec<f64>]) -> Result<f64> {
        if vectors.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!("{} vectors for {} cores", vectors.len(), self.dim())));
        }
        for (i, (c, v)) in self.cores.iter().zip(vectors).enumerate() {
            if v.len() != c.n {
                return Err(Error::ShapeMismatch(format!("vector {i} has length {}, expected {}", v.len(), c.n)));
            }
        }
        let refs: Vec<&[f64]> = vectors.iter().map(|v| v.as_slice()).collect();
        Ok(self.evaluate_with_values(&refs))
    }

    /// Frobenius inner product of the coefficient tensors.
    pub fn dot(&self, other: &ExtendedTT) -> Result<f64> {
        if self.sizes() != other.sizes() {
            return Err(Error::ShapeMismatch("trains have different mode sizes".into()));
        }
        // m[a, a'] over the two trains' left bonds
        let mut m = DMatrix::from_element(1, 1, 1.0);
        for (c1, c2) in self.cores.iter().zip(&other.cores) {
            let mut next = DMatrix::zeros(c1.r1, c2.r1);
            for j in 0..c1.n {
                let s1 = DMatrix::from_fn(c1.r0, c1.r1, |a, b| c1.at(a, j, b));
                let s2 = DMatrix::from_fn(c2.r0, c2.r1, |a, b| c2.at(a, j, b));
                next += s1.transpose() * &m * s2;
            }
            m = next;
        }
        Ok(m[(0, 0)])
    }

    /// `L2` norm of the represented function (Parseval).
    pub fn norm(&self) -> f64 {
        self.dot(self).map(|v| v.max(0.0).sqrt()).unwrap_or(f64::NAN)
    }

    /// Makes cores `1..d` right-orthogonal; the norm moves into core 0.
    pub fn right_orthogonalize(&mut self) {
        for i in (1..self.dim()).rev() {
            self.shift_right_to_left(i);
        }
    }

    /// Makes cores `0..d-1` left-orthogonal; the norm moves into the last core.
    pub fn left_orthogonalize(&mut self) {
        for i in 0..self.dim().saturating_sub(1) {
            self.shift_left_to_right(i);
        }
    }

    /// QR of core `i`'s left unfolding, `R` absorbed by core `i + 1`.
    pub(crate) fn shift_left_to_right(&mut self, i: usize) {
        let c = &self.cores[i];
        let (r0, n) = (c.r0, c.n);
        let qr = c.left_unfolding().qr();
        let q = qr.q();
        let r = qr.r();
        self.cores[i] = Core::from_left_unfolding(&q, r0, n);
        let nxt = &self.cores[i + 1];
        let m = &r * nxt.right_unfolding();
        self.cores[i + 1] = Core::from_right_unfolding(&m, nxt.n);
    }

    /// LQ of core `i`'s right unfolding, `L` absorbed by core `i - 1`.
    pub(crate) fn shift_right_to_left(&mut self, i: usize) {
        let c = &self.cores[i];
        let n = c.n;
        let qr = c.right_unfolding().transpose().qr();
        let q = qr.q().transpose();
        let l = qr.r().transpose();
        self.cores[i] = Core::from_right_unfolding(&q, n);
        let prev = &self.cores[i - 1];
        let m = prev.left_unfolding() * &l;
        self.cores[i - 1] = Core::from_left_unfolding(&m, prev.r0, prev.n);
    }

    /// SVD rounding at relative accuracy `eps`.
    pub fn round(&self, eps: f64) -> Rounded {
        self.round_impl(|sv, delta| {
            let mut tail = 0.0;
            let mut k = sv.len();
            while k > 1 && tail + sv[k - 1] * sv[k - 1] <= delta * delta {
                tail += sv[k - 1] * sv[k - 1];
                k -= 1;
            }
            k
        }, eps, None)
    }

    /// SVD rounding to at most the given bond ranks `[r_1, ..., r_{d-1}]`.
    pub fn round_to_ranks(&self, ranks: &[usize]) -> Rounded {
        self.round_impl(|sv, _| sv.len(), 0.0, Some(ranks))
    }

    fn round_impl<F: Fn(&[f64], f64) -> usize>(&self, keep: F, eps: f64, caps: Option<&[usize]>) -> Rounded {
        let mut tt = self.clone();
        let d = tt.dim();
        tt.right_orthogonalize();
        let norm = tt.cores[0].frobenius();
        let delta = if d > 1 { eps * norm / ((d - 1) as f64).sqrt() } else { 0.0 };
        let mut discarded = 0.0;
        for i in 0..d.saturating_sub(1) {
            let c = &tt.cores[i];
            let (r0, n) = (c.r0, c.n);
            let svd = c.left_unfolding().svd(true, true);
            let u = svd.u.unwrap();
            let vt = svd.v_t.unwrap();
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
            let sv: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
            let mut k = keep(&sv, delta).max(1);
            if let Some(caps) = caps {
                k = k.min(caps[i].max(1));
            }
            discarded += sv[k..].iter().map(|s| s * s).sum::<f64>();
            let uk = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, order[c])]);
            let svt = DMatrix::from_fn(k, vt.ncols(), |r, c| sv[r] * vt[(order[r], c)]);
            tt.cores[i] = Core::from_left_unfolding(&uk, r0, n);
            let nxt = &tt.cores[i + 1];
            let m = svt * nxt.right_unfolding();
            tt.cores[i + 1] = Core::from_right_unfolding(&m, nxt.n);
        }
        Rounded { tt, bound: discarded.sqrt() }
    }

    /// Full coefficient tensor, row-major over `(j_0, ..., j_{d-1})`.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut cur: Vec<f64> = vec![1.0]; // shape [prefix, r]
        let mut prefix = 1;
        for c in &self.cores {
            let mut next = vec![0.0; prefix * c.n * c.r1];
            for p in 0..prefix {
                for a in 0..c.r0 {
                    let w = cur[p * c.r0 + a];
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..c.n {
                        for b in 0..c.r1 {
                            next[(p * c.n + j) * c.r1 + b] += w * c.at(a, j, b);
                        }
                    }
                }
            }
            prefix *= c.n;
            cur = next;
        }
        cur
    }

    pub fn to_file(&self) -> TTFile {
        TTFile {
            format: TT_FORMAT.to_string(),
            version: TT_VERSION,
            d: self.dim(),
            ranks: self.ranks(),
            n: self.sizes(),
            bases: self.bases.iter().map(|b| b.descriptor()).collect(),
            cores: self.cores.iter().map(|c| c.data.clone()).collect(),
        }
    }

    pub fn from_file(f: &TTFile) -> Result<Self> {
        if f.format != TT_FORMAT || f.version != TT_VERSION {
            return Err(Error::Serialization(format!("unsupported train format {} v{}", f.format, f.version)));
        }
        if f.ranks.len() != f.d + 1 || f.n.len() != f.d || f.cores.len() != f.d || f.bases.len() != f.d {
            return Err(Error::Serialization("inconsistent train header".into()));
        }
        let bases = f
            .bases
            .iter()
            .map(|b| OrthonormalBasis1D::from_descriptor(b).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let cores = (0..f.d)
            .map(|i| Core::from_vec(f.ranks[i], f.n[i], f.ranks[i + 1], f.cores[i].clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores, bases)
    }
}

pub const TT_FORMAT: &str = "ttdensity-tt";
pub const TT_VERSION: u32 = 1;

/// Versioned JSON container for a train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTFile {
    pub format: String,
    pub version: u32,
    pub d: usize,
    pub ranks: Vec<usize>,
    pub n: Vec<usize>,
    pub bases: Vec<BasisDescriptor>,
    /// Core entries, row-major `[left][basis][right]`.
    pub cores: Vec<Vec<f64>>,
}

/// Mean squared deviation of the train from the sample values.
pub fn empirical_l2(tt: &ExtendedTT, points: &[f64], values: &[f64]) -> Result<f64> {
    let d = tt.dim();
    let mut s = 0.0;
    for (k, v) in values.iter().enumerate() {
        let g = tt.evaluate(&points[k * d..(k + 1) * d])?;
        s += (g - v) * (g - v);
    }
    Ok(s / values.len() as f64)
}

/// Plug-in `KL(f || f_h)` from samples of `f`: mean of `log f - log f_h`,
/// with its standard error.
pub fn empirical_kl(log_f: &[f64], f_h: &[f64]) -> Result<(f64, f64)> {
    let bad = f_h.iter().filter(|v| !(**v > 0.0)).count();
    if bad > 0 {
        return Err(Error::NonPositiveSurrogate(bad));
    }
    let terms: Vec<f64> = log_f.iter().zip(f_h).map(|(lf, fh)| lf - fh.ln()).collect();
    Ok(mean_and_se(&terms))
}

/// Hellinger distance from samples of `f`: `sqrt(1 - mean sqrt(f_h / f))`.
pub fn empirical_hellinger(log_f: &[f64], f_h: &[f64]) -> f64 {
    let terms: Vec<f64> = log_f
        .iter()
        .zip(f_h)
        .map(|(lf, fh)| if *fh > 0.0 { (0.5 * (fh.ln() - lf)).exp() } else { 0.0 })
        .collect();
    let (m, _) = mean_and_se(&terms);
    (1.0 - m).max(0.0).sqrt()
}

/// Sample mean and its standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
