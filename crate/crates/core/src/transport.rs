//! Transport maps `X -> Y` and the pullback of a target density.
//!
//! A target density `f` on `Y` is pulled back through an invertible map
//! `T` to `f(T(x)) |det J_T(x)|` on `X`. With an exact transport this is the
//! reference density; with an approximate one it is a perturbation of it.
//! Everything is carried in log space.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::polynomial::MultiPoly;

type LogFn = dyn Fn(&[f64]) -> Result<f64> + Send + Sync;

/// A (possibly unnormalized) log-density on `R^d`.
///
/// The wrapped function must be reentrant; it is called concurrently from
/// worker threads.
#[derive(Clone)]
pub struct LogDensity {
    f: Arc<LogFn>,
    dim: usize,
    calls: Option<Arc<AtomicU64>>,
}

impl fmt::Debug for LogDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LogDensity").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl LogDensity {
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::fallible(dim, move |x| Ok(f(x)))
    }

    pub fn fallible<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Result<f64> + Send + Sync + 'static,
    {
        assert!(dim >= 1, "density dimension must be positive");
        LogDensity { f: Arc::new(f), dim, calls: None }
    }

    /// Standard normal log-density (normalized).
    pub fn standard_normal(dim: usize) -> Self {
        let c = -0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln();
        Self::new(dim, move |x| c - 0.5 * x.iter().map(|v| v * v).sum::<f64>())
    }

    /// Normalized `N(mu, sigma^2 I)`.
    pub fn isotropic_normal(mu: Vec<f64>, sigma: f64) -> Self {
        let d = mu.len();
        let c = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
        Self::new(d, move |x| {
            let q: f64 = x.iter().zip(&mu).map(|(a, m)| ((a - m) / sigma).powi(2)).sum();
            c - 0.5 * q
        })
    }

    /// Normalized `N(mu, cov)`.
    pub fn gaussian(mu: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        check_dim(d, cov.nrows())?;
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))?;
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let c = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet);
        Ok(Self::new(d, move |x| {
            let r = DVector::from_column_slice(x) - &mu;
            let z = chol.l().solve_lower_triangular(&r).expect("triangular solve");
            c - 0.5 * z.norm_squared()
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        if let Some(c) = &self.calls {
            c.fetch_add(1, Ordering::Relaxed);
        }
        (self.f)(x)
    }

    /// A copy whose evaluations increment the returned shared counter.
    pub fn counted(&self) -> (LogDensity, Arc<AtomicU64>) {
        let counter = Arc::new(AtomicU64::new(0));
        let mut d = self.clone();
        d.calls = Some(counter.clone());
        (d, counter)
    }
}

/// User-supplied map with an analytic Jacobian.
pub trait CustomMap: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// `T(x) = Hx + M`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub h: DMatrix<f64>,
    pub m: DVector<f64>,
}

/// `T(x)_k = 1/2 x^T A_k x + (Hx)_k + M_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticMap {
    pub a: Vec<DMatrix<f64>>,
    pub h: DMatrix<f64>,
    pub m: DVector<f64>,
}

/// `(1 - t) map_a + t map_b`.
#[derive(Debug, Clone)]
pub struct ConvexCombinationMap {
    pub t: f64,
    pub map_a: TransportMap,
    pub map_b: TransportMap,
}

/// `outer(inner(x))`.
#[derive(Debug, Clone)]
pub struct ComposedMap {
    pub outer: TransportMap,
    pub inner: TransportMap,
}

#[derive(Debug, Clone)]
pub enum TransportMap {
    Affine(AffineMap),
    Quadratic(QuadraticMap),
    Convex(Box<ConvexCombinationMap>),
    Composed(Box<ComposedMap>),
    Custom(Arc<dyn CustomMap>),
}

impl AffineMap {
    pub fn new(h: DMatrix<f64>, m: DVector<f64>) -> Result<Self> {
        check_dim(h.nrows(), h.ncols())?;
        check_dim(h.nrows(), m.len())?;
        Ok(AffineMap { h, m })
    }

    pub fn identity(d: usize) -> Self {
        AffineMap { h: DMatrix::identity(d, d), m: DVector::zeros(d) }
    }

    /// `x -> sigma x + mu`.
    pub fn scaled(sigma: f64, mu: Vec<f64>) -> Self {
        let d = mu.len();
        AffineMap { h: DMatrix::identity(d, d) * sigma, m: DVector::from_vec(mu) }
    }
}

impl QuadraticMap {
    pub fn new(a: Vec<DMatrix<f64>>, h: DMatrix<f64>, m: DVector<f64>) -> Result<Self> {
        let d = m.len();
        check_dim(d, a.len())?;
        check_dim(d, h.nrows())?;
        check_dim(d, h.ncols())?;
        for ak in &a {
            check_dim(d, ak.nrows())?;
            check_dim(d, ak.ncols())?;
        }
        Ok(QuadraticMap { a, h, m })
    }

    /// The banana map `(x_1, x_2 - x_1^2 - 1)`.
    pub fn banana() -> Self {
        let a = vec![DMatrix::zeros(2, 2), DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 0.0])];
        QuadraticMap { a, h: DMatrix::identity(2, 2), m: DVector::from_vec(vec![0.0, -1.0]) }
    }
}

impl TransportMap {
    pub fn dim(&self) -> usize {
        match self {
            TransportMap::Affine(a) => a.m.len(),
            TransportMap::Quadratic(q) => q.m.len(),
            TransportMap::Convex(c) => c.map_a.dim(),
            TransportMap::Composed(c) => c.inner.dim(),
            TransportMap::Custom(c) => c.dim(),
        }
    }

    pub fn convex(t: f64, map_a: TransportMap, map_b: TransportMap) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("convex weight {t} outside [0, 1]")));
        }
        check_dim(map_a.dim(), map_b.dim())?;
        Ok(TransportMap::Convex(Box::new(ConvexCombinationMap { t, map_a, map_b })))
    }

    pub fn compose(outer: TransportMap, inner: TransportMap) -> Result<Self> {
        check_dim(outer.dim(), inner.dim())?;
        Ok(TransportMap::Composed(Box::new(ComposedMap { outer, inner })))
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.apply_unchecked(x))
    }

    fn apply_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TransportMap::Affine(a) => {
                let v = &a.h * DVector::from_column_slice(x) + &a.m;
                v.as_slice().to_vec()
            }
            TransportMap::Quadratic(q) => {
                let xv = DVector::from_column_slice(x);
                let lin = &q.h * &xv + &q.m;
                q.a.iter().zip(lin.iter()).map(|(ak, l)| 0.5 * xv.dot(&(ak * &xv)) + l).collect()
            }
            TransportMap::Convex(c) => {
                let ya = c.map_a.apply_unchecked(x);
                let yb = c.map_b.apply_unchecked(x);
                ya.iter().zip(&yb).map(|(a, b)| (1.0 - c.t) * a + c.t * b).collect()
            }
            TransportMap::Composed(c) => c.outer.apply_unchecked(&c.inner.apply_unchecked(x)),
            TransportMap::Custom(c) => c.apply(x),
        }
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.jacobian_unchecked(x))
    }

    fn jacobian_unchecked(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            TransportMap::Affine(a) => a.h.clone(),
            TransportMap::Quadratic(q) => {
                let d = x.len();
                let xv = DVector::from_column_slice(x);
                let mut j = q.h.clone();
                for (k, ak) in q.a.iter().enumerate() {
                    let g = (ak + ak.transpose()) * &xv * 0.5;
                    for i in 0..d {
                        j[(k, i)] += g[i];
                    }
                }
                j
            }
            TransportMap::Convex(c) => {
                c.map_a.jacobian_unchecked(x) * (1.0 - c.t) + c.map_b.jacobian_unchecked(x) * c.t
            }
            TransportMap::Composed(c) => {
                let inner = c.inner.apply_unchecked(x);
                c.outer.jacobian_unchecked(&inner) * c.inner.jacobian_unchecked(x)
            }
            TransportMap::Custom(c) => c.jacobian(x),
        }
    }

    /// `log |det J_T(x)|` from the pivoted LU factors of the Jacobian.
    pub fn log_abs_det_jacobian(&self, x: &[f64]) -> Result<f64> {
        let j = self.jacobian(x)?;
        log_abs_det(j).ok_or_else(|| Error::SingularJacobian(x.to_vec()))
    }

    /// Solves `T(x) = y`; analytic for affine maps, damped Newton otherwise.
    pub fn invert(&self, y: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        check_dim(self.dim(), y.len())?;
        if let TransportMap::Affine(a) = self {
            let rhs = DVector::from_column_slice(y) - &a.m;
            let x = a.h.clone().lu().solve(&rhs).ok_or_else(|| Error::SingularJacobian(y.to_vec()))?;
            return Ok(x.as_slice().to_vec());
        }
        let yv = DVector::from_column_slice(y);
        let mut x = yv.clone();
        let resid = |x: &DVector<f64>| DVector::from_vec(self.apply_unchecked(x.as_slice())) - &yv;
        let mut r = resid(&x);
        let mut rn = r.norm();
        for _ in 0..max_iter {
            if rn <= tol {
                return Ok(x.as_slice().to_vec());
            }
            let j = self.jacobian_unchecked(x.as_slice());
            let step = match j.lu().solve(&r) {
                Some(s) => s,
                None => return Err(Error::NoConvergence(max_iter)),
            };
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..=30 {
                let xn = &x - &step * lambda;
                let rnew = resid(&xn);
                let nn = rnew.norm();
                if nn.is_finite() && nn < rn {
                    x = xn;
                    r = rnew;
                    rn = nn;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if rn <= tol {
            Ok(x.as_slice().to_vec())
        } else {
            Err(Error::NoConvergence(max_iter))
        }
    }

    /// Component polynomials when the map is polynomial.
    pub fn as_polynomials(&self) -> Option<Vec<MultiPoly>> {
        let d = self.dim();
        match self {
            TransportMap::Affine(a) => Some(
                (0..d)
                    .map(|k| {
                        let mut p = MultiPoly::constant(d, a.m[k]);
                        for i in 0..d {
                            p = p.add(&MultiPoly::variable(d, i).scale(a.h[(k, i)]));
                        }
                        p
                    })
                    .collect(),
            ),
            TransportMap::Quadratic(q) => Some(
                (0..d)
                    .map(|k| {
                        let mut p = MultiPoly::constant(d, q.m[k]);
                        for i in 0..d {
                            let xi = MultiPoly::variable(d, i);
                            p = p.add(&xi.scale(q.h[(k, i)]));
                            for j in 0..d {
                                let c = 0.5 * q.a[k][(i, j)];
                                if c != 0.0 {
                                    p = p.add(&xi.mul(&MultiPoly::variable(d, j)).scale(c));
                                }
                            }
                        }
                        p
                    })
                    .collect(),
            ),
            TransportMap::Convex(c) => {
                let pa = c.map_a.as_polynomials()?;
                let pb = c.map_b.as_polynomials()?;
                Some(pa.iter().zip(&pb).map(|(a, b)| a.scale(1.0 - c.t).add(&b.scale(c.t))).collect())
            }
            TransportMap::Composed(c) => {
                let inner = c.inner.as_polynomials()?;
                let outer = c.outer.as_polynomials()?;
                Some(outer.iter().map(|p| p.compose(&inner)).collect())
            }
            TransportMap::Custom(_) => None,
        }
    }

    pub fn as_affine(&self) -> Option<&AffineMap> {
        match self {
            TransportMap::Affine(a) => Some(a),
            _ => None,
        }
    }
}

impl From<AffineMap> for TransportMap {
    fn from(a: AffineMap) -> Self {
        TransportMap::Affine(a)
    }
}

impl From<QuadraticMap> for TransportMap {
    fn from(q: QuadraticMap) -> Self {
        TransportMap::Quadratic(q)
    }
}

pub(crate) fn log_abs_det(j: DMatrix<f64>) -> Option<f64> {
    let lu = j.lu();
    let u = lu.u();
    let mut s = 0.0;
    for k in 0..u.nrows() {
        let v = u[(k, k)].abs();
        if v == 0.0 || !v.is_finite() {
            return None;
        }
        s += v.ln();
    }
    Some(s)
}

/// The pullback `x -> log f(T(x)) + log |det J_T(x)|`.
pub fn perturbed_prior(target: &LogDensity, map: &TransportMap) -> Result<LogDensity> {
    check_dim(target.dim(), map.dim())?;
    let target = target.clone();
    let map = map.clone();
    let constant_logdet = map.as_affine().map(|a| log_abs_det(a.h.clone()));
    if let Some(None) = constant_logdet {
        return Err(Error::SingularJacobian(vec![0.0; map.dim()]));
    }
    let constant_logdet = constant_logdet.flatten();
    Ok(LogDensity::fallible(map.dim(), move |x| {
        let y = map.apply(x)?;
        let ld = match constant_logdet {
            Some(v) => v,
            None => map.log_abs_det_jacobian(x)?,
        };
        Ok(target.eval(&y)? + ld)
    }))
}

/// Options for [`laplace_affine`].
#[derive(Debug, Clone)]
pub struct LaplaceOptions {
    pub max_iter: usize,
    /// Stop when the relative objective change falls below this.
    pub ftol: f64,
    pub newton_steps: usize,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        LaplaceOptions { max_iter: 500, ftol: 1e-15, newton_steps: 5 }
    }
}

/// Result of the Laplace construction.
#[derive(Debug, Clone)]
pub struct LaplaceFit {
    pub map: AffineMap,
    /// Eigenvalues of the negative log-density Hessian at the mode, ascending.
    pub hessian_eigenvalues: Vec<f64>,
    pub iterations: usize,
}

fn neg_log(target: &LogDensity, x: &DVector<f64>) -> Result<f64> {
    Ok(-target.eval(x.as_slice())?)
}

fn fd_gradient(target: &LogDensity, x: &DVector<f64>) -> Result<DVector<f64>> {
    let d = x.len();
    let mut g = DVector::zeros(d);
    for i in 0..d {
        let h = 6e-6 * (1.0 + x[i].abs());
        let mut p = x.clone();
        let mut q = x.clone();
        p[i] += h;
        q[i] -= h;
        g[i] = (neg_log(target, &p)? - neg_log(target, &q)?) / (2.0 * h);
    }
    Ok(g)
}

/// Central finite-difference Hessian of `-log f` with step `1e-4 (1 + |x_i|)`.
pub fn fd_hessian(target: &LogDensity, x: &[f64]) -> Result<DMatrix<f64>> {
    let d = x.len();
    let xv = DVector::from_column_slice(x);
    let f0 = neg_log(target, &xv)?;
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * (1.0 + v.abs())).collect();
    let eval = |di: &[(usize, f64)]| -> Result<f64> {
        let mut p = xv.clone();
        for &(i, s) in di {
            p[i] += s;
        }
        neg_log(target, &p)
    };
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let fp = eval(&[(i, h[i])])?;
        let fm = eval(&[(i, -h[i])])?;
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let fpp = eval(&[(i, h[i]), (j, h[j])])?;
            let fpm = eval(&[(i, h[i]), (j, -h[j])])?;
            let fmp = eval(&[(i, -h[i]), (j, h[j])])?;
            let fmm = eval(&[(i, -h[i]), (j, -h[j])])?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Sorted symmetric eigendecomposition (ascending eigenvalues).
pub(crate) fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut idx: Vec<usize> = (0..m.nrows()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

/// Symmetric positive square root of a symmetric positive semidefinite matrix.
pub fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sorted_eigen(m);
    let root = DMatrix::from_diagonal(&DVector::from_iterator(vals.len(), vals.iter().map(|v| v.max(0.0).sqrt())));
    let s = &vecs * root * vecs.transpose();
    (&s + s.transpose()) * 0.5
}

/// Affine map from the mode and the inverse square root of the negative
/// log-density Hessian there.
pub fn laplace_affine(target: &LogDensity, x0: &[f64], opts: &LaplaceOptions) -> Result<LaplaceFit> {
    check_dim(target.dim(), x0.len())?;
    let d = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut f = neg_log(target, &x)?;
    if !f.is_finite() {
        return Err(Error::OptimizerFailed(format!("log-density not finite at start point {x0:?}")));
    }
    let mut g = fd_gradient(target, &x)?;
    let mut hinv = DMatrix::<f64>::identity(d, d) / g.norm().max(1.0);
    let mut iterations = 0;
    let mut improved_once = false;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let mut dir = -(&hinv * &g);
        if dir.dot(&g) >= 0.0 {
            hinv = DMatrix::identity(d, d) / g.norm().max(1.0);
            dir = -(&hinv * &g);
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let xn = &x + &dir * step;
            if let Ok(fnew) = neg_log(target, &xn) {
                if fnew.is_finite() && fnew <= f + 1e-4 * step * slope {
                    accepted = Some((xn, fnew));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        improved_once = true;
        let gn = fd_gradient(target, &xn)?;
        let s = &xn - &x;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        if sy > 1e-300 {
            if it == 0 {
                hinv = DMatrix::identity(d, d) * (sy / yv.norm_squared());
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(d, d);
            let a = &i - &s * yv.transpose() * rho;
            let b = &i - &yv * s.transpose() * rho;
            hinv = &a * &hinv * &b + &s * s.transpose() * rho;
        }
        let change = (f - fnew).abs();
        x = xn;
        f = fnew;
        g = gn;
        if change <= opts.ftol * f.abs().max(1.0) {
            break;
        }
    }
    if !improved_once && g.norm() > 1e-8 * f.abs().max(1.0) {
        return Err(Error::OptimizerFailed("no ascent direction accepted from the start point".into()));
    }
    // Newton polish with the finite-difference Hessian
    for _ in 0..opts.newton_steps {
        let hess = fd_hessian(target, x.as_slice())?;
        let Some(step) = hess.lu().solve(&g) else { break };
        let xn = &x - step;
        match neg_log(target, &xn) {
            Ok(fnew) if fnew.is_finite() && fnew <= f => {
                let done = (f - fnew).abs() <= opts.ftol * f.abs().max(1.0);
                x = xn;
                f = fnew;
                g = fd_gradient(target, &x)?;
                if done {
                    break;
                }
            }
            _ => break,
        }
    }
    let hess = fd_hessian(target, x.as_slice())?;
    let (vals, vecs) = sorted_eigen(&hess);
    if vals.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::HessianNotPD(vals));
    }
    let inv_sqrt = DMatrix::from_diagonal(&DVector::from_iterator(d, vals.iter().map(|v| 1.0 / v.sqrt())));
    let h = &vecs * inv_sqrt * vecs.transpose();
    let h = (&h + h.transpose()) * 0.5;
    Ok(LaplaceFit { map: AffineMap { h, m: x }, hessian_eigenvalues: vals, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_quadratic(rng: &mut ChaCha8Rng, d: usize) -> QuadraticMap {
        let mut a = Vec::new();
        for _ in 0..d {
            a.push(DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.2..0.2)));
        }
        let h = DMatrix::identity(d, d) * 2.0 + DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.3..0.3));
        let m = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        QuadraticMap::new(a, h, m).unwrap()
    }

    fn fd_jacobian(map: &TransportMap, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let h = 1e-5;
        DMatrix::from_fn(d, d, |i, j| {
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[j] += h;
            q[j] -= h;
            (map.apply(&p).unwrap()[i] - map.apply(&q).unwrap()[i]) / (2.0 * h)
        })
    }

    #[test]
    fn apply_examples() {
        let id = TransportMap::from(AffineMap::identity(2));
        assert_eq!(id.apply(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        let banana = TransportMap::from(QuadraticMap::banana());
        assert_eq!(banana.apply(&[0.0, 0.0]).unwrap(), vec![0.0, -1.0]);
        let id1 = TransportMap::from(AffineMap::identity(1));
        let c = TransportMap::convex(0.5, id1.clone(), id1).unwrap();
        assert_eq!(c.apply(&[3.0]).unwrap(), vec![3.0]);
        assert!(matches!(banana.apply(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn jacobian_examples() {
        let banana = TransportMap::from(QuadraticMap::banana());
        let j = banana.jacobian(&[0.7, -2.0]).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.4, 1.0]));
        assert!(banana.log_abs_det_jacobian(&[3.0, 1.0]).unwrap().abs() < 1e-15);
        let a = TransportMap::from(AffineMap::scaled(2.0, vec![0.0; 3]));
        assert!((a.log_abs_det_jacobian(&[1.0, 1.0, 1.0]).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-14);
        let sing = TransportMap::from(AffineMap::scaled(0.0, vec![0.0; 2]));
        assert!(matches!(sing.log_abs_det_jacobian(&[1.0, 1.0]), Err(Error::SingularJacobian(_))));
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let d = rng.gen_range(2..5);
            let q = TransportMap::from(random_quadratic(&mut rng, d));
            let q2 = TransportMap::from(random_quadratic(&mut rng, d));
            let maps = vec![
                q.clone(),
                TransportMap::convex(0.3, q.clone(), q2.clone()).unwrap(),
                TransportMap::compose(q.clone(), q2.clone()).unwrap(),
            ];
            for map in &maps {
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let ja = map.jacobian(&x).unwrap();
                let jf = fd_jacobian(map, &x);
                assert!((&ja - &jf).norm() <= 1e-6 * (1.0 + ja.norm()));
                let lf = log_abs_det(jf).unwrap();
                assert!((map.log_abs_det_jacobian(&x).unwrap() - lf).abs() < 1e-5);
            }
            let comp = TransportMap::compose(q.clone(), q2.clone()).unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let inner = q2.apply(&x).unwrap();
            let chain = q.log_abs_det_jacobian(&inner).unwrap() + q2.log_abs_det_jacobian(&x).unwrap();
            assert!((comp.log_abs_det_jacobian(&x).unwrap() - chain).abs() < 1e-10);
        }
    }

    #[test]
    fn inversion_examples() {
        let a = TransportMap::from(AffineMap::scaled(2.0, vec![1.0, 1.0]));
        let x = a.invert(&[3.0, 3.0], 1e-12, 10).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        let banana = TransportMap::from(QuadraticMap::banana());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x0 = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let y = banana.apply(&x0).unwrap();
            let x = banana.invert(&y, 1e-10, 100).unwrap();
            assert!((x[0] - x0[0]).abs() < 1e-8 && (x[1] - x0[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn polynomial_form_matches_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = TransportMap::from(random_quadratic(&mut rng, 3));
        let a = TransportMap::from(AffineMap::new(
            DMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64 * 0.1 + if i == j { 1.0 } else { 0.0 }),
            DVector::from_vec(vec![0.1, 0.2, 0.3]),
        )
        .unwrap());
        let map = TransportMap::convex(0.4, a.clone(), TransportMap::compose(q, a).unwrap()).unwrap();
        let polys = map.as_polynomials().unwrap();
        let x = [0.3, -0.8, 1.1];
        let y = map.apply(&x).unwrap();
        for (p, v) in polys.iter().zip(&y) {
            assert!((p.eval(&x) - v).abs() < 1e-13);
        }
    }

    #[test]
    fn pullback_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let std = LogDensity::standard_normal(3);
        let id = TransportMap::from(AffineMap::identity(3));
        let p = perturbed_prior(&std, &id).unwrap();
        let target = LogDensity::isotropic_normal(vec![1.0, -2.0, 0.5], 1e-3);
        let exact = TransportMap::from(AffineMap::scaled(1e-3, vec![1.0, -2.0, 0.5]));
        let q = perturbed_prior(&target, &exact).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            assert_eq!(p.eval(&x).unwrap(), std.eval(&x).unwrap());
            assert!((q.eval(&x).unwrap() - std.eval(&x).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn laplace_gaussian_examples() {
        let mu = DVector::from_vec(vec![1.0, -0.5]);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let target = LogDensity::gaussian(mu.clone(), &cov).unwrap();
        let fit = laplace_affine(&target, &[0.0, 0.0], &LaplaceOptions::default()).unwrap();
        assert!((&fit.map.m - &mu).norm() < 1e-6);
        assert!((fit.map.h[(0, 0)] - 2.0).abs() < 1e-5 && (fit.map.h[(1, 1)] - 1.0).abs() < 1e-5);
        assert!(fit.map.h[(0, 1)].abs() < 1e-6);
        let std = LogDensity::standard_normal(3);
        let fit = laplace_affine(&std, &[0.5, 0.2, -0.3], &LaplaceOptions::default()).unwrap();
        assert!(fit.map.m.norm() < 1e-6);
        assert!((&fit.map.h - DMatrix::<f64>::identity(3, 3)).norm() < 1e-6);
    }

    #[test]
    fn laplace_reports_non_pd_hessian() {
        // saddle at the origin with a flat start: -x^2 + y^2 has no maximum
        let t = LogDensity::new(2, |x| x[0] * x[0] - x[1] * x[1]);
        let r = laplace_affine(&t, &[0.0, 0.0], &LaplaceOptions::default());
        assert!(matches!(r, Err(Error::HessianNotPD(_)) | Err(Error::OptimizerFailed(_))), "{r:?}");
    }
}
