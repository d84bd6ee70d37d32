//! One-dimensional and tensorised quadrature rules.
//!
//! Gauss-Legendre nodes for fixed-order integrals of smooth integrands, a
//! globally adaptive Gauss-Kronrod (7/15) integrator used for reference
//! values, and the periodic trapezoid rule for trigonometric polynomials.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Gauss-Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "at least one node required");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    /// Shared cached rule with `n` nodes.
    pub fn cached(n: usize) -> Arc<GaussLegendre> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("quadrature cache poisoned");
        guard
            .entry(n)
            .or_insert_with(|| Arc::new(GaussLegendre::new(n)))
            .clone()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(c + h * x);
        }
        s * h
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Periodic trapezoid rule on [0, 2pi) with `m` points; exact for
/// trigonometric polynomials of degree < m.
pub fn periodic_trapezoid<F: FnMut(f64) -> f64>(m: usize, mut f: F) -> f64 {
    let h = 2.0 * std::f64::consts::PI / m as f64;
    (0..m).map(|k| f(k as f64 * h)).sum::<f64>() * h
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    (rk * h, ((rk - rg) * h).abs())
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Globally adaptive Gauss-Kronrod integration of `f` over [a, b].
///
/// Bisects the interval with the largest error estimate until the summed
/// estimate drops below `max(abs_tol, rel_tol * |value|)`.
pub fn adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> AdaptiveResult {
    let (v, e) = gk15(&mut f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    let mut evaluations = 15;
    loop {
        let value: f64 = intervals.iter().map(|t| t.2).sum();
        let error: f64 = intervals.iter().map(|t| t.3).sum();
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return AdaptiveResult { value, error, evaluations, converged: true };
        }
        if intervals.len() >= max_intervals {
            return AdaptiveResult { value, error, evaluations, converged: false };
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, t)| if t.3 > best.1 { (i, t.3) } else { best });
        let (lo, hi, _, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        evaluations += 30;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

/// Nested adaptive integration over the rectangle [ax, bx] x [ay, by].
pub fn adaptive_2d<F: FnMut(f64, f64) -> f64>(
    mut f: F,
    (ax, bx): (f64, f64),
    (ay, by): (f64, f64),
    abs_tol: f64,
    rel_tol: f64,
) -> AdaptiveResult {
    let mut evaluations = 0;
    let mut converged = true;
    let outer = adaptive(
        |x| {
            let inner = adaptive(|y| f(x, y), ay, by, abs_tol * 1e-2, rel_tol * 1e-2, 2000);
            evaluations += inner.evaluations;
            converged &= inner.converged;
            inner.value
        },
        ax,
        bx,
        abs_tol,
        rel_tol,
        2000,
    );
    AdaptiveResult {
        value: outer.value,
        error: outer.error,
        evaluations,
        converged: converged && outer.converged,
    }
}

fn gk15_vec<F: FnMut(f64) -> Vec<f64>>(f: &mut F, a: f64, b: f64) -> (Vec<f64>, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk: Vec<f64> = fc.iter().map(|v| v * WGK[7]).collect();
    let mut rg: Vec<f64> = fc.iter().map(|v| v * WG[3]).collect();
    for j in 0..7 {
        let x = h * XGK[j];
        let (lo, hi) = (f(c - x), f(c + x));
        for k in 0..rk.len() {
            let s = lo[k] + hi[k];
            rk[k] += WGK[j] * s;
            if j % 2 == 1 {
                rg[k] += WG[j / 2] * s;
            }
        }
    }
    let err = rk.iter().zip(&rg).map(|(k, g)| ((k - g) * h).abs()).fold(0.0, f64::max);
    (rk.into_iter().map(|v| v * h).collect(), err)
}

/// Result of a vector-valued adaptive integration.
#[derive(Debug, Clone)]
pub struct AdaptiveVecResult {
    pub value: Vec<f64>,
    /// Largest componentwise error estimate.
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// [`adaptive`] for integrands returning several components at once; all
/// components share one partition of [a, b].
///
/// Stops once the largest componentwise error is below
/// `max(abs_tol, rel_tol * max_k |value_k|)`.
pub fn adaptive_vec<F: FnMut(f64) -> Vec<f64>>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> AdaptiveVecResult {
    let (v, e) = gk15_vec(&mut f, a, b);
    let m = v.len();
    let mut intervals = vec![(a, b, v, e)];
    let mut evaluations = 15;
    loop {
        let mut value = vec![0.0; m];
        for t in &intervals {
            for k in 0..m {
                value[k] += t.2[k];
            }
        }
        // per-interval estimates bound every component
        let error: f64 = intervals.iter().map(|t| t.3).sum();
        let scale = value.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if error <= abs_tol.max(rel_tol * scale) {
            return AdaptiveVecResult { value, error, evaluations, converged: true };
        }
        if intervals.len() >= max_intervals {
            return AdaptiveVecResult { value, error, evaluations, converged: false };
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, t)| if t.3 > best.1 { (i, t.3) } else { best });
        let (lo, hi, _, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15_vec(&mut f, lo, mid);
        let (v2, e2) = gk15_vec(&mut f, mid, hi);
        evaluations += 30;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

/// Nested [`adaptive_vec`] over the rectangle [ax, bx] x [ay, by].
pub fn adaptive_2d_vec<F: FnMut(f64, f64) -> Vec<f64>>(
    mut f: F,
    (ax, bx): (f64, f64),
    (ay, by): (f64, f64),
    abs_tol: f64,
    rel_tol: f64,
) -> AdaptiveVecResult {
    let mut evaluations = 0;
    let mut converged = true;
    let outer = adaptive_vec(
        |x| {
            let inner = adaptive_vec(|y| f(x, y), ay, by, abs_tol * 1e-2, rel_tol * 1e-2, 2000);
            evaluations += inner.evaluations;
            converged &= inner.converged;
            inner.value
        },
        ax,
        bx,
        abs_tol,
        rel_tol,
        2000,
    );
    AdaptiveVecResult {
        value: outer.value,
        error: outer.error,
        evaluations,
        converged: converged && outer.converged,
    }
}
