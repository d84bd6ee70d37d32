//! Reconstruction samples drawn from the normalized chart weight.
//!
//! The Jacobian weight of a polar chart is a product of univariate factors,
//! so each coordinate is drawn independently by inverse transform sampling.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coords::PolarChart;
use crate::error::{Error, Result};
use crate::transport::LogDensity;

/// Deterministic generator for `(seed, stream)`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws with density proportional to `rho^(d-1)` on `[a, b]`.
pub fn sample_radial<R: Rng + ?Sized>(rng: &mut R, (a, b): (f64, f64), d: usize, n: usize) -> Vec<f64> {
    let df = d as f64;
    let lo = a.powf(df);
    let hi = b.powf(df);
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            (lo + u * (hi - lo)).powf(1.0 / df).clamp(a, b)
        })
        .collect()
}

/// `int_0^theta sin^i`.
pub fn sin_power_antiderivative(i: usize, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let mut prev = theta; // i = 0
    let mut cur = 1.0 - c; // i = 1
    if i == 0 {
        return prev;
    }
    for k in 2..=i {
        let kf = k as f64;
        let next = -s.powi(k as i32 - 1) * c / kf + (kf - 1.0) / kf * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Draws with density proportional to `sin^i` on `[0, pi]`.
pub fn sample_angular<R: Rng + ?Sized>(rng: &mut R, i: usize, n: usize) -> Vec<f64> {
    assert!(i >= 1, "angular weight exponent must be positive");
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            if i == 1 {
                (1.0 - 2.0 * u).clamp(-1.0, 1.0).acos()
            } else {
                invert_sin_power_cdf(i, u)
            }
        })
        .collect()
}

fn invert_sin_power_cdf(i: usize, u: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let total = sin_power_antiderivative(i, pi);
    let target = u * total;
    let (mut lo, mut hi) = (0.0, pi);
    let mut x = pi * u;
    for _ in 0..200 {
        let fx = sin_power_antiderivative(i, x) - target;
        if fx.abs() < 1e-15 * total {
            break;
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo < 1e-13 {
            break;
        }
        let dfx = x.sin().powi(i as i32);
        let newton = x - fx / dfx;
        x = if dfx > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    x
}

/// Point samples of one layer's pulled-back density.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSampleSet {
    pub layer: usize,
    pub dim: usize,
    /// Chart coordinates, row-major `N x d`.
    pub points: Vec<f64>,
    /// `exp(log_values - log_offset)`.
    pub values: Vec<f64>,
    pub log_values: Vec<f64>,
    pub log_offset: f64,
}

impl LayerSampleSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }
}

/// Draws `n` chart points from the chart weight.
pub fn sample_chart_points<R: Rng + ?Sized>(rng: &mut R, chart: &PolarChart, n: usize) -> Vec<f64> {
    let d = chart.dim();
    let (a, b) = chart.radial_interval();
    let df = d as f64;
    let (lo, hi) = (a.powf(df), b.powf(df));
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut pts = Vec::with_capacity(n * d);
    for _ in 0..n {
        let u: f64 = rng.gen();
        pts.push((lo + u * (hi - lo)).powf(1.0 / df).clamp(a, b));
        pts.push(two_pi * rng.gen::<f64>());
        for i in 1..d - 1 {
            let u: f64 = rng.gen();
            pts.push(if i == 1 { (1.0 - 2.0 * u).clamp(-1.0, 1.0).acos() } else { invert_sin_power_cdf(i, u) });
        }
    }
    pts
}

/// Samples one layer and evaluates the pulled-back density at each point.
pub fn sample_layer<R: Rng + ?Sized>(
    rng: &mut R,
    chart: &PolarChart,
    prior: &LogDensity,
    n: usize,
) -> Result<LayerSampleSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let d = chart.dim();
    let points = sample_chart_points(rng, chart, n);
    let log_values: Vec<f64> = points
        .par_chunks(d)
        .map(|xh| {
            let x = chart.polar_to_cartesian_unchecked(xh);
            match prior.eval(&x) {
                Ok(v) if !v.is_nan() && v != f64::INFINITY => Ok(v),
                Ok(v) => Err(Error::Evaluation { point: x, reason: format!("log-density {v}") }),
                Err(e) => Err(Error::Evaluation { point: x, reason: e.to_string() }),
            }
        })
        .collect::<Result<_>>()?;
    let max = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_offset = if max.is_finite() { max } else { 0.0 };
    let values = log_values.iter().map(|v| (v - log_offset).exp()).collect();
    Ok(LayerSampleSet { layer: chart.layer(), dim: d, points, values, log_values, log_offset })
}

/// Writes sample sets as CSV with columns `layer, x1..xd, log_value`.
pub fn write_samples_csv<W: Write>(mut w: W, sets: &[LayerSampleSet]) -> std::io::Result<()> {
    let Some(first) = sets.first() else { return Ok(()) };
    let header: Vec<String> = std::iter::once("layer".to_string())
        .chain((1..=first.dim).map(|i| format!("x{i}")))
        .chain(std::iter::once("log_value".to_string()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for s in sets {
        for k in 0..s.len() {
            let coords: Vec<String> = s.point(k).iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{},{},{:e}", s.layer, coords.join(","), s.log_values[k])?;
        }
    }
    Ok(())
}
