//! Hybrid layered surrogate of a pulled-back density.
//!
//! Inside the covered ball each shell carries its own tensor train in polar
//! chart coordinates; outside it a Gaussian takes over. All layer values are
//! stored relative to a common `log_scale` so densities spanning hundreds of
//! orders of magnitude stay representable.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::basis::{angular_basis, radial_basis, trig_basis, OrthonormalBasis1D, DEFAULT_TAU_MANT};
use crate::coords::{LayerPartition, PolarChart};
use crate::error::{check_dim, Error, Result};
use crate::polynomial::{monomial_of, MultiPoly};
use crate::sampling::{sample_chart_points, sample_layer, seeded_rng};
use crate::transport::{laplace_affine, AffineMap, LaplaceOptions, LogDensity, TransportMap};
use crate::tt::{fit_als, ExtendedTT, FitDiagnostics, FitOptions, TTFile};

/// Largest total moment order served by default.
pub const DEFAULT_MOMENT_CAP: usize = 4;
/// Monte Carlo size for tail masses without a closed form.
pub const TAIL_MC_SAMPLES: usize = 1_000_000;
/// Per-layer sample count used when moments fall back to sampling.
pub const DEFAULT_QOI_SAMPLES: usize = 10_000;

/// Choice of the Gaussian used outside the covered ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailSpec {
    /// `N(center, I)`.
    #[default]
    Standard,
    Spherical { mean: Vec<f64>, std: f64 },
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// Mode and inverse Hessian of the pulled-back density.
    Laplace,
    /// Mean and covariance of the truncated surrogate itself.
    Surrogate,
}

#[derive(Debug, Clone)]
pub struct DensityOptions {
    /// Number of radial polynomials (degree + 1).
    pub radial_size: usize,
    /// Number of trigonometric functions on the first angle.
    pub trig_size: usize,
    /// Number of polynomials on each remaining angle.
    pub angular_size: usize,
    pub tau_mant: u32,
    pub samples_per_layer: usize,
    pub fit: FitOptions,
    pub tail: TailSpec,
    pub seed: u64,
    pub moment_cap: usize,
}

impl Default for DensityOptions {
    fn default() -> Self {
        DensityOptions {
            radial_size: 8,
            trig_size: 1,
            angular_size: 1,
            tau_mant: DEFAULT_TAU_MANT,
            samples_per_layer: 1000,
            fit: FitOptions::default(),
            tail: TailSpec::Standard,
            seed: 0,
            moment_cap: DEFAULT_MOMENT_CAP,
        }
    }
}

/// Gaussian on the unbounded remainder, scaled to the surrogate.
#[derive(Debug, Clone)]
pub struct TailGaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
    /// Probability mass of the unscaled Gaussian outside the covered ball.
    pub p_out: f64,
    /// Standard error of `p_out` (zero when computed in closed form).
    pub p_out_se: f64,
    /// Scale matching the Gaussian to the surrogate mass inside the ball.
    pub kappa: f64,
}

impl TailGaussian {
    fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), cov.nrows())?;
        check_dim(mean.len(), cov.ncols())?;
        let sym = (&cov + cov.transpose()) * 0.5;
        let chol = sym
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("tail covariance is not positive definite".into()))?
            .l();
        let d = mean.len() as f64;
        let log_norm = -0.5 * d * (2.0 * std::f64::consts::PI).ln() - chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(TailGaussian { mean, cov: sym, chol, log_norm, p_out: 0.0, p_out_se: 0.0, kappa: 0.0 })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let r = DVector::from_column_slice(x) - &self.mean;
        let z = self.chol.solve_lower_triangular(&r).expect("triangular solve");
        self.log_norm - 0.5 * z.norm_squared()
    }

    /// `s` when the covariance is `s^2 I`.
    fn spherical_std(&self) -> Option<f64> {
        let d = self.cov.nrows();
        let s2 = self.cov[(0, 0)];
        let iso = (0..d).all(|i| (0..d).all(|j| {
            let expected = if i == j { s2 } else { 0.0 };
            (self.cov[(i, j)] - expected).abs() <= 1e-14 * s2
        }));
        iso.then(|| s2.sqrt())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(self.mean.len(), (0..self.mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (&self.mean + &self.chol * z).as_slice().to_vec()
    }

    /// Sets `p_out` for the ball of `partition`; returns the inside mass.
    fn compute_outside_mass(&mut self, partition: &LayerPartition, seed: u64) -> f64 {
        let d = partition.dim();
        let r = partition.outer_radius();
        let centered = self
            .mean
            .iter()
            .zip(partition.center())
            .all(|(m, c)| (m - c).abs() <= 1e-14 * (1.0 + c.abs()));
        if let (Some(s), true) = (self.spherical_std(), centered) {
            let a = 0.5 * d as f64;
            let x = 0.5 * (r / s).powi(2);
            self.p_out = gamma_ur(a, x);
            self.p_out_se = 0.0;
            return gamma_lr(a, x);
        }
        let mut rng = seeded_rng(seed, u64::MAX - 1);
        let mut hits = 0usize;
        for _ in 0..TAIL_MC_SAMPLES {
            let x = self.draw(&mut rng);
            let r2: f64 = x.iter().zip(partition.center()).map(|(a, c)| (a - c) * (a - c)).sum();
            if r2.sqrt() >= r {
                hits += 1;
            }
        }
        let n = TAIL_MC_SAMPLES as f64;
        let p = hits as f64 / n;
        self.p_out = p;
        self.p_out_se = (p * (1.0 - p) / n).sqrt();
        1.0 - p
    }
}

/// One fitted shell.
#[derive(Debug, Clone)]
pub struct LayerModel {
    pub tt: ExtendedTT,
    /// Values were fit after subtracting this from the log-density.
    pub log_offset: f64,
    /// `int tt |det J|` over the chart box.
    pub mass: f64,
}

/// Diagnostics of one layer's reconstruction.
#[derive(Debug, Clone)]
pub struct LayerReport {
    pub layer: usize,
    pub fit: FitDiagnostics,
    pub log_offset: f64,
    /// Negative part of the fit relative to its absolute size on the samples.
    pub clamped_fraction: f64,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    pub layers: Vec<LayerReport>,
    pub density_calls: usize,
}

#[derive(Debug, Default)]
struct EvalCounters {
    evaluations: AtomicU64,
    clamped: AtomicU64,
}

/// The assembled surrogate; immutable after construction.
#[derive(Debug, Clone)]
pub struct LayeredDensity {
    partition: LayerPartition,
    layers: Vec<LayerModel>,
    tail: TailGaussian,
    log_scale: f64,
    mass_inside: f64,
    mass_tail: f64,
    normalizer: f64,
    moment_cap: usize,
    counters: Arc<EvalCounters>,
}

fn layer_mass(tt: &ExtendedTT) -> Result<f64> {
    let v: Vec<Vec<f64>> = tt
        .bases()
        .iter()
        .map(|b| (0..b.size()).map(|j| b.weighted_monomial_integral(0, j)).collect())
        .collect();
    tt.contract_rank1(&v)
}

/// Shared angular bases for a `d`-dimensional chart.
fn angular_bases(d: usize, opts: &DensityOptions) -> Result<Vec<Arc<OrthonormalBasis1D>>> {
    let mut out = vec![Arc::new(trig_basis(opts.trig_size))];
    for i in 1..d - 1 {
        out.push(Arc::new(angular_basis(i, opts.angular_size, opts.tau_mant)?));
    }
    Ok(out)
}

fn build_layer(
    prior: &LogDensity,
    chart: &PolarChart,
    angular: &[Arc<OrthonormalBasis1D>],
    opts: &DensityOptions,
) -> Result<(LayerModel, LayerReport)> {
    let l = chart.layer();
    let d = chart.dim();
    let mut bases = vec![Arc::new(radial_basis(chart.radial_interval(), opts.radial_size, d, opts.tau_mant)?)];
    bases.extend(angular.iter().cloned());
    let mut rng = seeded_rng(opts.seed, l as u64);
    let samples = sample_layer(&mut rng, chart, prior, opts.samples_per_layer)?;
    let fit_opts = FitOptions { seed: opts.fit.seed.wrapping_add(l as u64), ..opts.fit.clone() };
    let (tt, fit) = fit_als(&samples.points, &samples.values, bases, &fit_opts)?;
    let (mut neg, mut abs) = (0.0, 0.0);
    for k in 0..samples.len() {
        let v = tt.evaluate(samples.point(k))?;
        abs += v.abs();
        if v < 0.0 {
            neg -= v;
        }
    }
    let mass = layer_mass(&tt)?;
    let report = LayerReport {
        layer: l,
        fit,
        log_offset: samples.log_offset,
        clamped_fraction: if abs > 0.0 { neg / abs } else { 0.0 },
        samples: samples.len(),
    };
    Ok((LayerModel { tt, log_offset: samples.log_offset, mass }, report))
}

impl LayeredDensity {
    /// Reconstructs `prior` on every shell of `partition` and attaches the tail.
    pub fn build(prior: &LogDensity, partition: &LayerPartition, opts: &DensityOptions) -> Result<(Self, BuildReport)> {
        check_dim(partition.dim(), prior.dim())?;
        if partition.num_layers() == 0 || opts.samples_per_layer == 0 {
            return Err(Error::InvalidArgument("need at least one layer and one sample per layer".into()));
        }
        let angular = angular_bases(partition.dim(), opts)?;
        let built: Vec<(LayerModel, LayerReport)> = partition
            .charts()
            .par_iter()
            .map(|chart| {
                build_layer(prior, chart, &angular, opts)
                    .map_err(|e| Error::Layer { layer: chart.layer(), source: Box::new(e) })
            })
            .collect::<Result<_>>()?;
        let (layers, reports): (Vec<_>, Vec<_>) = built.into_iter().unzip();
        let density_calls = reports.iter().map(|r| r.samples).sum();
        let ld = Self::assemble(partition.clone(), layers, opts.moment_cap)?;
        let tail = ld.resolve_tail(&opts.tail, prior)?;
        let ld = ld.with_tail(tail, opts.seed)?;
        Ok((ld, BuildReport { layers: reports, density_calls }))
    }

    /// Combines fitted layers; the tail is a placeholder until [`Self::with_tail`].
    fn assemble(partition: LayerPartition, layers: Vec<LayerModel>, moment_cap: usize) -> Result<Self> {
        if layers.len() != partition.num_layers() {
            return Err(Error::ShapeMismatch(format!("{} layers for {} shells", layers.len(), partition.num_layers())));
        }
        let log_scale = layers.iter().map(|l| l.log_offset).fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = layers.iter().map(|l| (l.log_offset - log_scale).exp() * l.mass).collect();
        let total_abs: f64 = scaled.iter().map(|m| m.abs()).sum();
        for (l, m) in scaled.iter().enumerate() {
            if *m < -1e-10 * total_abs {
                return Err(Error::NegativeLayerMass { layer: l, mass: *m });
            }
        }
        let mass_inside: f64 = scaled.iter().sum();
        if !(mass_inside > 0.0) {
            return Err(Error::NegativeLayerMass { layer: 0, mass: mass_inside });
        }
        let d = partition.dim();
        let tail = TailGaussian::new(DVector::from_column_slice(partition.center()), DMatrix::identity(d, d))?;
        Ok(LayeredDensity {
            partition,
            layers,
            tail,
            log_scale,
            mass_inside,
            mass_tail: 0.0,
            normalizer: 1.0 / mass_inside,
            moment_cap,
            counters: Arc::default(),
        })
    }

    fn resolve_tail(&self, spec: &TailSpec, prior: &LogDensity) -> Result<TailGaussian> {
        let d = self.dim();
        let center = DVector::from_column_slice(self.partition.center());
        match spec {
            TailSpec::Standard => TailGaussian::new(center, DMatrix::identity(d, d)),
            TailSpec::Spherical { mean, std } => {
                check_dim(d, mean.len())?;
                if !(*std > 0.0) {
                    return Err(Error::InvalidArgument(format!("tail deviation must be positive, got {std}")));
                }
                TailGaussian::new(DVector::from_column_slice(mean), DMatrix::identity(d, d) * (std * std))
            }
            TailSpec::Gaussian { mean, cov } => {
                check_dim(d, mean.len())?;
                check_dim(d, cov.len())?;
                let flat: Vec<f64> = cov.iter().flatten().cloned().collect();
                check_dim(d * d, flat.len())?;
                TailGaussian::new(DVector::from_column_slice(mean), DMatrix::from_row_slice(d, d, &flat))
            }
            TailSpec::Laplace => {
                let fit = laplace_affine(prior, self.partition.center(), &LaplaceOptions::default())?;
                let cov = &fit.map.h * fit.map.h.transpose();
                TailGaussian::new(fit.map.m, cov)
            }
            TailSpec::Surrogate => {
                let id = TransportMap::Affine(AffineMap::identity(d));
                let m0 = self.moment(&id, &vec![0; d])?;
                let (mean, cov) = self.mean_and_cov(&id)?;
                TailGaussian::new(mean / m0, cov / m0)
            }
        }
    }

    /// Attaches a tail Gaussian and fixes the normalization constants.
    pub fn with_tail(mut self, mut tail: TailGaussian, seed: u64) -> Result<Self> {
        check_dim(self.dim(), tail.mean.len())?;
        let p_in = tail.compute_outside_mass(&self.partition, seed);
        if !(p_in > 0.0) {
            return Err(Error::InvalidArgument("tail Gaussian has no mass inside the covered ball".into()));
        }
        tail.kappa = self.mass_inside / p_in;
        self.mass_tail = tail.kappa * tail.p_out;
        self.normalizer = 1.0 / (self.mass_inside + self.mass_tail);
        self.tail = tail;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    pub fn partition(&self) -> &LayerPartition {
        &self.partition
    }

    pub fn layers(&self) -> &[LayerModel] {
        &self.layers
    }

    pub fn tail(&self) -> &TailGaussian {
        &self.tail
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// Surrogate mass inside the ball, in units of `exp(log_scale)`.
    pub fn mass_inside(&self) -> f64 {
        self.mass_inside
    }

    /// Tail mass, in units of `exp(log_scale)`.
    pub fn mass_tail(&self) -> f64 {
        self.mass_tail
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Probability of the covered ball under the normalized surrogate.
    pub fn covered_mass(&self) -> f64 {
        self.normalizer * self.mass_inside
    }

    /// `log` of the estimated normalizing constant of the input density.
    pub fn log_evidence(&self) -> f64 {
        self.log_scale + (self.mass_inside + self.mass_tail).ln()
    }

    pub fn moment_cap(&self) -> usize {
        self.moment_cap
    }

    pub fn set_moment_cap(&mut self, cap: usize) {
        self.moment_cap = cap;
    }

    /// `(evaluations, clamped evaluations)` since construction.
    pub fn eval_counts(&self) -> (u64, u64) {
        (self.counters.evaluations.load(Ordering::Relaxed), self.counters.clamped.load(Ordering::Relaxed))
    }

    fn layer_weight(&self, l: usize) -> f64 {
        (self.layers[l].log_offset - self.log_scale).exp()
    }

    /// Normalized surrogate density at `x`.
    ///
    /// # Panics
    /// If `x` has the wrong dimension.
    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "point dimension");
        self.counters.evaluations.fetch_add(1, Ordering::Relaxed);
        match self.partition.cartesian_to_polar(x) {
            Ok((l, hat)) => {
                let v = self.layers[l].tt.evaluate(&hat).unwrap_or(0.0);
                if v < 0.0 {
                    self.counters.clamped.fetch_add(1, Ordering::Relaxed);
                    0.0
                } else {
                    self.normalizer * self.layer_weight(l) * v
                }
            }
            Err(_) => self.normalizer * self.tail.kappa * self.tail.log_pdf(x).exp(),
        }
    }

    /// `log` of [`Self::eval`], `-inf` where the surrogate is clamped.
    pub fn log_eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "point dimension");
        self.counters.evaluations.fetch_add(1, Ordering::Relaxed);
        match self.partition.cartesian_to_polar(x) {
            Ok((l, hat)) => {
                let v = self.layers[l].tt.evaluate(&hat).unwrap_or(0.0);
                if v <= 0.0 {
                    if v < 0.0 {
                        self.counters.clamped.fetch_add(1, Ordering::Relaxed);
                    }
                    f64::NEG_INFINITY
                } else {
                    self.normalizer.ln() + self.layers[l].log_offset - self.log_scale + v.ln()
                }
            }
            Err(_) => (self.normalizer * self.tail.kappa).ln() + self.tail.log_pdf(x),
        }
    }

    fn check_order(&self, alpha: &[u32]) -> Result<()> {
        check_dim(self.dim(), alpha.len())?;
        let order: usize = alpha.iter().map(|&a| a as usize).sum();
        if order > self.moment_cap {
            return Err(Error::CapExceeded { order, cap: self.moment_cap });
        }
        Ok(())
    }

    /// `sum_l w_l int z^beta tt_l |det J|` with `z = x - center`.
    fn monomial_integral(&self, beta: &[u32], cache: &mut MomentCache) -> Result<f64> {
        if let Some(v) = cache.totals.get(beta) {
            return Ok(*v);
        }
        let d = self.dim();
        let mut total = 0.0;
        for (l, layer) in self.layers.iter().enumerate() {
            let bases = layer.tt.bases();
            let mut vectors = Vec::with_capacity(d);
            for coord in 0..d {
                // (sin power, cos power) of this chart coordinate
                let key = match coord {
                    0 => (l, 0, beta.iter().sum::<u32>(), 0),
                    1 => (l, 1, beta[1], beta[0]),
                    c => (l, c, beta[..c].iter().sum::<u32>(), beta[c]),
                };
                let v = cache.vectors.entry(key).or_insert_with(|| {
                    let b = &bases[coord];
                    (0..b.size())
                        .map(|j| {
                            if coord == 0 {
                                b.weighted_monomial_integral(key.2 as usize, j)
                            } else {
                                b.basis_times_trigpower_integral(j, key.2 as usize, key.3 as usize)
                            }
                        })
                        .collect()
                });
                vectors.push(v.clone());
            }
            total += self.layer_weight(l) * layer.tt.contract_rank1(&vectors)?;
        }
        cache.totals.insert(beta.to_vec(), total);
        Ok(total)
    }

    /// `int (Hx + M)^alpha f` over the covered ball.
    pub fn moment_affine(&self, map: &AffineMap, alpha: &[u32]) -> Result<f64> {
        self.check_order(alpha)?;
        self.moment_affine_cached(map, alpha, &mut MomentCache::default())
    }

    fn moment_affine_cached(&self, map: &AffineMap, alpha: &[u32], cache: &mut MomentCache) -> Result<f64> {
        let d = self.dim();
        check_dim(d, map.m.len())?;
        // Hx + M = Hz + (Hc + M)
        let c = DVector::from_column_slice(self.partition.center());
        let shift = &map.h * c + &map.m;
        let mut acc: HashMap<Vec<u32>, f64> = HashMap::from([(vec![0; d], 1.0)]);
        for k in 0..d {
            let ak = alpha[k];
            if ak == 0 {
                continue;
            }
            let row: Vec<f64> = (0..d).map(|i| map.h[(k, i)]).collect();
            let mut terms: Vec<(Vec<u32>, f64)> = Vec::new();
            for j in 0..=ak {
                let outer = binomial(ak, j) * shift[k].powi((ak - j) as i32);
                if outer == 0.0 {
                    continue;
                }
                for beta in compositions(j, d) {
                    let coef = multinomial(j, &beta)
                        * beta.iter().zip(&row).map(|(&b, h)| h.powi(b as i32)).product::<f64>();
                    if coef != 0.0 {
                        terms.push((beta, outer * coef));
                    }
                }
            }
            let mut next: HashMap<Vec<u32>, f64> = HashMap::new();
            for (b0, c0) in &acc {
                for (b1, c1) in &terms {
                    let key: Vec<u32> = b0.iter().zip(b1).map(|(a, b)| a + b).collect();
                    *next.entry(key).or_insert(0.0) += c0 * c1;
                }
            }
            acc = next;
        }
        let mut keys: Vec<&Vec<u32>> = acc.keys().collect();
        keys.sort();
        let mut s = 0.0;
        for beta in keys {
            s += acc[beta] * self.monomial_integral(beta, cache)?;
        }
        Ok(self.normalizer * s)
    }

    /// `int T(x)^alpha f` over the covered ball for a polynomial map.
    pub fn moment_polynomial(&self, components: &[MultiPoly], alpha: &[u32]) -> Result<f64> {
        self.check_order(alpha)?;
        check_dim(self.dim(), components.len())?;
        self.moment_polynomial_cached(components, alpha, &mut MomentCache::default())
    }

    fn moment_polynomial_cached(&self, components: &[MultiPoly], alpha: &[u32], cache: &mut MomentCache) -> Result<f64> {
        let d = self.dim();
        let shift: Vec<MultiPoly> = (0..d)
            .map(|i| MultiPoly::constant(d, self.partition.center()[i]).add(&MultiPoly::variable(d, i)))
            .collect();
        let in_z: Vec<MultiPoly> = components.iter().map(|p| p.compose(&shift)).collect();
        let poly = monomial_of(&in_z, alpha);
        let mut s = 0.0;
        for (beta, c) in poly.terms() {
            s += c * self.monomial_integral(beta, cache)?;
        }
        Ok(self.normalizer * s)
    }

    /// Closed-form moment for affine or polynomial maps.
    pub fn moment(&self, map: &TransportMap, alpha: &[u32]) -> Result<f64> {
        if let Some(a) = map.as_affine() {
            return self.moment_affine(a, alpha);
        }
        match map.as_polynomials() {
            Some(p) => self.moment_polynomial(&p, alpha),
            None => Err(Error::InvalidArgument("closed-form moments need a polynomial map".into())),
        }
    }

    /// Mean and covariance of the pushed-forward surrogate (tail excluded).
    ///
    /// Non-polynomial maps fall back to [`Self::mean_and_cov_sampled`] with a
    /// fixed seed.
    pub fn mean_and_cov(&self, map: &TransportMap) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = self.dim();
        check_dim(d, map.dim())?;
        if self.moment_cap < 2 {
            return Err(Error::CapExceeded { order: 2, cap: self.moment_cap });
        }
        let unit = |i: usize, j: Option<usize>| {
            let mut a = vec![0u32; d];
            a[i] += 1;
            if let Some(j) = j {
                a[j] += 1;
            }
            a
        };
        let mut cache = MomentCache::default();
        let (mean, second) = if let Some(a) = map.as_affine() {
            let mean = (0..d).map(|i| self.moment_affine_cached(a, &unit(i, None), &mut cache)).collect::<Result<Vec<_>>>()?;
            let mean = DVector::from_vec(mean);
            let centered = AffineMap { h: a.h.clone(), m: &a.m - &mean };
            let mut cache = MomentCache::default();
            let mut cov = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] = self.moment_affine_cached(&centered, &unit(i, Some(j)), &mut cache)?;
                    cov[(j, i)] = cov[(i, j)];
                }
            }
            (mean, cov)
        } else if let Some(polys) = map.as_polynomials() {
            let mean = (0..d)
                .map(|i| self.moment_polynomial_cached(&polys, &unit(i, None), &mut cache))
                .collect::<Result<Vec<_>>>()?;
            let centered: Vec<MultiPoly> = polys
                .iter()
                .zip(&mean)
                .map(|(p, m)| p.add(&MultiPoly::constant(d, -m)))
                .collect();
            let mut cov = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] = self.moment_polynomial_cached(&centered, &unit(i, Some(j)), &mut cache)?;
                    cov[(j, i)] = cov[(i, j)];
                }
            }
            (DVector::from_vec(mean), cov)
        } else {
            return self.mean_and_cov_sampled(map, DEFAULT_QOI_SAMPLES, false, &mut seeded_rng(0, 0));
        };
        Ok((mean, second))
    }

    /// Mean and covariance from the stratified estimator.
    pub fn mean_and_cov_sampled<R: Rng + ?Sized>(
        &self,
        map: &TransportMap,
        n: usize,
        include_tail: bool,
        rng: &mut R,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = self.dim();
        let q = |y: &[f64]| {
            let mut v = y.to_vec();
            for i in 0..d {
                for j in i..d {
                    v.push(y[i] * y[j]);
                }
            }
            v
        };
        let (est, _) = self.qoi_vector(map, &q, n, include_tail, rng)?;
        let mean = DVector::from_column_slice(&est[..d]);
        let mut cov = DMatrix::zeros(d, d);
        let mut k = d;
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] = est[k] - mean[i] * mean[j];
                cov[(j, i)] = cov[(i, j)];
                k += 1;
            }
        }
        Ok((mean, cov))
    }

    /// Raw moments `int y_i^j f` for `j = 0..=max_degree`.
    pub fn marginal(&self, map: &TransportMap, i: usize, max_degree: usize) -> Result<Vec<f64>> {
        let d = self.dim();
        if i >= d {
            return Err(Error::InvalidArgument(format!("marginal index {i} out of range for d={d}")));
        }
        if max_degree > self.moment_cap {
            return Err(Error::CapExceeded { order: max_degree, cap: self.moment_cap });
        }
        let polys = map
            .as_polynomials()
            .ok_or_else(|| Error::InvalidArgument("closed-form marginals need a polynomial map".into()))?;
        let mut cache = MomentCache::default();
        (0..=max_degree)
            .map(|j| {
                let mut a = vec![0u32; d];
                a[i] = j as u32;
                match map.as_affine() {
                    Some(aff) => self.moment_affine_cached(aff, &a, &mut cache),
                    None => self.moment_polynomial_cached(&polys, &a, &mut cache),
                }
            })
            .collect()
    }

    /// Stratified estimate of `E[Q(T(x))]` with its standard error.
    ///
    /// Each shell is sampled `n` times from its normalized chart weight; the
    /// tail is sampled from its Gaussian when `include_tail` is set.
    pub fn moment_qoi<R, Q>(&self, map: &TransportMap, q: Q, n: usize, include_tail: bool, rng: &mut R) -> Result<(f64, f64)>
    where
        R: Rng + ?Sized,
        Q: Fn(&[f64]) -> f64 + Sync,
    {
        let (est, se) = self.qoi_vector(map, &|y: &[f64]| vec![q(y)], n, include_tail, rng)?;
        Ok((est[0], se[0]))
    }

    /// Vector-valued version of [`Self::moment_qoi`].
    pub fn qoi_vector<R, Q>(
        &self,
        map: &TransportMap,
        q: &Q,
        n: usize,
        include_tail: bool,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>)>
    where
        R: Rng + ?Sized,
        Q: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        let d = self.dim();
        check_dim(d, map.dim())?;
        if n < 2 {
            return Err(Error::InvalidArgument("need at least two samples per layer".into()));
        }
        let mut est: Vec<f64> = Vec::new();
        let mut var: Vec<f64> = Vec::new();
        let mut accumulate = |rows: Vec<Vec<f64>>, scale: f64| {
            let m = rows[0].len();
            if est.is_empty() {
                est = vec![0.0; m];
                var = vec![0.0; m];
            }
            let nf = rows.len() as f64;
            for c in 0..m {
                let mean = rows.iter().map(|r| r[c]).sum::<f64>() / nf;
                let v = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / (nf - 1.0);
                est[c] += scale * mean;
                var[c] += scale * scale * v / nf;
            }
        };
        for (l, chart) in self.partition.charts().iter().enumerate() {
            let pts = sample_chart_points(rng, chart, n);
            let tt = &self.layers[l].tt;
            let rows = pts
                .par_chunks(d)
                .map(|xh| {
                    let f = tt.evaluate(xh)?.max(0.0);
                    let y = map.apply(&chart.polar_to_cartesian_unchecked(xh))?;
                    Ok(q(&y).into_iter().map(|v| v * f).collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            accumulate(rows, self.normalizer * self.layer_weight(l) * chart.layer_weight_mass());
        }
        if include_tail {
            let draws: Vec<Vec<f64>> = (0..n).map(|_| self.tail.draw(rng)).collect();
            let r = self.partition.outer_radius();
            let center = self.partition.center();
            let rows = draws
                .par_iter()
                .map(|x| {
                    let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                    let y = map.apply(x)?;
                    let vals = q(&y);
                    Ok(if r2.sqrt() >= r { vals } else { vec![0.0; vals.len()] })
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            accumulate(rows, self.normalizer * self.tail.kappa);
        }
        Ok((est, var.into_iter().map(f64::sqrt).collect()))
    }

    pub fn to_file(&self, metadata: DensityMetadata) -> DensityFile {
        DensityFile {
            format: DENSITY_FORMAT.to_string(),
            version: DENSITY_VERSION,
            partition: self.partition.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile { tt: l.tt.to_file(), log_offset: l.log_offset, mass: l.mass })
                .collect(),
            tail: TailFile {
                mean: self.tail.mean.as_slice().to_vec(),
                cov: (0..self.dim()).map(|i| self.tail.cov.row(i).iter().cloned().collect()).collect(),
                p_out: self.tail.p_out,
                p_out_se: self.tail.p_out_se,
                kappa: self.tail.kappa,
            },
            log_scale: self.log_scale,
            mass_inside: self.mass_inside,
            mass_tail: self.mass_tail,
            normalizer: self.normalizer,
            moment_cap: self.moment_cap,
            metadata,
        }
    }

    pub fn from_file(f: &DensityFile) -> Result<Self> {
        if f.format != DENSITY_FORMAT || f.version != DENSITY_VERSION {
            return Err(Error::Serialization(format!("unsupported density format {} v{}", f.format, f.version)));
        }
        let d = f.partition.dim();
        if f.layers.len() != f.partition.num_layers() || f.tail.mean.len() != d || f.tail.cov.len() != d {
            return Err(Error::Serialization("inconsistent density header".into()));
        }
        let layers = f
            .layers
            .iter()
            .map(|l| Ok(LayerModel { tt: ExtendedTT::from_file(&l.tt)?, log_offset: l.log_offset, mass: l.mass }))
            .collect::<Result<Vec<_>>>()?;
        for l in &layers {
            check_dim(d, l.tt.dim()).map_err(|e| Error::Serialization(e.to_string()))?;
        }
        let flat: Vec<f64> = f.tail.cov.iter().flatten().cloned().collect();
        if flat.len() != d * d {
            return Err(Error::Serialization("tail covariance has the wrong shape".into()));
        }
        let mut tail = TailGaussian::new(DVector::from_column_slice(&f.tail.mean), DMatrix::from_row_slice(d, d, &flat))?;
        tail.p_out = f.tail.p_out;
        tail.p_out_se = f.tail.p_out_se;
        tail.kappa = f.tail.kappa;
        Ok(LayeredDensity {
            partition: f.partition.clone(),
            layers,
            tail,
            log_scale: f.log_scale,
            mass_inside: f.mass_inside,
            mass_tail: f.mass_tail,
            normalizer: f.normalizer,
            moment_cap: f.moment_cap,
            counters: Arc::default(),
        })
    }
}

#[derive(Default)]
struct MomentCache {
    // (layer, chart coordinate, first exponent, second exponent)
    vectors: HashMap<(usize, usize, u32, u32), Vec<f64>>,
    totals: HashMap<Vec<u32>, f64>,
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn multinomial(j: u32, beta: &[u32]) -> f64 {
    let mut rest = j;
    let mut out = 1.0;
    for &b in beta {
        out *= binomial(rest, b);
        rest -= b;
    }
    out
}

/// All `beta` in `N_0^d` with `|beta| = j`, in lexicographic order.
pub fn compositions(j: u32, d: usize) -> Vec<Vec<u32>> {
    fn rec(rest: u32, slot: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slot + 1 == cur.len() {
            cur[slot] = rest;
            out.push(cur.clone());
            return;
        }
        for v in 0..=rest {
            cur[slot] = v;
            rec(rest - v, slot + 1, cur, out);
        }
    }
    let mut out = Vec::new();
    if d == 0 {
        return out;
    }
    rec(j, 0, &mut vec![0; d], &mut out);
    out
}

/// Projection coefficients `int p_k df` from raw moments, where `coeffs[k]`
/// lists `p_k` in ascending monomial powers.
pub fn project_moments(moments: &[f64], coeffs: &[Vec<f64>]) -> Result<Vec<f64>> {
    coeffs
        .iter()
        .map(|c| {
            if c.len() > moments.len() {
                return Err(Error::ShapeMismatch(format!("degree {} needs more than {} moments", c.len() - 1, moments.len())));
            }
            Ok(c.iter().zip(moments).map(|(a, m)| a * m).sum())
        })
        .collect()
}

/// Polynomials orthonormal under the measure with the given raw moments,
/// from the Cholesky factor of the Hankel matrix `[m_{i+j}]`.
///
/// Row `k` of the result holds the ascending coefficients of the degree-`k`
/// polynomial; `moments` must contain at least `2n - 1` entries.
pub fn hankel_orthonormal(moments: &[f64], n: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 || moments.len() < 2 * n - 1 {
        return Err(Error::ShapeMismatch(format!("{} moments for {n} polynomials", moments.len())));
    }
    let h = DMatrix::from_fn(n, n, |i, j| moments[i + j]);
    let l = h
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("moment matrix is not positive definite".into()))?
        .l();
    let inv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::InvalidArgument("singular moment matrix".into()))?;
    Ok((0..n).map(|k| (0..=k).map(|j| inv[(k, j)]).collect()).collect())
}

pub const DENSITY_FORMAT: &str = "ttdensity-layered";
pub const DENSITY_VERSION: u32 = 1;

/// Build provenance stored with a serialized surrogate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DensityMetadata {
    pub seed: u64,
    pub samples_per_layer: usize,
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub tt: TTFile,
    pub log_offset: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFile {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub p_out: f64,
    pub p_out_se: f64,
    pub kappa: f64,
}

/// Versioned JSON container for a [`LayeredDensity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityFile {
    pub format: String,
    pub version: u32,
    pub partition: LayerPartition,
    pub layers: Vec<LayerFile>,
    pub tail: TailFile,
    pub log_scale: f64,
    pub mass_inside: f64,
    pub mass_tail: f64,
    pub normalizer: f64,
    pub moment_cap: usize,
    pub metadata: DensityMetadata,
}
