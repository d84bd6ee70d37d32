//! Banana target: a correlated Gaussian pushed through `(u1, u2 - u1^2 - 1)`.
//!
//! The surrogate is built through `(1 - t) laplace + t exact` and compared
//! with random-walk Metropolis at the same number of target evaluations.

use std::collections::BTreeMap;
use std::sync::atomic::Ordering;

use anyhow::{bail, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use ttdensity_core::transport::symmetric_sqrt;
use ttdensity_core::{
    laplace_affine, rwm_mcmc, AffineMap, LaplaceOptions, LogDensity, MCMCConfig, QuadraticMap, TransportMap,
};

use crate::config::{ExperimentConfig, Transport};
use crate::metrics::{median, rel_err_mat, rel_err_vec};
use crate::pipeline::build_surrogate;
use crate::report::{RunOutput, SavedSurrogate, Table};

pub const DEFAULT_COVARIANCE: [[f64; 2]; 2] = [[1.0, 0.9], [0.9, 1.0]];

/// The banana problem for a given input covariance.
#[derive(Debug, Clone)]
pub struct Banana {
    pub covariance: DMatrix<f64>,
}

impl Banana {
    pub fn new(covariance: DMatrix<f64>) -> Self {
        Banana { covariance }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let c = cfg.covariance.clone().unwrap_or_else(|| DEFAULT_COVARIANCE.iter().map(|r| r.to_vec()).collect());
        Self::new(DMatrix::from_fn(2, 2, |i, j| c[i][j]))
    }

    /// Log-density of the pushed-forward law (normalized).
    pub fn target(&self) -> Result<LogDensity> {
        let inner = LogDensity::gaussian(DVector::zeros(2), &self.covariance)?;
        // the quadratic map has unit Jacobian, so only the inverse is needed
        Ok(LogDensity::fallible(2, move |y| inner.eval(&[y[0], y[1] + y[0] * y[0] + 1.0])))
    }

    /// `banana(S x)` with `S` the symmetric square root of the covariance.
    pub fn exact_map(&self) -> Result<TransportMap> {
        let s = symmetric_sqrt(&self.covariance);
        Ok(TransportMap::compose(
            TransportMap::Quadratic(QuadraticMap::banana()),
            TransportMap::Affine(AffineMap::new(s, DVector::zeros(2))?),
        )?)
    }

    /// Analytic mean and covariance of the target.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let c = &self.covariance;
        let mean = DVector::from_vec(vec![0.0, -c[(0, 0)] - 1.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)] + 2.0 * c[(0, 0)] * c[(0, 0)]]);
        (mean, cov)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BananaRow {
    pub method: String,
    pub t: Option<f64>,
    pub layers: usize,
    pub samples_per_layer: usize,
    pub repetition: usize,
    pub seed: u64,
    pub calls: u64,
    pub err_mu: f64,
    pub err_sigma: f64,
    pub acceptance: Option<f64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BananaSummaryRow {
    pub t: f64,
    pub layers: usize,
    pub samples_per_layer: usize,
    pub calls: u64,
    pub surrogate_err_mu: f64,
    pub surrogate_err_sigma: f64,
    pub mcmc_err_mu: f64,
    pub mcmc_err_sigma: f64,
    pub ratio_mu: f64,
    pub ratio_sigma: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Default)]
pub struct BananaReport {
    pub rows: Vec<BananaRow>,
    pub summary: Vec<BananaSummaryRow>,
    pub surrogates: Vec<SavedSurrogate>,
}

impl BananaReport {
    pub fn into_output(self, cfg: &ExperimentConfig) -> Result<RunOutput> {
        let mut out = RunOutput::new(cfg);
        out.tables.push(Table::from_rows("banana.csv", &self.rows)?);
        out.tables.push(Table::from_rows("banana_summary.csv", &self.summary)?);
        out.summary = serde_json::json!({
            "points": self.summary.len(),
            "worst_ratio_mu": self.summary.iter().map(|r| r.ratio_mu).fold(0.0, f64::max),
            "worst_ratio_sigma": self.summary.iter().map(|r| r.ratio_sigma).fold(0.0, f64::max),
        });
        out.surrogates = self.surrogates;
        Ok(out)
    }
}

fn transport_weights(cfg: &ExperimentConfig) -> Vec<f64> {
    match &cfg.transport {
        Transport::Exact => vec![1.0],
        Transport::Laplace => vec![0.0],
        Transport::Convex { t } => t.clone(),
    }
}

/// Matched-budget random-walk Metropolis errors, one entry per chain.
pub fn mcmc_errors(
    banana: &Banana,
    budget: u64,
    start: &[f64],
    cfg: &ExperimentConfig,
) -> Result<Vec<(u64, f64, f64, f64)>> {
    let target = banana.target()?;
    let (mean, cov) = banana.moments();
    let steps = budget.saturating_sub(1).max(3) as usize;
    let burn_in = ((steps as f64 * cfg.mcmc.burn_in_fraction) as usize).min(steps - 2);
    (0..cfg.mcmc.chains)
        .map(|c| {
            let seed = cfg.seed.wrapping_add(1_000_003 * (c as u64 + 1));
            let mut mc = MCMCConfig::new(steps, burn_in, start.to_vec(), seed);
            mc.store_chain = false;
            let res = rwm_mcmc(&target, &mc)?;
            Ok((seed, rel_err_vec(&res.mean, &mean), rel_err_mat(&res.cov, &cov), res.acceptance_rate))
        })
        .collect()
}

pub fn run_banana(cfg: &ExperimentConfig) -> Result<BananaReport> {
    let banana = Banana::from_config(cfg);
    let (mean, cov) = banana.moments();
    let exact = banana.exact_map()?;
    let (target, counter) = banana.target()?.counted();
    let fit = laplace_affine(&target, &[0.0, 0.0], &LaplaceOptions::default())?;
    let laplace_calls = counter.load(Ordering::Relaxed);
    let laplace = TransportMap::Affine(fit.map.clone());
    let start = fit.map.m.as_slice().to_vec();
    let hash = cfg.short_hash();

    let mut report = BananaReport::default();
    let mut mcmc_cache: BTreeMap<u64, Vec<(u64, f64, f64, f64)>> = BTreeMap::new();
    for &t in &transport_weights(cfg) {
        let map = if t == 0.0 { laplace.clone() } else { TransportMap::convex(t, laplace.clone(), exact.clone())? };
        for &layers in &cfg.partition.layers {
            for &n in &cfg.samples_per_layer {
                let mut errs = Vec::with_capacity(cfg.repetitions);
                let mut budget = 0;
                for rep in 0..cfg.repetitions {
                    let seed = cfg.seed.wrapping_add(rep as u64);
                    let s = build_surrogate(&target, &map, cfg.partition.radius, layers, &cfg.density_options(n, seed))?;
                    let (m, c) = s.density.mean_and_cov(&map)?;
                    let calls = laplace_calls + s.calls;
                    budget = budget.max(calls);
                    let (em, ec) = (rel_err_vec(&m, &mean), rel_err_mat(&c, &cov));
                    if !em.is_finite() || !ec.is_finite() {
                        bail!("non-finite surrogate moments at t={t}, L={layers}, N={n}");
                    }
                    errs.push((em, ec));
                    report.rows.push(BananaRow {
                        method: "surrogate".into(),
                        t: Some(t),
                        layers,
                        samples_per_layer: n,
                        repetition: rep,
                        seed,
                        calls,
                        err_mu: em,
                        err_sigma: ec,
                        acceptance: None,
                        config_hash: hash.clone(),
                    });
                    if cfg.save_surrogates {
                        let name = format!("banana_t{t}_L{layers}_N{n}_r{rep}");
                        report.surrogates.push(SavedSurrogate::new(name, &s.density, seed, n, cfg));
                    }
                }
                if !mcmc_cache.contains_key(&budget) {
                    let chains = mcmc_errors(&banana, budget, &start, cfg)?;
                    for (c, &(seed, em, ec, acc)) in chains.iter().enumerate() {
                        report.rows.push(BananaRow {
                            method: "mcmc".into(),
                            t: None,
                            layers,
                            samples_per_layer: n,
                            repetition: c,
                            seed,
                            calls: budget,
                            err_mu: em,
                            err_sigma: ec,
                            acceptance: Some(acc),
                            config_hash: hash.clone(),
                        });
                    }
                    mcmc_cache.insert(budget, chains);
                }
                let chains = &mcmc_cache[&budget];
                let sm = median(&errs.iter().map(|e| e.0).collect::<Vec<_>>());
                let sc = median(&errs.iter().map(|e| e.1).collect::<Vec<_>>());
                let mm = median(&chains.iter().map(|e| e.1).collect::<Vec<_>>());
                let mc = median(&chains.iter().map(|e| e.2).collect::<Vec<_>>());
                report.summary.push(BananaSummaryRow {
                    t,
                    layers,
                    samples_per_layer: n,
                    calls: budget,
                    surrogate_err_mu: sm,
                    surrogate_err_sigma: sc,
                    mcmc_err_mu: mm,
                    mcmc_err_sigma: mc,
                    ratio_mu: sm / mm,
                    ratio_sigma: sc / mc,
                    config_hash: hash.clone(),
                });
            }
        }
    }
    Ok(report)
}
