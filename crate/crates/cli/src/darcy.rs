//! Log-normal Darcy posterior on the unit square.
//!
//! Data come from a random `y* ~ N(0, I)`; the surrogate is built in
//! Laplace coordinates and compared with a reference (nested quadrature for
//! `d = 2`, a long preconditioned chain otherwise) and with matched-budget
//! random-walk Metropolis.

use std::collections::BTreeMap;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use anyhow::{anyhow, bail, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use ttdensity_core::quadrature::adaptive_2d_vec;
use ttdensity_core::sampling::seeded_rng;
use ttdensity_core::{
    laplace_affine, perturbed_prior, posterior_density, rwm_mcmc, synthesize_observations, AffineMap, DarcyLiteForward,
    GaussianNoiseModel, LaplaceOptions, LayeredDensity, LogDensity, MCMCConfig, TransportMap,
};

use crate::config::{DarcyReference, ExperimentConfig};
use crate::metrics::{median, rel_err_mat, rel_err_vec};
use crate::pipeline::build_surrogate;
use crate::report::{RunOutput, SavedSurrogate, Table};

/// One synthetic inverse problem.
pub struct DarcyProblem {
    pub forward: Arc<DarcyLiteForward>,
    pub noise: Arc<GaussianNoiseModel>,
    pub target: LogDensity,
    pub laplace: AffineMap,
    /// Posterior evaluations spent finding the Laplace map.
    pub laplace_calls: u64,
}

impl DarcyProblem {
    pub fn new(cfg: &ExperimentConfig, d: usize) -> Result<Self> {
        let sigma = cfg.noise_std.ok_or_else(|| anyhow!("darcy needs noise_std"))?;
        let mut forward = DarcyLiteForward::new(cfg.darcy.grid, d, cfg.darcy.observations_per_side)?;
        forward.amplitude = cfg.darcy.amplitude;
        let mut rng = seeded_rng(cfg.seed, 0xda00 + d as u64);
        let truth: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let noise = synthesize_observations(&forward, &truth, sigma, &mut rng)?;
        let forward = Arc::new(forward);
        let noise = Arc::new(noise);
        let target = posterior_density(noise.clone(), forward.clone());
        let (counted, calls) = target.counted();
        let fit = laplace_affine(&counted, &vec![0.0; d], &LaplaceOptions::default())?;
        Ok(DarcyProblem { forward, noise, target, laplace: fit.map, laplace_calls: calls.load(Ordering::Relaxed) })
    }

    pub fn map(&self) -> TransportMap {
        TransportMap::Affine(self.laplace.clone())
    }

    pub fn dim(&self) -> usize {
        self.forward.dim
    }

    /// Pullback of the posterior through the Laplace map.
    pub fn pulled_back(&self) -> Result<LogDensity> {
        Ok(perturbed_prior(&self.target, &self.map())?)
    }

    /// `y = m + H x` applied to moments in Laplace coordinates.
    fn push_moments(&self, mean_x: &DVector<f64>, cov_x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let h = &self.laplace.h;
        (&self.laplace.m + h * mean_x, h * cov_x * h.transpose())
    }
}

/// Reference evidence and moments of the posterior.
#[derive(Debug, Clone)]
pub struct Reference {
    pub kind: &'static str,
    pub log_z: f64,
    /// Error estimate of `log_z` (quadrature) or its standard error (sampling).
    pub log_z_error: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub evaluations: u64,
    pub converged: bool,
}

/// Nested adaptive quadrature of the pulled-back posterior over
/// `[-half_width, half_width]^2`.
pub fn quadrature_reference(problem: &DarcyProblem, half_width: f64, tolerance: f64) -> Result<Reference> {
    if problem.dim() != 2 {
        bail!("quadrature reference needs d = 2, got {}", problem.dim());
    }
    let prior = problem.pulled_back()?;
    let c0 = prior.eval(&[0.0, 0.0])?;
    let mut failure = None;
    let r = adaptive_2d_vec(
        |x1, x2| match prior.eval(&[x1, x2]) {
            Ok(l) => {
                let g = (l - c0).exp();
                vec![g, x1 * g, x2 * g, x1 * x1 * g, x1 * x2 * g, x2 * x2 * g]
            }
            Err(e) => {
                failure.get_or_insert(e);
                vec![0.0; 6]
            }
        },
        (-half_width, half_width),
        (-half_width, half_width),
        0.0,
        tolerance,
    );
    if let Some(e) = failure {
        return Err(e.into());
    }
    let v = &r.value;
    let mean_x = DVector::from_vec(vec![v[1] / v[0], v[2] / v[0]]);
    let s = DMatrix::from_row_slice(2, 2, &[v[3], v[4], v[4], v[5]]) / v[0];
    let cov_x = s - &mean_x * mean_x.transpose();
    let (mean, cov) = problem.push_moments(&mean_x, &cov_x);
    Ok(Reference {
        kind: "quadrature",
        log_z: c0 + v[0].ln(),
        log_z_error: r.error / v[0],
        mean,
        cov,
        evaluations: r.evaluations as u64,
        converged: r.converged,
    })
}

/// Draws from the Laplace approximation with unnormalized posterior and
/// proposal log-values, all in Laplace coordinates.
#[derive(Debug, Clone)]
pub struct ImportanceSample {
    pub points: Vec<Vec<f64>>,
    pub log_target: Vec<f64>,
    pub log_proposal: Vec<f64>,
}

impl ImportanceSample {
    pub fn draw(problem: &DarcyProblem, n: usize, seed: u64) -> Result<Self> {
        let d = problem.dim();
        let prior = problem.pulled_back()?;
        let mut rng = seeded_rng(seed, 0x6b6c + d as u64);
        let log_norm = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
        let mut s = ImportanceSample { points: Vec::with_capacity(n), log_target: Vec::new(), log_proposal: Vec::new() };
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            s.log_target.push(prior.eval(&x)?);
            s.log_proposal.push(log_norm - 0.5 * x.iter().map(|v| v * v).sum::<f64>());
            s.points.push(x);
        }
        Ok(s)
    }

    fn log_weights(&self) -> Vec<f64> {
        self.log_target.iter().zip(&self.log_proposal).map(|(t, p)| t - p).collect()
    }

    /// Log-evidence estimate and its delta-method standard error.
    pub fn log_evidence(&self) -> (f64, f64) {
        let lw = self.log_weights();
        let n = lw.len() as f64;
        let top = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lw.iter().map(|l| (l - top).exp()).collect();
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (top + mean.ln(), (var / n).sqrt() / mean)
    }

    /// Self-normalized estimate of `KL(posterior || surrogate)`.
    pub fn kl(&self, density: &LayeredDensity, log_z: f64) -> f64 {
        let lw = self.log_weights();
        let top = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for ((x, lt), l) in self.points.iter().zip(&self.log_target).zip(&lw) {
            let w = (l - top).exp();
            if w == 0.0 {
                continue;
            }
            num += w * (lt - log_z - density.log_eval(x));
            den += w;
        }
        num / den
    }
}

/// Long Laplace-preconditioned chain for the moments; evidence from `is`.
pub fn mcmc_reference(problem: &DarcyProblem, cfg: &ExperimentConfig, is: &ImportanceSample) -> Result<Reference> {
    let mut mc = MCMCConfig::new(
        cfg.mcmc.reference_steps,
        cfg.mcmc.reference_burn_in,
        problem.laplace.m.as_slice().to_vec(),
        cfg.seed ^ 0x7265_6665,
    );
    mc.proposal_factor = Some(factor_rows(&problem.laplace.h));
    mc.store_chain = false;
    let res = rwm_mcmc(&problem.target, &mc)?;
    let (log_z, log_z_error) = is.log_evidence();
    Ok(Reference {
        kind: "mcmc",
        log_z,
        log_z_error,
        mean: res.mean,
        cov: res.cov,
        evaluations: res.calls + is.points.len() as u64,
        converged: true,
    })
}

fn factor_rows(h: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..h.nrows()).map(|i| h.row(i).iter().cloned().collect()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DarcyRow {
    pub method: String,
    pub d: usize,
    pub layers: usize,
    pub samples_per_layer: usize,
    pub repetition: usize,
    pub seed: u64,
    pub calls: u64,
    pub err_z: Option<f64>,
    pub err_mu: f64,
    pub err_sigma: f64,
    pub kl: Option<f64>,
    pub reference: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DarcySummaryRow {
    pub d: usize,
    pub layers: usize,
    pub samples_per_layer: usize,
    pub calls: u64,
    pub surrogate_err_z: f64,
    pub surrogate_err_mu: f64,
    pub surrogate_err_sigma: f64,
    pub surrogate_kl: f64,
    pub mcmc_err_mu: f64,
    pub mcmc_err_sigma: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceRow {
    pub d: usize,
    pub kind: String,
    pub log_z: f64,
    pub log_z_error: f64,
    pub evaluations: u64,
    pub converged: bool,
    pub laplace_calls: u64,
    /// Components joined by `;`.
    pub mean: String,
    pub variances: String,
    pub truth: String,
    pub config_hash: String,
}

fn join(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, Default)]
pub struct DarcyReport {
    pub rows: Vec<DarcyRow>,
    pub summary: Vec<DarcySummaryRow>,
    pub references: Vec<ReferenceRow>,
    pub observations: Vec<Table>,
    pub surrogates: Vec<SavedSurrogate>,
}

impl DarcyReport {
    pub fn into_output(self, cfg: &ExperimentConfig) -> Result<RunOutput> {
        let mut out = RunOutput::new(cfg);
        out.tables.push(Table::from_rows("darcy.csv", &self.rows)?);
        out.tables.push(Table::from_rows("darcy_summary.csv", &self.summary)?);
        out.tables.push(Table::from_rows("darcy_reference.csv", &self.references)?);
        out.tables.extend(self.observations);
        out.summary = serde_json::json!({
            "points": self.summary.len(),
            "max_err_z": self.summary.iter().map(|r| r.surrogate_err_z).fold(0.0, f64::max),
            "max_err_mu": self.summary.iter().map(|r| r.surrogate_err_mu).fold(0.0, f64::max),
            "max_err_sigma": self.summary.iter().map(|r| r.surrogate_err_sigma).fold(0.0, f64::max),
        });
        out.surrogates = self.surrogates;
        Ok(out)
    }
}

/// Matched-budget preconditioned random-walk errors, one entry per chain.
fn mcmc_errors(problem: &DarcyProblem, reference: &Reference, budget: u64, cfg: &ExperimentConfig) -> Result<Vec<(u64, f64, f64)>> {
    let steps = budget.saturating_sub(1).max(3) as usize;
    let burn_in = ((steps as f64 * cfg.mcmc.burn_in_fraction) as usize).min(steps - 2);
    (0..cfg.mcmc.chains)
        .map(|c| {
            let seed = cfg.seed.wrapping_add(1_000_003 * (c as u64 + 1));
            let mut mc = MCMCConfig::new(steps, burn_in, problem.laplace.m.as_slice().to_vec(), seed);
            mc.proposal_factor = Some(factor_rows(&problem.laplace.h));
            mc.store_chain = false;
            let res = rwm_mcmc(&problem.target, &mc)?;
            Ok((seed, rel_err_vec(&res.mean, &reference.mean), rel_err_mat(&res.cov, &reference.cov)))
        })
        .collect()
}

pub fn run_darcy(cfg: &ExperimentConfig) -> Result<DarcyReport> {
    let hash = cfg.short_hash();
    let mut report = DarcyReport::default();
    for &d in &cfg.d {
        let problem = DarcyProblem::new(cfg, d)?;
        let mut obs = Vec::new();
        ttdensity_core::bayes::write_observations_csv(&mut obs, &problem.noise)?;
        report.observations.push(Table {
            name: format!("observations_d{d}.csv"),
            content: String::from_utf8(obs)?,
            rows: problem.noise.len(),
        });
        let is = ImportanceSample::draw(&problem, cfg.kl_samples, cfg.seed)?;
        let reference = match cfg.darcy.reference {
            DarcyReference::Quadrature { half_width, tolerance } => quadrature_reference(&problem, half_width, tolerance)?,
            DarcyReference::Mcmc => mcmc_reference(&problem, cfg, &is)?,
        };
        report.references.push(ReferenceRow {
            d,
            kind: reference.kind.into(),
            log_z: reference.log_z,
            log_z_error: reference.log_z_error,
            evaluations: reference.evaluations,
            converged: reference.converged,
            laplace_calls: problem.laplace_calls,
            mean: join(reference.mean.iter().cloned()),
            variances: join(reference.cov.diagonal().iter().cloned()),
            truth: join(problem.noise.truth.clone().unwrap_or_default()),
            config_hash: hash.clone(),
        });
        let map = problem.map();
        let mut mcmc_cache: BTreeMap<u64, Vec<(u64, f64, f64)>> = BTreeMap::new();
        for &layers in &cfg.partition.layers {
            for &n in &cfg.samples_per_layer {
                let mut errs = Vec::with_capacity(cfg.repetitions);
                let mut budget = 0;
                for rep in 0..cfg.repetitions {
                    let seed = cfg.seed.wrapping_add(rep as u64);
                    let s = build_surrogate(&problem.target, &map, cfg.partition.radius, layers, &cfg.density_options(n, seed))?;
                    let (m, c) = s.density.mean_and_cov(&map)?;
                    let calls = problem.laplace_calls + s.calls;
                    budget = budget.max(calls);
                    let err_z = (1.0 - (s.density.log_evidence() - reference.log_z).exp()).abs();
                    let (em, ec) = (rel_err_vec(&m, &reference.mean), rel_err_mat(&c, &reference.cov));
                    let kl = is.kl(&s.density, reference.log_z);
                    errs.push([err_z, em, ec, kl]);
                    report.rows.push(DarcyRow {
                        method: "surrogate".into(),
                        d,
                        layers,
                        samples_per_layer: n,
                        repetition: rep,
                        seed,
                        calls,
                        err_z: Some(err_z),
                        err_mu: em,
                        err_sigma: ec,
                        kl: Some(kl),
                        reference: reference.kind.into(),
                        config_hash: hash.clone(),
                    });
                    if cfg.save_surrogates {
                        let name = format!("darcy_d{d}_L{layers}_N{n}_r{rep}");
                        report.surrogates.push(SavedSurrogate::new(name, &s.density, seed, n, cfg));
                    }
                }
                if cfg.mcmc.chains > 0 && !mcmc_cache.contains_key(&budget) {
                    let chains = mcmc_errors(&problem, &reference, budget, cfg)?;
                    for (c, &(seed, em, ec)) in chains.iter().enumerate() {
                        report.rows.push(DarcyRow {
                            method: "mcmc".into(),
                            d,
                            layers,
                            samples_per_layer: n,
                            repetition: c,
                            seed,
                            calls: budget,
                            err_z: None,
                            err_mu: em,
                            err_sigma: ec,
                            kl: None,
                            reference: reference.kind.into(),
                            config_hash: hash.clone(),
                        });
                    }
                    mcmc_cache.insert(budget, chains);
                }
                let chains = mcmc_cache.get(&budget).cloned().unwrap_or_default();
                let col = |k: usize| median(&errs.iter().map(|e| e[k]).collect::<Vec<_>>());
                report.summary.push(DarcySummaryRow {
                    d,
                    layers,
                    samples_per_layer: n,
                    calls: budget,
                    surrogate_err_z: col(0),
                    surrogate_err_mu: col(1),
                    surrogate_err_sigma: col(2),
                    surrogate_kl: col(3),
                    mcmc_err_mu: median(&chains.iter().map(|e| e.1).collect::<Vec<_>>()),
                    mcmc_err_sigma: median(&chains.iter().map(|e| e.2).collect::<Vec<_>>()),
                    config_hash: hash.clone(),
                });
            }
        }
    }
    Ok(report)
}
