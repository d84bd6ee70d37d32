//! Gaussian targets `N(mu 1, sigma^2 I)` with known moments and evidence.

use anyhow::{bail, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use ttdensity_core::sampling::seeded_rng;
use ttdensity_core::{laplace_affine, AffineMap, LaplaceOptions, LayeredDensity, LogDensity, TransportMap};

use crate::config::{ExperimentConfig, Transport};
use crate::metrics::{divergences, quantile, rel_err_mat, rel_err_vec};
use crate::pipeline::build_surrogate;
use crate::report::{RunOutput, SavedSurrogate, Table};

/// Relative tolerance at which layer ranks are reported after rounding.
pub const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct GaussianRow {
    pub d: usize,
    pub sigma2: f64,
    pub layers: usize,
    pub samples_per_layer: usize,
    pub repetition: usize,
    pub seed: u64,
    pub calls: u64,
    pub err_z: f64,
    pub err_mu: f64,
    pub err_sigma: f64,
    pub kl: f64,
    pub kl_se: f64,
    pub hellinger: f64,
    pub max_rank: usize,
    pub max_rounded_rank: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BandRow {
    pub d: usize,
    pub sigma2: f64,
    pub layers: usize,
    pub samples_per_layer: usize,
    pub metric: String,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    pub config_hash: String,
}

/// One cell of the sweep.
pub fn run_cell(
    cfg: &ExperimentConfig,
    d: usize,
    sigma2: f64,
    layers: usize,
    n: usize,
    repetition: usize,
) -> Result<(GaussianRow, Option<LayeredDensity>)> {
    let seed = cfg.seed.wrapping_add(repetition as u64);
    let sigma = sigma2.sqrt();
    let mu = vec![cfg.mean; d];
    let target = LogDensity::isotropic_normal(mu.clone(), sigma);
    let (target, counter) = target.counted();
    let map = match &cfg.transport {
        Transport::Exact => AffineMap::scaled(sigma, mu.clone()),
        Transport::Laplace => laplace_affine(&target, &vec![0.0; d], &LaplaceOptions::default())?.map,
        Transport::Convex { .. } => bail!("the gaussian scenario has no convex transport"),
    };
    let transport_calls = counter.load(std::sync::atomic::Ordering::Relaxed);
    let map = TransportMap::Affine(map);
    let opts = cfg.density_options(n, seed);
    let s = build_surrogate(&target, &map, cfg.partition.radius, layers, &opts)?;
    let density = &s.density;

    let err_z = (1.0 - density.log_evidence().exp()).abs();
    let (mean, cov) = density.mean_and_cov(&map)?;
    let exact_mean = DVector::from_vec(mu.clone());
    let exact_cov = DMatrix::identity(d, d) * sigma2;
    let err_mu = rel_err_vec(&mean, &exact_mean);
    let err_sigma = rel_err_mat(&cov, &exact_cov);

    // exact draws pulled back to the reference space
    let mut rng = seeded_rng(seed, 0x6b6c);
    let mut points = Vec::with_capacity(cfg.kl_samples);
    let mut log_f = Vec::with_capacity(cfg.kl_samples);
    let log_det = (0..d).map(|_| sigma.ln()).sum::<f64>();
    for _ in 0..cfg.kl_samples {
        let y: Vec<f64> = mu.iter().map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        let x = map.invert(&y, 1e-14, 50)?;
        log_f.push(target.eval(&y)? + log_det);
        points.push(x);
    }
    let (kl, kl_se, hellinger) = divergences(density, &points, &log_f);

    let row = GaussianRow {
        d,
        sigma2,
        layers,
        samples_per_layer: n,
        repetition,
        seed,
        calls: transport_calls + s.calls,
        err_z,
        err_mu,
        err_sigma,
        kl,
        kl_se,
        hellinger,
        max_rank: s.max_rank(),
        max_rounded_rank: s.max_rounded_rank(RANK_TOLERANCE),
        config_hash: cfg.short_hash(),
    };
    Ok((row, cfg.save_surrogates.then(|| s.density.clone())))
}

#[derive(Debug, Clone, Default)]
pub struct GaussianReport {
    pub rows: Vec<GaussianRow>,
    pub bands: Vec<BandRow>,
    pub surrogates: Vec<SavedSurrogate>,
}

impl GaussianReport {
    pub fn into_output(self, cfg: &ExperimentConfig) -> Result<RunOutput> {
        let mut out = RunOutput::new(cfg);
        out.tables.push(Table::from_rows("gaussian.csv", &self.rows)?);
        out.tables.push(Table::from_rows("gaussian_bands.csv", &self.bands)?);
        out.summary = serde_json::json!({
            "cells": self.rows.len(),
            "max_err_z": self.rows.iter().map(|r| r.err_z).fold(0.0, f64::max),
            "max_err_mu": self.rows.iter().map(|r| r.err_mu).fold(0.0, f64::max),
            "max_err_sigma": self.rows.iter().map(|r| r.err_sigma).fold(0.0, f64::max),
            "max_rounded_rank": self.rows.iter().map(|r| r.max_rounded_rank).max().unwrap_or(0),
        });
        out.surrogates = self.surrogates;
        Ok(out)
    }
}

/// Sweeps dimensions, variances, layer counts and sample sizes.
pub fn run_gaussian(cfg: &ExperimentConfig) -> Result<GaussianReport> {
    let mut report = GaussianReport::default();
    for &d in &cfg.d {
        for &sigma2 in &cfg.variances {
            for &layers in &cfg.partition.layers {
                for &n in &cfg.samples_per_layer {
                    let mut cell = Vec::with_capacity(cfg.repetitions);
                    for rep in 0..cfg.repetitions {
                        let (row, surrogate) = run_cell(cfg, d, sigma2, layers, n, rep)?;
                        if let Some(s) = surrogate {
                            let name = format!("gaussian_d{d}_s{sigma2:e}_L{layers}_N{n}_r{rep}");
                            report.surrogates.push(SavedSurrogate::new(name, &s, row.seed, n, cfg));
                        }
                        cell.push(row);
                    }
                    let metrics: [(&str, fn(&GaussianRow) -> f64); 5] = [
                        ("err_z", |r| r.err_z),
                        ("err_mu", |r| r.err_mu),
                        ("err_sigma", |r| r.err_sigma),
                        ("kl", |r| r.kl),
                        ("hellinger", |r| r.hellinger),
                    ];
                    for (name, get) in metrics {
                        let v: Vec<f64> = cell.iter().map(get).collect();
                        report.bands.push(BandRow {
                            d,
                            sigma2,
                            layers,
                            samples_per_layer: n,
                            metric: name.to_string(),
                            q10: quantile(&v, 0.1),
                            q50: quantile(&v, 0.5),
                            q90: quantile(&v, 0.9),
                            config_hash: cfg.short_hash(),
                        });
                    }
                    report.rows.extend(cell);
                }
            }
        }
    }
    Ok(report)
}
