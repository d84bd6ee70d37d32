//! Experiment configuration, loaded from JSON or TOML.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ttdensity_core::{DensityOptions, FitOptions, TailSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Gaussian,
    Banana,
    Darcy,
}

/// How the reference-space map is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transport {
    /// The exact map where one is known (Gaussian, banana).
    Exact,
    /// Mode and inverse square root Hessian of the target.
    Laplace,
    /// `(1 - t) laplace + t exact` for each listed `t`.
    Convex { t: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    /// Layer counts to sweep over; shells are equidistant up to `radius`.
    pub layers: Vec<usize>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSpec {
    pub radial_degree: usize,
    /// Highest frequency on the first angle; `2 m + 1` functions.
    pub trig_modes: usize,
    pub angular_degree: usize,
    /// Working precision of basis generation, in significant decimal digits.
    pub precision: u32,
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec { radial_degree: 7, trig_modes: 0, angular_degree: 0, precision: 100 }
    }
}

/// Random-walk Metropolis baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcSpec {
    /// Independent chains per comparison point.
    pub chains: usize,
    /// Fraction of each matched budget spent on burn-in.
    pub burn_in_fraction: f64,
    /// Long reference chain (Darcy, `d > 2`).
    pub reference_steps: usize,
    pub reference_burn_in: usize,
}

impl Default for McmcSpec {
    fn default() -> Self {
        McmcSpec { chains: 20, burn_in_fraction: 0.1, reference_steps: 1_000_000, reference_burn_in: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DarcyReference {
    /// Nested adaptive quadrature in Laplace coordinates (`d = 2` only).
    Quadrature { half_width: f64, tolerance: f64 },
    /// Long preconditioned random-walk chain.
    Mcmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DarcySpec {
    pub grid: usize,
    pub observations_per_side: usize,
    pub amplitude: f64,
    pub reference: DarcyReference,
}

impl Default for DarcySpec {
    fn default() -> Self {
        DarcySpec {
            grid: 64,
            observations_per_side: 12,
            amplitude: 0.25,
            reference: DarcyReference::Quadrature { half_width: 8.0, tolerance: 1e-6 },
        }
    }
}

fn default_repetitions() -> usize {
    1
}

fn default_kl_samples() -> usize {
    10_000
}

fn default_mean() -> f64 {
    1.0
}

/// One experiment. Scenario-specific keys are ignored by other scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Dimensions to sweep (the banana is always 2-D).
    #[serde(default)]
    pub d: Vec<usize>,
    /// Gaussian: variances `sigma^2` of `Sigma = sigma^2 I`.
    #[serde(default)]
    pub variances: Vec<f64>,
    /// Gaussian: every entry of the mean.
    #[serde(default = "default_mean")]
    pub mean: f64,
    /// Banana: covariance of the Gaussian fed into the quadratic map.
    #[serde(default)]
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Darcy: observation noise standard deviation.
    #[serde(default)]
    pub noise_std: Option<f64>,
    pub transport: Transport,
    pub partition: PartitionSpec,
    #[serde(default)]
    pub basis: BasisSpec,
    #[serde(default)]
    pub fit: FitOptions,
    pub samples_per_layer: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub tail: TailSpec,
    #[serde(default = "default_kl_samples")]
    pub kl_samples: usize,
    #[serde(default)]
    pub mcmc: McmcSpec,
    #[serde(default)]
    pub darcy: DarcySpec,
    /// Also write every built surrogate as JSON under `surrogates/`.
    #[serde(default)]
    pub save_surrogates: bool,
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            _ => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.partition.layers.is_empty(), "partition.layers is empty");
        ensure!(self.partition.layers.iter().all(|&l| l >= 1), "every layer count must be at least 1");
        ensure!(self.partition.radius > 0.0 && self.partition.radius.is_finite(), "partition.radius must be positive");
        ensure!(!self.samples_per_layer.is_empty(), "samples_per_layer is empty");
        ensure!(self.samples_per_layer.iter().all(|&n| n >= 2), "samples_per_layer entries must be at least 2");
        ensure!(self.repetitions >= 1, "repetitions must be at least 1");
        ensure!(self.basis.precision >= 16, "basis.precision must be at least 16 digits");
        ensure!(self.fit.max_rank >= self.fit.initial_rank && self.fit.initial_rank >= 1, "invalid rank bounds");
        ensure!(
            (0.0..1.0).contains(&self.fit.validation_fraction),
            "fit.validation_fraction must lie in [0, 1)"
        );
        ensure!(self.kl_samples >= 2, "kl_samples must be at least 2");
        if let Transport::Convex { t } = &self.transport {
            ensure!(!t.is_empty(), "transport.t is empty");
            ensure!(t.iter().all(|v| (0.0..=1.0).contains(v)), "transport.t entries must lie in [0, 1]");
        }
        match self.scenario {
            Scenario::Gaussian => {
                ensure!(!self.d.is_empty() && self.d.iter().all(|&d| d >= 2), "gaussian needs d >= 2");
                ensure!(!self.variances.is_empty(), "gaussian needs variances");
                ensure!(self.variances.iter().all(|v| *v > 0.0 && v.is_finite()), "variances must be positive");
                ensure!(self.mean.is_finite(), "mean must be finite");
            }
            Scenario::Banana => {
                ensure!(self.d.is_empty() || self.d == [2], "the banana is two-dimensional");
                if let Some(c) = &self.covariance {
                    ensure!(c.len() == 2 && c.iter().all(|r| r.len() == 2), "covariance must be 2 x 2");
                    ensure!(c[0][1] == c[1][0], "covariance must be symmetric");
                    ensure!(c[0][0] > 0.0 && c[0][0] * c[1][1] - c[0][1] * c[1][0] > 0.0, "covariance must be positive definite");
                }
                ensure!(self.mcmc.chains >= 1, "mcmc.chains must be at least 1");
                ensure!((0.0..1.0).contains(&self.mcmc.burn_in_fraction), "mcmc.burn_in_fraction must lie in [0, 1)");
            }
            Scenario::Darcy => {
                ensure!(!self.d.is_empty() && self.d.iter().all(|&d| d >= 2), "darcy needs d >= 2");
                let s = self.noise_std.context("darcy needs noise_std")?;
                ensure!(s > 0.0 && s.is_finite(), "noise_std must be positive");
                ensure!(self.darcy.grid >= 8, "darcy.grid must be at least 8");
                ensure!(self.darcy.observations_per_side >= 1, "darcy.observations_per_side must be at least 1");
                ensure!(!matches!(self.transport, Transport::Exact | Transport::Convex { .. }), "darcy only supports laplace transport");
                match self.darcy.reference {
                    DarcyReference::Quadrature { half_width, tolerance } => {
                        ensure!(self.d.iter().all(|&d| d == 2), "quadrature reference needs d = 2");
                        ensure!(half_width > 0.0 && tolerance > 0.0, "invalid quadrature settings");
                    }
                    DarcyReference::Mcmc => {
                        ensure!(self.mcmc.reference_steps > self.mcmc.reference_burn_in, "reference chain shorter than burn-in");
                    }
                }
            }
        }
        if self.output_dir.is_empty() {
            bail!("output_dir is empty");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short prefix of [`Self::hash`] used in table rows.
    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }

    pub fn density_options(&self, samples_per_layer: usize, seed: u64) -> DensityOptions {
        DensityOptions {
            radial_size: self.basis.radial_degree + 1,
            trig_size: 2 * self.basis.trig_modes + 1,
            angular_size: self.basis.angular_degree + 1,
            tau_mant: self.basis.precision,
            samples_per_layer,
            fit: FitOptions { seed, ..self.fit.clone() },
            tail: self.tail.clone(),
            seed,
            ..DensityOptions::default()
        }
    }
}
