//! Experiment runner: configuration, scenarios and report output.

pub mod banana;
pub mod config;
pub mod darcy;
pub mod gaussian;
pub mod metrics;
pub mod pipeline;
pub mod report;

pub use config::{ExperimentConfig, Scenario};
pub use report::RunOutput;

use anyhow::Result;

/// Validates `cfg` and runs its scenario.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.scenario {
        Scenario::Gaussian => gaussian::run_gaussian(cfg)?.into_output(cfg),
        Scenario::Banana => banana::run_banana(cfg)?.into_output(cfg),
        Scenario::Darcy => darcy::run_darcy(cfg)?.into_output(cfg),
    }
}

/// Human-readable summary of a saved surrogate.
pub fn inspect(path: &std::path::Path) -> Result<String> {
    use std::fmt::Write;
    let text = std::fs::read_to_string(path)?;
    let file: ttdensity_core::DensityFile = serde_json::from_str(&text)?;
    let density = ttdensity_core::LayeredDensity::from_file(&file)?;
    let mut s = String::new();
    writeln!(s, "format      {} v{}", file.format, file.version)?;
    writeln!(s, "dimension   {}", density.dim())?;
    writeln!(s, "layers      {} up to radius {}", density.layers().len(), density.partition().outer_radius())?;
    let ranks: Vec<String> = density.layers().iter().map(|l| format!("{:?}", l.tt.ranks())).collect();
    writeln!(s, "ranks       {}", ranks.join(" "))?;
    writeln!(s, "log Z       {:.12e}", density.log_evidence())?;
    writeln!(s, "covered     {:.12e}", density.covered_mass())?;
    writeln!(s, "tail mass   {:.6e} (se {:.1e})", density.tail().p_out, density.tail().p_out_se)?;
    writeln!(s, "seed        {}", file.metadata.seed)?;
    writeln!(s, "samples     {} per layer", file.metadata.samples_per_layer)?;
    if let Some(h) = &file.metadata.config_hash {
        writeln!(s, "config      {h}")?;
    }
    Ok(s)
}
