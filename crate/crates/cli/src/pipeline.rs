//! Shared surrogate construction with call accounting.

use std::sync::atomic::Ordering;

use anyhow::Result;
use ttdensity_core::{BuildReport, DensityOptions, LayerPartition, LayeredDensity, LogDensity, TransportMap};

pub struct Surrogate {
    pub density: LayeredDensity,
    pub build: BuildReport,
    /// Target evaluations spent inside the build.
    pub calls: u64,
}

impl Surrogate {
    /// Largest bond dimension over all layers.
    pub fn max_rank(&self) -> usize {
        self.density.layers().iter().map(|l| l.tt.max_rank()).max().unwrap_or(0)
    }

    /// Largest bond dimension after rounding every layer at relative `eps`.
    pub fn max_rounded_rank(&self, eps: f64) -> usize {
        self.density.layers().iter().map(|l| l.tt.round(eps).tt.max_rank()).max().unwrap_or(0)
    }
}

/// Pulls `target` back through `map` and fits the layered surrogate.
pub fn build_surrogate(
    target: &LogDensity,
    map: &TransportMap,
    radius: f64,
    layers: usize,
    opts: &DensityOptions,
) -> Result<Surrogate> {
    let (counted, calls) = target.counted();
    let prior = ttdensity_core::perturbed_prior(&counted, map)?;
    let partition = LayerPartition::equidistant(layers, radius, map.dim())?;
    let (density, build) = LayeredDensity::build(&prior, &partition, opts)?;
    Ok(Surrogate { density, build, calls: calls.load(Ordering::Relaxed) })
}
