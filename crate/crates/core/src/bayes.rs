//! Bayesian posteriors with Gaussian observation noise, two small forward
//! models and a random-walk Metropolis baseline.
//!
//! The posterior of a parameter `y` with standard normal prior given data
//! `delta = G(y) + noise` is `exp(-potential(y) - |y|^2 / 2)` up to the
//! evidence, which is never needed explicitly.

use std::io::Write;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::sampling::seeded_rng;
use crate::transport::LogDensity;

/// Observations with i.i.d. Gaussian noise of standard deviation `sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoiseModel {
    pub observations: Vec<f64>,
    pub sigma: f64,
    /// Parameter that generated the data, when synthetic.
    #[serde(default)]
    pub truth: Option<Vec<f64>>,
}

impl GaussianNoiseModel {
    pub fn new(observations: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("noise deviation must be positive, got {sigma}")));
        }
        if observations.is_empty() {
            return Err(Error::InvalidArgument("at least one observation is required".into()));
        }
        Ok(GaussianNoiseModel { observations, sigma, truth: None })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// `|delta - g|^2 / (2 sigma^2)`.
    pub fn potential(&self, g: &[f64]) -> Result<f64> {
        check_dim(self.observations.len(), g.len())?;
        let s: f64 = self.observations.iter().zip(g).map(|(d, v)| (d - v).powi(2)).sum();
        Ok(0.5 * s / (self.sigma * self.sigma))
    }
}

/// Parameter-to-observation map.
pub trait ForwardModel: Send + Sync {
    fn dim(&self) -> usize;
    fn num_observations(&self) -> usize;
    fn solve(&self, y: &[f64]) -> Result<Vec<f64>>;
}

/// `G(y) = A y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearForward {
    pub a: DMatrix<f64>,
}

impl LinearForward {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("forward matrix has non-finite entries".into()));
        }
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidArgument("forward matrix is empty".into()));
        }
        Ok(LinearForward { a })
    }

    /// Exact posterior mean and covariance under a standard normal prior.
    pub fn posterior(&self, noise: &GaussianNoiseModel) -> Result<(DVector<f64>, DMatrix<f64>)> {
        check_dim(self.a.nrows(), noise.len())?;
        let d = self.a.ncols();
        let s2 = noise.sigma * noise.sigma;
        let precision = self.a.transpose() * &self.a / s2 + DMatrix::identity(d, d);
        let chol = precision
            .cholesky()
            .ok_or_else(|| Error::SolverFailure("posterior precision not positive definite".into()))?;
        let cov = chol.inverse();
        let rhs = self.a.transpose() * DVector::from_column_slice(&noise.observations) / s2;
        let mean = chol.solve(&rhs);
        Ok((mean, (&cov + cov.transpose()) * 0.5))
    }
}

impl ForwardModel for LinearForward {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn num_observations(&self) -> usize {
        self.a.nrows()
    }

    fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.a.ncols(), y.len())?;
        Ok((&self.a * DVector::from_column_slice(y)).as_slice().to_vec())
    }
}

/// Log-normal diffusion on the unit square with homogeneous Dirichlet
/// boundary and unit source, observed at interior points.
///
/// `log a(x, y) = shift + sum_k c k^-2 cos(2 pi k1 x1) cos(2 pi k2 x2) y_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarcyLiteForward {
    /// Interior nodes per direction.
    pub n: usize,
    pub dim: usize,
    pub amplitude: f64,
    /// Constant added to the log-coefficient.
    #[serde(default)]
    pub shift: f64,
    pub observation_points: Vec<[f64; 2]>,
}

impl DarcyLiteForward {
    pub const DEFAULT_GRID: usize = 64;
    pub const DEFAULT_AMPLITUDE: f64 = 0.25;

    /// Grid `n`, `dim` modes and a `per_side x per_side` observation grid.
    pub fn new(n: usize, dim: usize, per_side: usize) -> Result<Self> {
        if n < 8 {
            return Err(Error::InvalidArgument(format!("grid size {n} below 8")));
        }
        if dim == 0 || per_side == 0 {
            return Err(Error::InvalidArgument("need at least one mode and one observation".into()));
        }
        let step = 1.0 / (per_side + 1) as f64;
        let mut observation_points = Vec::with_capacity(per_side * per_side);
        for i in 0..per_side {
            for j in 0..per_side {
                observation_points.push([(i + 1) as f64 * step, (j + 1) as f64 * step]);
            }
        }
        Ok(DarcyLiteForward { n, dim, amplitude: Self::DEFAULT_AMPLITUDE, shift: 0.0, observation_points })
    }

    /// The 144-point configuration on the default grid.
    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(Self::DEFAULT_GRID, dim, 12)
    }

    /// Wave numbers of the first `dim` modes, ordered by total frequency.
    pub fn wave_numbers(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.dim);
        let mut total = 1;
        while out.len() < self.dim {
            for k1 in 0..=total {
                if out.len() == self.dim {
                    break;
                }
                out.push((k1, total - k1));
            }
            total += 1;
        }
        out
    }

    pub fn mesh_width(&self) -> f64 {
        1.0 / (self.n + 1) as f64
    }

    /// `log a` at a physical point.
    pub fn log_coefficient(&self, p: [f64; 2], y: &[f64]) -> f64 {
        let tau = 2.0 * std::f64::consts::PI;
        let mut s = self.shift;
        for (k, ((k1, k2), yk)) in self.wave_numbers().into_iter().zip(y).enumerate() {
            let w = self.amplitude / ((k + 1) * (k + 1)) as f64;
            s += w * (tau * k1 as f64 * p[0]).cos() * (tau * k2 as f64 * p[1]).cos() * yk;
        }
        s
    }

    /// Nodal solution on the `(n + 2)^2` grid including boundary nodes,
    /// row-major with `x1` varying fastest.
    pub fn solve_field(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, y.len())?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverFailure(format!("non-finite parameter {y:?}")));
        }
        let n = self.n;
        let m = n + 2;
        let h = self.mesh_width();
        let modes = self.wave_numbers();
        let tau = 2.0 * std::f64::consts::PI;
        // separable evaluation of the log-coefficient on the full grid
        let grid: Vec<f64> = (0..m).map(|i| i as f64 * h).collect();
        let mut loga = vec![self.shift; m * m];
        for (k, (&(k1, k2), yk)) in modes.iter().zip(y).enumerate() {
            let w = self.amplitude / ((k + 1) * (k + 1)) as f64 * yk;
            let cx: Vec<f64> = grid.iter().map(|&x| (tau * k1 as f64 * x).cos()).collect();
            let cy: Vec<f64> = grid.iter().map(|&x| (tau * k2 as f64 * x).cos()).collect();
            for j in 0..m {
                for i in 0..m {
                    loga[j * m + i] += w * cx[i] * cy[j];
                }
            }
        }
        let a: Vec<f64> = loga.iter().map(|v| v.exp()).collect();
        if a.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::SolverFailure("non-finite diffusion coefficient".into()));
        }
        let face = |p: usize, q: usize| 2.0 * a[p] * a[q] / (a[p] + a[q]);
        let mut band = BandMatrix::new(n * n, n);
        for j in 0..n {
            for i in 0..n {
                let row = j * n + i;
                let p = (j + 1) * m + (i + 1);
                let (w, e, s, no) = (face(p, p - 1), face(p, p + 1), face(p, p - m), face(p, p + m));
                band.set(row, row, w + e + s + no);
                if i > 0 {
                    band.set(row, row - 1, -w);
                }
                if j > 0 {
                    band.set(row, row - n, -s);
                }
            }
        }
        let mut rhs = vec![h * h; n * n];
        band.cholesky_in_place()?;
        band.solve_in_place(&mut rhs);
        let mut field = vec![0.0; m * m];
        for j in 0..n {
            for i in 0..n {
                field[(j + 1) * m + (i + 1)] = rhs[j * n + i];
            }
        }
        Ok(field)
    }

    /// Bilinear interpolation of a nodal field.
    pub fn interpolate(&self, field: &[f64], p: [f64; 2]) -> f64 {
        let m = self.n + 2;
        let h = self.mesh_width();
        let locate = |x: f64| {
            let s = (x / h).clamp(0.0, (m - 1) as f64);
            let i = (s.floor() as usize).min(m - 2);
            (i, s - i as f64)
        };
        let (i, tx) = locate(p[0]);
        let (j, ty) = locate(p[1]);
        let v = |ii: usize, jj: usize| field[jj * m + ii];
        (1.0 - tx) * (1.0 - ty) * v(i, j) + tx * (1.0 - ty) * v(i + 1, j) + (1.0 - tx) * ty * v(i, j + 1) + tx * ty * v(i + 1, j + 1)
    }
}

impl ForwardModel for DarcyLiteForward {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_observations(&self) -> usize {
        self.observation_points.len()
    }

    fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        darcy_solve(self, y)
    }
}

/// Observed values of the diffusion solution.
pub fn darcy_solve(forward: &DarcyLiteForward, y: &[f64]) -> Result<Vec<f64>> {
    let field = forward.solve_field(y)?;
    Ok(forward.observation_points.iter().map(|&p| forward.interpolate(&field, p)).collect())
}

/// Symmetric positive definite band matrix, lower band stored row-wise.
struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    fn new(n: usize, bw: usize) -> Self {
        BandMatrix { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    // entry (i, j) with i - bw <= j <= i
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (self.bw + j - i)
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    fn cholesky_in_place(&mut self) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let jlo = lo.max(j.saturating_sub(bw));
                let mut s = self.data[self.idx(i, j)];
                for k in jlo..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::SolverFailure(format!("matrix not positive definite at row {i}")));
                    }
                    let k = self.idx(i, i);
                    self.data[k] = s.sqrt();
                } else {
                    let k = self.idx(i, j);
                    self.data[k] = s / self.data[self.idx(j, j)];
                }
            }
        }
        Ok(())
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.data[self.idx(i, k)] * b[k];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.data[self.idx(k, i)] * b[k];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
    }
}

/// Unnormalized log-posterior `-potential(y) - |y|^2 / 2`.
pub fn log_posterior(noise: &GaussianNoiseModel, forward: &dyn ForwardModel, y: &[f64]) -> Result<f64> {
    check_dim(forward.dim(), y.len())?;
    let g = forward.solve(y).map_err(|e| Error::Evaluation { point: y.to_vec(), reason: e.to_string() })?;
    let prior: f64 = y.iter().map(|v| v * v).sum();
    Ok(-noise.potential(&g)? - 0.5 * prior)
}

/// The log-posterior as a shareable density.
pub fn posterior_density(noise: Arc<GaussianNoiseModel>, forward: Arc<dyn ForwardModel>) -> LogDensity {
    let d = forward.dim();
    LogDensity::fallible(d, move |y| log_posterior(&noise, forward.as_ref(), y))
}

/// `delta = G(y*) + sigma xi` with standard normal `xi`.
pub fn synthesize_observations<R: Rng + ?Sized>(
    forward: &dyn ForwardModel,
    truth: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<GaussianNoiseModel> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise deviation must be non-negative, got {sigma}")));
    }
    let clean = forward.solve(truth)?;
    let observations = clean.iter().map(|g| g + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    // a noiseless data set still needs a positive likelihood width
    let width = if sigma > 0.0 { sigma } else { f64::MIN_POSITIVE.sqrt() };
    let mut noise = GaussianNoiseModel::new(observations, width)?;
    noise.truth = Some(truth.to_vec());
    Ok(noise)
}

/// Random-walk Metropolis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCMCConfig {
    /// Total number of proposals, burn-in included.
    pub steps: usize,
    pub burn_in: usize,
    /// Initial proposal standard deviation (multiplies `proposal_factor`).
    pub proposal_scale: f64,
    pub seed: u64,
    pub start: Vec<f64>,
    /// Proposal shape `L` (steps are `scale L xi`); identity when absent.
    #[serde(default)]
    pub proposal_factor: Option<Vec<Vec<f64>>>,
    /// Robbins-Monro target during burn-in.
    #[serde(default = "default_acceptance")]
    pub target_acceptance: f64,
    #[serde(default = "default_true")]
    pub store_chain: bool,
}

fn default_acceptance() -> f64 {
    0.234
}

fn default_true() -> bool {
    true
}

impl MCMCConfig {
    pub fn new(steps: usize, burn_in: usize, start: Vec<f64>, seed: u64) -> Self {
        MCMCConfig {
            steps,
            burn_in,
            proposal_scale: 2.38 / (start.len() as f64).sqrt(),
            seed,
            start,
            proposal_factor: None,
            target_acceptance: default_acceptance(),
            store_chain: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps <= self.burn_in {
            return Err(Error::InvalidArgument(format!("steps {} must exceed burn-in {}", self.steps, self.burn_in)));
        }
        if !(self.proposal_scale > 0.0) {
            return Err(Error::InvalidArgument("proposal scale must be positive".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidArgument("target acceptance must lie in (0, 1)".into()));
        }
        if let Some(f) = &self.proposal_factor {
            if f.len() != self.start.len() || f.iter().any(|r| r.len() != self.start.len()) {
                return Err(Error::ShapeMismatch("proposal factor must be d x d".into()));
            }
        }
        Ok(())
    }
}

/// Output of [`rwm_mcmc`]. Statistics cover the post burn-in states.
#[derive(Debug, Clone)]
pub struct MCMCResult {
    pub chain: Vec<Vec<f64>>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub acceptance_rate: f64,
    pub calls: u64,
    pub final_scale: f64,
    /// Post burn-in states kept.
    pub kept: usize,
}

/// Gaussian random-walk Metropolis. The proposal scale is adapted by a
/// Robbins-Monro recursion on the acceptance probability during burn-in
/// and frozen afterwards.
pub fn rwm_mcmc(logdensity: &LogDensity, cfg: &MCMCConfig) -> Result<MCMCResult> {
    cfg.validate()?;
    let d = logdensity.dim();
    check_dim(d, cfg.start.len())?;
    let (density, counter) = logdensity.counted();
    let factor = match &cfg.proposal_factor {
        Some(rows) => DMatrix::from_fn(d, d, |i, j| rows[i][j]),
        None => DMatrix::identity(d, d),
    };
    let mut rng = seeded_rng(cfg.seed, 0x3c3c);
    let mut x = DVector::from_column_slice(&cfg.start);
    let mut lx = density.eval(x.as_slice())?;
    if !lx.is_finite() {
        return Err(Error::Evaluation { point: cfg.start.clone(), reason: "log-density not finite at start".into() });
    }
    let mut log_scale = cfg.proposal_scale.ln();
    let mut accepted = 0usize;
    let kept = cfg.steps - cfg.burn_in;
    let mut chain = Vec::with_capacity(if cfg.store_chain { kept } else { 0 });
    // Welford accumulators
    let mut mean = DVector::zeros(d);
    let mut m2 = DMatrix::zeros(d, d);
    for step in 0..cfg.steps {
        let xi = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let prop = &x + &factor * xi * log_scale.exp();
        let lp = density.eval(prop.as_slice()).unwrap_or(f64::NEG_INFINITY);
        let alpha = if lp.is_nan() { 0.0 } else { (lp - lx).min(0.0).exp() };
        if rng.gen::<f64>() < alpha {
            x = prop;
            lx = lp;
            if step >= cfg.burn_in {
                accepted += 1;
            }
        }
        if step < cfg.burn_in {
            let gain = 1.0 / ((step + 1) as f64).powf(0.6);
            log_scale += gain * (alpha - cfg.target_acceptance);
        } else {
            let k = (step - cfg.burn_in + 1) as f64;
            let delta = &x - &mean;
            mean += &delta / k;
            m2 += &delta * (&x - &mean).transpose();
            if cfg.store_chain {
                chain.push(x.as_slice().to_vec());
            }
        }
    }
    let cov = if kept > 1 { m2 / (kept - 1) as f64 } else { DMatrix::zeros(d, d) };
    Ok(MCMCResult {
        chain,
        mean,
        cov,
        acceptance_rate: accepted as f64 / kept as f64,
        calls: counter.load(Ordering::Relaxed),
        final_scale: log_scale.exp(),
        kept,
    })
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means with `sqrt(n)` batches.
pub fn batch_means_se(series: &[f64]) -> f64 {
    let n = series.len();
    let batches = ((n as f64).sqrt() as usize).max(2);
    let size = n / batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..batches).map(|b| series[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// `index,value[,truth...]` rows; truth parameters go in a trailing header comment.
pub fn write_observations_csv<W: Write>(mut w: W, noise: &GaussianNoiseModel) -> std::io::Result<()> {
    if let Some(t) = &noise.truth {
        let s: Vec<String> = t.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "# truth={}", s.join(";"))?;
    }
    writeln!(w, "# sigma={:e}", noise.sigma)?;
    writeln!(w, "index,value")?;
    for (i, v) in noise.observations.iter().enumerate() {
        writeln!(w, "{i},{v:e}")?;
    }
    Ok(())
}

/// One chain state per row, `step,y0,y1,...`.
pub fn write_chain_csv<W: Write>(mut w: W, chain: &[Vec<f64>]) -> std::io::Result<()> {
    let d = chain.first().map_or(0, |s| s.len());
    let header: Vec<String> = (0..d).map(|i| format!("y{i}")).collect();
    writeln!(w, "step,{}", header.join(","))?;
    for (k, s) in chain.iter().enumerate() {
        let row: Vec<String> = s.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{k},{}", row.join(","))?;
    }
    Ok(())
}
