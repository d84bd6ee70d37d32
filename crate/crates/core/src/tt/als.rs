//! Rank-adaptive alternating least squares from scattered samples.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Core, ExtendedTT};
use crate::basis::OrthonormalBasis1D;
use crate::error::{Error, Result};
use crate::sampling::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub initial_rank: usize,
    pub max_rank: usize,
    pub max_sweeps: usize,
    /// Relative training residual at which fitting stops.
    pub target_residual: f64,
    /// A sweep stagnates when it improves the residual by less than this fraction.
    pub stagnation: f64,
    /// Ridge weight relative to `trace(A^T A) / p`.
    pub ridge: f64,
    /// Fraction of samples held out for the reported validation residual.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            initial_rank: 1,
            max_rank: 4,
            max_sweeps: 30,
            target_residual: 1e-12,
            stagnation: 0.05,
            ridge: 1e-12,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Relative training residual after each sweep.
    pub sweep_residuals: Vec<f64>,
    pub validation_residual: Option<f64>,
    pub converged: bool,
    pub ranks: Vec<usize>,
    pub rank_increases: usize,
    pub warnings: Vec<String>,
}

struct Workspace {
    d: usize,
    n_samples: usize,
    // phi[i]: N x n_i, row-major
    phi: Vec<Vec<f64>>,
    // left[i]: N x r_i, product of cores 0..i
    left: Vec<Vec<f64>>,
    // right[i]: N x r_i, product of cores i..d
    right: Vec<Vec<f64>>,
}

fn basis_values(bases: &[Arc<OrthonormalBasis1D>], points: &[f64], idx: &[usize]) -> Vec<Vec<f64>> {
    let d = bases.len();
    bases
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let n = b.size();
            let mut out = vec![0.0; idx.len() * n];
            for (row, &k) in idx.iter().enumerate() {
                b.eval_all(points[k * d + i], &mut out[row * n..(row + 1) * n]);
            }
            out
        })
        .collect()
}

impl Workspace {
    fn new(phi: Vec<Vec<f64>>, n_samples: usize, d: usize) -> Self {
        let mut left = vec![Vec::new(); d + 1];
        let mut right = vec![Vec::new(); d + 1];
        left[0] = vec![1.0; n_samples];
        right[d] = vec![1.0; n_samples];
        Workspace { d, n_samples, phi, left, right }
    }

    fn update_left(&mut self, tt: &ExtendedTT, i: usize) {
        let c = &tt.cores[i];
        let mut out = vec![0.0; self.n_samples * c.r1];
        let mut slice = vec![0.0; c.r0 * c.r1];
        for k in 0..self.n_samples {
            c.weighted_slice(&self.phi[i][k * c.n..(k + 1) * c.n], &mut slice);
            let l = &self.left[i][k * c.r0..(k + 1) * c.r0];
            let o = &mut out[k * c.r1..(k + 1) * c.r1];
            for (a, la) in l.iter().enumerate() {
                for (b, ob) in o.iter_mut().enumerate() {
                    *ob += la * slice[a * c.r1 + b];
                }
            }
        }
        self.left[i + 1] = out;
    }

    fn update_right(&mut self, tt: &ExtendedTT, i: usize) {
        let c = &tt.cores[i];
        let mut out = vec![0.0; self.n_samples * c.r0];
        let mut slice = vec![0.0; c.r0 * c.r1];
        for k in 0..self.n_samples {
            c.weighted_slice(&self.phi[i][k * c.n..(k + 1) * c.n], &mut slice);
            let r = &self.right[i + 1][k * c.r1..(k + 1) * c.r1];
            let o = &mut out[k * c.r0..(k + 1) * c.r0];
            for (a, oa) in o.iter_mut().enumerate() {
                *oa = (0..c.r1).map(|b| slice[a * c.r1 + b] * r[b]).sum();
            }
        }
        self.right[i] = out;
    }

    fn refresh(&mut self, tt: &ExtendedTT) {
        for i in (0..self.d).rev() {
            self.update_right(tt, i);
        }
        for i in 0..self.d {
            self.update_left(tt, i);
        }
    }

    /// Model values using the left cache up to core `i` and right cache after it.
    fn predictions(&self, tt: &ExtendedTT, i: usize) -> Vec<f64> {
        let c = &tt.cores[i];
        let mut slice = vec![0.0; c.r0 * c.r1];
        (0..self.n_samples)
            .map(|k| {
                c.weighted_slice(&self.phi[i][k * c.n..(k + 1) * c.n], &mut slice);
                let l = &self.left[i][k * c.r0..(k + 1) * c.r0];
                let r = &self.right[i + 1][k * c.r1..(k + 1) * c.r1];
                let mut s = 0.0;
                for (a, la) in l.iter().enumerate() {
                    for (b, rb) in r.iter().enumerate() {
                        s += la * slice[a * c.r1 + b] * rb;
                    }
                }
                s
            })
            .collect()
    }

    /// Local design matrix of core `i`: rows `kron(left, phi_i, right)`.
    fn design(&self, tt: &ExtendedTT, i: usize) -> DMatrix<f64> {
        let c = &tt.cores[i];
        let p = c.r0 * c.n * c.r1;
        let mut a = DMatrix::zeros(self.n_samples, p);
        for k in 0..self.n_samples {
            let l = &self.left[i][k * c.r0..(k + 1) * c.r0];
            let ph = &self.phi[i][k * c.n..(k + 1) * c.n];
            let r = &self.right[i + 1][k * c.r1..(k + 1) * c.r1];
            for (x, la) in l.iter().enumerate() {
                for (j, pj) in ph.iter().enumerate() {
                    let lp = la * pj;
                    for (y, ry) in r.iter().enumerate() {
                        a[(k, (x * c.n + j) * c.r1 + y)] = lp * ry;
                    }
                }
            }
        }
        a
    }

    fn solve_core(&self, tt: &mut ExtendedTT, i: usize, values: &DVector<f64>, ridge: f64, sweep: usize) -> Result<()> {
        let a = self.design(tt, i);
        let mut ata = a.tr_mul(&a);
        let atb = a.tr_mul(values);
        let p = ata.nrows();
        let trace: f64 = (0..p).map(|k| ata[(k, k)]).sum();
        let lambda = ridge * trace / p as f64;
        for k in 0..p {
            ata[(k, k)] += lambda.max(f64::MIN_POSITIVE);
        }
        let sol = ata
            .cholesky()
            .map(|ch| ch.solve(&atb))
            .ok_or(Error::IllConditionedSolve { sweep })?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::IllConditionedSolve { sweep });
        }
        tt.cores[i].data.copy_from_slice(sol.as_slice());
        Ok(())
    }
}

fn relative_residual(pred: &[f64], values: &[f64]) -> f64 {
    let num: f64 = pred.iter().zip(values).map(|(g, v)| (g - v) * (g - v)).sum();
    let den: f64 = values.iter().map(|v| v * v).sum();
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Largest admissible rank at each bond given the mode sizes.
fn rank_caps(sizes: &[usize], max_rank: usize) -> Vec<usize> {
    let d = sizes.len();
    let mut caps = vec![1; d + 1];
    for (b, cap) in caps.iter_mut().enumerate().take(d).skip(1) {
        let left: usize = sizes[..b].iter().fold(1usize, |acc, &n| acc.saturating_mul(n));
        let right: usize = sizes[b..].iter().fold(1usize, |acc, &n| acc.saturating_mul(n));
        *cap = left.min(right).min(max_rank);
    }
    caps
}

/// Fits a train to `(points, values)` by alternating least squares.
///
/// `points` holds chart coordinates row-major (`N x d`). The last
/// `validation_fraction` of the samples is held out and only reported.
pub fn fit_als(
    points: &[f64],
    values: &[f64],
    bases: Vec<Arc<OrthonormalBasis1D>>,
    opts: &FitOptions,
) -> Result<(ExtendedTT, FitDiagnostics)> {
    let d = bases.len();
    let n_all = values.len();
    if d == 0 || points.len() != n_all * d {
        return Err(Error::ShapeMismatch(format!("{} coordinates for {} samples in d={}", points.len(), n_all, d)));
    }
    if opts.initial_rank < 1 || opts.max_rank < opts.initial_rank || opts.max_sweeps < 1 {
        return Err(Error::InvalidArgument(format!("invalid fit options {opts:?}")));
    }
    let n_val = ((opts.validation_fraction.clamp(0.0, 0.9)) * n_all as f64).floor() as usize;
    let n_train = n_all - n_val;
    if n_train == 0 {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let train_idx: Vec<usize> = (0..n_train).collect();
    let val_idx: Vec<usize> = (n_train..n_all).collect();
    let train_vals = DVector::from_iterator(n_train, values[..n_train].iter().cloned());

    let sizes: Vec<usize> = bases.iter().map(|b| b.size()).collect();
    let caps = rank_caps(&sizes, opts.max_rank);
    let mut ranks: Vec<usize> = caps.iter().map(|&c| c.min(opts.initial_rank)).collect();
    ranks[0] = 1;
    ranks[d] = 1;

    let mut diag = FitDiagnostics::default();
    let max_params = (0..d).map(|i| caps[i] * sizes[i] * caps[i + 1]).max().unwrap_or(0);
    if n_train < 3 * max_params {
        diag.warnings.push(format!("{n_train} training samples for up to {max_params} parameters per core"));
    }

    let mut rng = seeded_rng(opts.seed, 0x5eed);
    let cores = (0..d)
        .map(|i| {
            let mut c = Core::zeros(ranks[i], sizes[i], ranks[i + 1]);
            for v in c.data.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
            c
        })
        .collect();
    let mut tt = ExtendedTT::new(cores, bases.clone())?;
    tt.right_orthogonalize();

    let mut ws = Workspace::new(basis_values(&bases, points, &train_idx), n_train, d);
    ws.refresh(&tt);

    let values_slice = &values[..n_train];
    let mut best: Option<(f64, ExtendedTT)> = None;
    let mut prev = f64::INFINITY;
    for sweep in 0..opts.max_sweeps {
        for i in 0..d {
            ws.solve_core(&mut tt, i, &train_vals, opts.ridge, sweep)?;
            if i + 1 < d {
                tt.shift_left_to_right(i);
                ws.update_left(&tt, i);
            }
        }
        for i in (0..d).rev() {
            ws.solve_core(&mut tt, i, &train_vals, opts.ridge, sweep)?;
            if i > 0 {
                tt.shift_right_to_left(i);
                ws.update_right(&tt, i);
            }
        }
        let pred = ws.predictions(&tt, 0);
        let res = relative_residual(&pred, values_slice);
        diag.sweep_residuals.push(res);
        if best.as_ref().map_or(true, |(r, _)| res < *r) {
            best = Some((res, tt.clone()));
        }
        if res <= opts.target_residual {
            diag.converged = true;
            break;
        }
        let stagnated = prev.is_finite() && prev - res < opts.stagnation * prev;
        prev = res;
        if !stagnated {
            continue;
        }
        // rank increase at the bond with the largest projected residual gradient
        ws.refresh(&tt);
        let resid: Vec<f64> = pred.iter().zip(values_slice).map(|(g, v)| g - v).collect();
        let mut best_bond = None;
        let mut best_score = 0.0;
        for b in 1..d {
            let r = tt.ranks();
            if r[b] + 1 > caps[b] || r[b] + 1 > r[b - 1] * sizes[b - 1] || r[b] + 1 > sizes[b] * r[b + 1] {
                continue;
            }
            let score = bond_gradient_norm(&ws, &tt, b, &resid);
            if score > best_score {
                best_score = score;
                best_bond = Some(b);
            }
        }
        let Some(b) = best_bond else { break };
        increase_rank(&mut tt, b, &mut rng);
        diag.rank_increases += 1;
        tt.right_orthogonalize();
        ws = Workspace::new(std::mem::take(&mut ws.phi), n_train, d);
        ws.refresh(&tt);
        prev = f64::INFINITY;
    }
    let (res, tt) = best.expect("at least one sweep");
    diag.converged = res <= opts.target_residual;
    diag.ranks = tt.ranks();
    if !val_idx.is_empty() {
        let phi = basis_values(&bases, points, &val_idx);
        let pred: Vec<f64> = (0..val_idx.len())
            .map(|k| {
                let refs: Vec<&[f64]> = (0..d).map(|i| &phi[i][k * sizes[i]..(k + 1) * sizes[i]]).collect();
                tt.evaluate_with_values(&refs)
            })
            .collect();
        diag.validation_residual = Some(relative_residual(&pred, &values[n_train..]));
    }
    Ok((tt, diag))
}

/// Norm of the loss gradient with respect to the merged supercore of bond `b`.
fn bond_gradient_norm(ws: &Workspace, tt: &ExtendedTT, b: usize, resid: &[f64]) -> f64 {
    let (cl, cr) = (&tt.cores[b - 1], &tt.cores[b]);
    let (r0, n1, n2, r2) = (cl.r0, cl.n, cr.n, cr.r1);
    let mut g = vec![0.0; r0 * n1 * n2 * r2];
    for (k, e) in resid.iter().enumerate() {
        let l = &ws.left[b - 1][k * r0..(k + 1) * r0];
        let p1 = &ws.phi[b - 1][k * n1..(k + 1) * n1];
        let p2 = &ws.phi[b][k * n2..(k + 1) * n2];
        let r = &ws.right[b + 1][k * r2..(k + 1) * r2];
        let mut idx = 0;
        for la in l {
            for pa in p1 {
                for pb in p2 {
                    let w = e * la * pa * pb;
                    for rb in r {
                        g[idx] += w * rb;
                        idx += 1;
                    }
                }
            }
        }
    }
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Adds one bond dimension at bond `b` with a small random kick.
fn increase_rank<R: Rng>(tt: &mut ExtendedTT, b: usize, rng: &mut R) {
    let left = tt.cores[b - 1].clone();
    let right = tt.cores[b].clone();
    let kl = 1e-3 * left.frobenius() / (left.data.len() as f64).sqrt();
    let kr = 1e-3 * right.frobenius() / (right.data.len() as f64).sqrt();
    let mut nl = Core::zeros(left.r0, left.n, left.r1 + 1);
    for a in 0..left.r0 {
        for j in 0..left.n {
            for c in 0..left.r1 {
                *nl.at_mut(a, j, c) = left.at(a, j, c);
            }
            *nl.at_mut(a, j, left.r1) = kl * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut nr = Core::zeros(right.r0 + 1, right.n, right.r1);
    for a in 0..right.r0 + 1 {
        for j in 0..right.n {
            for c in 0..right.r1 {
                *nr.at_mut(a, j, c) =
                    if a < right.r0 { right.at(a, j, c) } else { kr * rng.sample::<f64, _>(StandardNormal) };
            }
        }
    }
    tt.cores[b - 1] = nl;
    tt.cores[b] = nr;
}
