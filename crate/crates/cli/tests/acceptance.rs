//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{ensure, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use ttdensity_cli::banana::{run_banana, Banana};
use ttdensity_cli::darcy::run_darcy;
use ttdensity_cli::gaussian::{run_cell, GaussianRow, RANK_TOLERANCE};
use ttdensity_cli::ExperimentConfig;
use ttdensity_core::basis::{angular_basis, radial_basis, trig_basis, OrthonormalBasis1D};
use ttdensity_core::coords::{polar_coordinates, polar_direction};
use ttdensity_core::quadrature::{adaptive_2d, GaussLegendre};
use ttdensity_core::sampling::{sample_angular, sample_chart_points, sample_radial, seeded_rng, sin_power_antiderivative};
use ttdensity_core::tt::{Core, ExtendedTT};
use ttdensity_core::{
    AffineMap, DensityOptions, FitOptions, LayerPartition, LayeredDensity, LogDensity, QuadraticMap, TransportMap,
};

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).expect("loading config")
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

struct Runner {
    failures: Vec<String>,
}

impl Runner {
    fn check(&mut self, id: &str, title: &str, f: impl FnOnce() -> Result<Outcome>) {
        self.check_within(id, title, f64::INFINITY, f)
    }

    /// Like [`Runner::check`] but also fails when the check takes longer than `limit` seconds.
    fn check_within(&mut self, id: &str, title: &str, limit: f64, f: impl FnOnce() -> Result<Outcome>) {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match res {
            Ok(Ok(o)) => (o.pass, o.detail),
            Ok(Err(e)) => (false, format!("error: {e:#}")),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panic: {msg}"))
            }
        };
        let (pass, detail) = if secs > limit { (false, format!("{detail}; over the {limit:.0}s limit")) } else { (pass, detail) };
        println!("{} criterion {id} ({title}): {detail} [{secs:.1}s]", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures.push(id.to_string());
        }
    }
}

// ---------------------------------------------------------------- Gaussian

fn gaussian_cells() -> Result<(Vec<GaussianRow>, Duration)> {
    let cfg = config("gaussian.toml");
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut slowest = Duration::ZERO;
    for &d in &cfg.d {
        for &s2 in &cfg.variances {
            let t = Instant::now();
            let (row, _) = run_cell(&cfg, d, s2, cfg.partition.layers[0], cfg.samples_per_layer[0], 0)?;
            slowest = slowest.max(t.elapsed());
            rows.push(row);
        }
    }
    Ok((rows, slowest))
}

fn criterion_1(rows: &[GaussianRow], slowest: Duration) -> Result<Outcome> {
    let max_err = rows.iter().map(|r| r.err_z).fold(0.0, f64::max);
    let mut worst_ratio: f64 = 0.0;
    for d in [2, 5, 10] {
        let errs: Vec<f64> = rows.iter().filter(|r| r.d == d).map(|r| r.err_z).collect();
        ensure!(errs.len() == 4, "expected four variances for d = {d}");
        let hi = errs.iter().cloned().fold(0.0, f64::max);
        let lo = errs.iter().cloned().fold(f64::INFINITY, f64::min);
        worst_ratio = worst_ratio.max(hi / lo);
    }
    let pass = max_err <= 1e-4 && worst_ratio <= 100.0 && slowest.as_secs_f64() <= 300.0;
    outcome(
        pass,
        format!(
            "max err_Z {max_err:.2e} (<= 1e-4), worst max/min over sigma^2 {worst_ratio:.1} (<= 100), slowest cell {:.1}s (<= 300s)",
            slowest.as_secs_f64()
        ),
    )
}

fn criterion_2(rows: &[GaussianRow]) -> Result<Outcome> {
    let mu = rows.iter().map(|r| r.err_mu).fold(0.0, f64::max);
    let sigma = rows.iter().map(|r| r.err_sigma).fold(0.0, f64::max);
    outcome(mu <= 1e-10 && sigma <= 1e-5, format!("max err_mu {mu:.2e} (<= 1e-10), max err_Sigma {sigma:.2e} (<= 1e-5)"))
}

fn criterion_3(rows: &[GaussianRow]) -> Result<Outcome> {
    let worst = rows.iter().map(|r| r.max_rounded_rank).max().unwrap_or(0);
    outcome(worst == 1, format!("largest layer rank after rounding at {RANK_TOLERANCE:e}: {worst} (== 1)"))
}

// ---------------------------------------------------------------- Banana

fn criterion_4() -> Result<Outcome> {
    let cfg = config("banana.toml");
    cfg.validate()?;
    let banana = Banana::from_config(&cfg);
    let (mean, cov) = banana.moments();
    let want_cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 3.0]);
    ensure!((mean - DVector::from_vec(vec![0.0, -2.0])).norm() < 1e-15, "analytic mean");
    ensure!((cov - want_cov).norm() < 1e-15, "analytic covariance");
    let report = run_banana(&cfg)?;
    ensure!(report.summary.iter().all(|r| r.calls >= 1000), "budget below 1e3 calls");
    let at = |t: f64| report.summary.iter().find(|r| r.t == t).ok_or_else(|| anyhow::anyhow!("no summary for t = {t}"));
    let exact = at(1.0)?;
    let affine = at(0.0)?;
    let exact_ok = exact.ratio_mu <= 1e-2 && exact.ratio_sigma <= 1e-2;
    let affine_ok = affine.ratio_mu <= 10.0 && affine.ratio_sigma <= 10.0;
    let sig: Vec<f64> = [0.0, 0.25, 0.5, 1.0].iter().map(|&t| at(t).map(|r| r.surrogate_err_sigma)).collect::<Result<_>>()?;
    let monotone = sig.windows(2).all(|w| w[1] < w[0]);
    outcome(
        exact_ok && affine_ok && monotone,
        format!(
            "{} calls; t=1 ratios mu {:.1e} sigma {:.1e} (<= 1e-2); t=0 ratios mu {:.2} sigma {:.2} (<= 10); median err_Sigma over t {:?} (decreasing)",
            exact.calls,
            exact.ratio_mu,
            exact.ratio_sigma,
            affine.ratio_mu,
            affine.ratio_sigma,
            sig.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------- Darcy

fn criterion_5() -> Result<Outcome> {
    let cfg = config("darcy_d2.toml");
    cfg.validate()?;
    let start = Instant::now();
    let report = run_darcy(&cfg)?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(report.references.iter().all(|r| r.kind == "quadrature" && r.converged), "quadrature reference did not converge");
    let rows: Vec<_> = report.rows.iter().filter(|r| r.method == "surrogate" && r.layers == 5).collect();
    ensure!(!rows.is_empty(), "no L = 5 rows");
    let ez = rows.iter().map(|r| r.err_z.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    let em = rows.iter().map(|r| r.err_mu).fold(0.0, f64::max);
    let es = rows.iter().map(|r| r.err_sigma).fold(0.0, f64::max);
    outcome(
        ez <= 1e-4 && em <= 1e-4 && secs <= 900.0,
        format!("L=5: err_Z {ez:.2e}, err_mu {em:.2e} (<= 1e-4), err_Sigma {es:.2e}; {secs:.0}s including reference (<= 900s)"),
    )
}

// ---------------------------------------------------------------- oracle suites

fn random_tt(rng: &mut impl Rng, sizes: &[usize], ranks: &[usize]) -> ExtendedTT {
    let cores = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let data = (0..ranks[i] * n * ranks[i + 1]).map(|_| rng.sample(StandardNormal)).collect();
            Core::from_vec(ranks[i], n, ranks[i + 1], data).unwrap()
        })
        .collect();
    let bases = sizes.iter().map(|&n| Arc::new(trig_basis(n))).collect();
    ExtendedTT::new(cores, bases).unwrap()
}

/// `sum_idx dense[idx] prod_k v_k[idx_k]` over a row-major tensor.
fn dense_contract(dense: &[f64], vecs: &[Vec<f64>]) -> f64 {
    let sizes: Vec<usize> = vecs.iter().map(|v| v.len()).collect();
    let mut total = 0.0;
    for (flat, &c) in dense.iter().enumerate() {
        let mut rest = flat;
        let mut w = c;
        for k in (0..sizes.len()).rev() {
            w *= vecs[k][rest % sizes[k]];
            rest /= sizes[k];
        }
        total += w;
    }
    total
}

fn frob(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn suite_a() -> Result<Outcome> {
    let mut rng = seeded_rng(11, 0);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let d = 1 + trial % 4;
        let sizes: Vec<usize> = (0..d).map(|k| [3, 5, 7][(trial + k) % 3]).collect();
        let mut ranks = vec![1; d + 1];
        for r in ranks.iter_mut().take(d).skip(1) {
            *r = rng.gen_range(1..4);
        }
        let tt = random_tt(&mut rng, &sizes, &ranks);
        let dense = tt.to_dense();
        let scale = frob(&dense);
        for _ in 0..5 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let phis: Vec<Vec<f64>> = tt.bases().iter().zip(&x).map(|(b, &v)| b.eval_vec(v)).collect();
            let want = dense_contract(&dense, &phis);
            worst = worst.max((tt.evaluate(&x)? - want).abs() / scale);
            let vecs: Vec<Vec<f64>> = sizes.iter().map(|&n| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            worst = worst.max((tt.contract_rank1(&vecs)? - dense_contract(&dense, &vecs)).abs() / scale);
        }
        let other = random_tt(&mut rng, &sizes, &ranks);
        let ip: f64 = dense.iter().zip(other.to_dense()).map(|(a, b)| a * b).sum();
        worst = worst.max((tt.dot(&other)? - ip).abs() / (scale * frob(&other.to_dense())));
        let rounded = tt.round(1e-15).tt.to_dense();
        let diff: Vec<f64> = rounded.iter().zip(&dense).map(|(a, b)| a - b).collect();
        worst = worst.max(frob(&diff) / scale);
    }
    outcome(worst <= 1e-12, format!("largest relative deviation from dense oracle {worst:.1e} (<= 1e-12)"))
}

fn suite_b() -> Result<Outcome> {
    let mut rng = seeded_rng(12, 0);
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let d = 2 + trial % 4;
        let sizes: Vec<usize> = (0..d).map(|k| [3, 5, 7][(trial + k) % 3]).collect();
        let mut ranks = vec![1; d + 1];
        for r in ranks.iter_mut().take(d).skip(1) {
            *r = rng.gen_range(1..6);
        }
        let tt = random_tt(&mut rng, &sizes, &ranks);
        let dense = tt.to_dense();
        let eps = [0.5, 0.2, 0.05, 1e-3, 1e-8][trial % 5];
        let r = tt.round(eps);
        let diff: Vec<f64> = r.tt.to_dense().iter().zip(&dense).map(|(a, b)| a - b).collect();
        let err = frob(&diff);
        let rel = err / (eps * frob(&dense));
        worst = worst.max(rel);
        if rel > 1.0 + 1e-10 || err > r.bound * (1.0 + 1e-8) + 1e-13 * frob(&dense) {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{violations} of 50 tensors violate the bound; worst error/(eps |A|) {worst:.3}"))
}

fn gram_deviation(b: &OrthonormalBasis1D, nodes: usize) -> f64 {
    let gl = GaussLegendre::new(nodes);
    let (lo, hi) = b.interval();
    let n = b.size();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for k in 0..=j {
            let g = gl.integrate(lo, hi, |x| b.eval(j, x) * b.eval(k, x) * b.weight().eval(x));
            let want = if j == k { 1.0 } else { 0.0 };
            worst = worst.max((g - want).abs());
        }
    }
    worst
}

fn suite_c() -> Result<Outcome> {
    let mut bases = Vec::new();
    for d in [2, 3, 5, 10] {
        let radii = LayerPartition::equidistant(19, 10.0, d)?.radii().to_vec();
        for w in [&radii[0..2], &radii[9..11], &radii[18..20]] {
            bases.push(radial_basis((w[0], w[1]), 8, d, 100)?);
        }
    }
    bases.push(trig_basis(41));
    for i in 1..=8 {
        bases.push(angular_basis(i, 8, 100)?);
    }
    let worst = bases.iter().map(|b| gram_deviation(b, 200)).fold(0.0, f64::max);
    outcome(worst <= 1e-10, format!("{} bases, largest Gram deviation {worst:.1e} (<= 1e-10)", bases.len()))
}

fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let h = 1e-6;
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut p = x.to_vec();
        let mut q = x.to_vec();
        p[j] += h;
        q[j] -= h;
        let (fp, fq) = (f(&p), f(&q));
        for i in 0..d {
            m[(i, j)] = (fp[i] - fq[i]) / (2.0 * h);
        }
    }
    m
}

fn random_quadratic(rng: &mut impl Rng, d: usize) -> QuadraticMap {
    let a = (0..d).map(|_| DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.2..0.2))).collect();
    let h = DMatrix::identity(d, d) * 2.0 + DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.3..0.3));
    let m = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
    QuadraticMap::new(a, h, m).unwrap()
}

fn suite_d() -> Result<Outcome> {
    let mut rng = seeded_rng(13, 0);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..20 {
        let d = rng.gen_range(2..5);
        let q1 = TransportMap::from(random_quadratic(&mut rng, d));
        let q2 = TransportMap::from(random_quadratic(&mut rng, d));
        let aff = TransportMap::from(AffineMap::new(
            DMatrix::identity(d, d) + DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.4..0.4)),
            DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)),
        )?);
        let maps = [
            aff.clone(),
            q1.clone(),
            TransportMap::convex(0.3, aff.clone(), q1.clone())?,
            TransportMap::compose(q1.clone(), q2.clone())?,
        ];
        for map in &maps {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ja = map.jacobian(&x)?;
            let jf = fd_jacobian(|p| map.apply(p).unwrap(), &x);
            worst = worst.max((&ja - &jf).norm() / (1.0 + ja.norm()));
            let ld = jf.determinant().abs().ln();
            worst = worst.max((map.log_abs_det_jacobian(&x)? - ld).abs());
            checked += 1;
        }
    }
    let banana = TransportMap::from(QuadraticMap::banana());
    for _ in 0..20 {
        let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let jf = fd_jacobian(|p| banana.apply(p).unwrap(), &x);
        worst = worst.max((&banana.jacobian(&x)? - &jf).norm() / (1.0 + jf.norm()));
        checked += 1;
    }
    for d in 2..=6 {
        let part = LayerPartition::equidistant(4, 3.0, d)?;
        for l in 0..4 {
            let chart = part.chart(l);
            let xh: Vec<f64> = chart.bounds().iter().map(|&(a, b)| rng.gen_range(a + 0.05 * (b - a)..b - 0.05 * (b - a))).collect();
            let jf = fd_jacobian(|p| chart.polar_to_cartesian_unchecked(p), &xh);
            let det = jf.determinant().abs();
            worst = worst.max((chart.jacobian_det(&xh) - det).abs() / det.max(1.0));
            checked += 1;
        }
    }
    outcome(worst <= 1e-5, format!("{checked} Jacobians, largest deviation from finite differences {worst:.1e} (<= 1e-5)"))
}

/// One-sample Kolmogorov-Smirnov statistic.
fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn suite_e() -> Result<Outcome> {
    let n = 4000;
    // asymptotic Kolmogorov quantile at alpha = 0.01
    let critical = 1.6276 / (n as f64).sqrt();
    let mut rng = seeded_rng(14, 0);
    let mut stats = Vec::new();
    for &(a, b, d) in &[(0.0, 1.0, 2), (0.5, 1.0, 5), (9.0, 10.0, 10), (2.0, 3.0, 3)] {
        let df = d as f64;
        let xs = sample_radial(&mut rng, (a, b), d, n);
        stats.push((format!("radial d={d}"), ks_statistic(xs, |r| (r.powf(df) - a.powf(df)) / (b.powf(df) - a.powf(df)))));
    }
    for i in 1..=6 {
        let xs = sample_angular(&mut rng, i, n);
        let total = sin_power_antiderivative(i, PI);
        stats.push((format!("angular i={i}"), ks_statistic(xs, |t| sin_power_antiderivative(i, t) / total)));
    }
    let chart = LayerPartition::equidistant(3, 2.0, 4)?.chart(1);
    let pts = sample_chart_points(&mut rng, &chart, n);
    let azimuth: Vec<f64> = pts.chunks(4).map(|p| p[1]).collect();
    stats.push(("chart azimuth".into(), ks_statistic(azimuth, |t| t / (2.0 * PI))));
    let failed: Vec<&String> = stats.iter().filter(|s| s.1 > critical).map(|s| &s.0).collect();
    let worst = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    outcome(
        failed.is_empty(),
        format!("{} samplers, largest KS statistic {worst:.4} vs critical {critical:.4}; rejected: {failed:?}", stats.len()),
    )
}

/// Shell-by-shell adaptive quadrature of `g(x) eval(x)` over the covered disc.
fn disc_quadrature(ld: &LayeredDensity, g: impl Fn(f64, f64) -> f64) -> f64 {
    ld.partition()
        .radii()
        .windows(2)
        .map(|w| {
            adaptive_2d(
                |r, t| {
                    let (x, y) = (r * t.cos(), r * t.sin());
                    r * g(x, y) * ld.eval(&[x, y])
                },
                (w[0], w[1] * (1.0 - 1e-15)),
                (0.0, 2.0 * PI),
                1e-12,
                1e-10,
            )
            .value
        })
        .sum()
}

fn suite_f() -> Result<Outcome> {
    let prior = LogDensity::new(2, |x| -0.5 * (x[0] * x[0] + x[1] * x[1]) + 0.08 * x[0] * x[1] + 0.3 * x[0]);
    let part = LayerPartition::equidistant(8, 6.0, 2)?;
    let opts = DensityOptions {
        trig_size: 9,
        samples_per_layer: 800,
        fit: FitOptions { max_rank: 3, ..FitOptions::default() },
        ..DensityOptions::default()
    };
    let (ld, _) = LayeredDensity::build(&prior, &part, &opts)?;
    let (h, m) = ([1.3, 0.4, -0.2, 0.7], [0.5, -1.0]);
    let map = AffineMap::new(DMatrix::from_row_slice(2, 2, &h), DVector::from_vec(m.to_vec()))?;
    let mut worst: f64 = 0.0;
    for order in 0..=3u32 {
        for a0 in 0..=order {
            let alpha = [a0, order - a0];
            let closed = ld.moment_affine(&map, &alpha)?;
            let q = disc_quadrature(&ld, |x, y| {
                let t0 = h[0] * x + h[1] * y + m[0];
                let t1 = h[2] * x + h[3] * y + m[1];
                t0.powi(alpha[0] as i32) * t1.powi(alpha[1] as i32)
            });
            worst = worst.max((closed - q).abs() / q.abs().max(1e-2));
        }
    }
    outcome(worst <= 1e-5, format!("10 moments up to order 3, largest relative deviation {worst:.1e} (<= 1e-5)"))
}

fn suite_g() -> Result<Outcome> {
    let mut rng = seeded_rng(15, 0);
    let mut worst: f64 = 0.0;
    let banana = TransportMap::from(QuadraticMap::banana());
    for _ in 0..100 {
        let x0 = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let x = banana.invert(&banana.apply(&x0)?, 1e-12, 100)?;
        worst = worst.max((x[0] - x0[0]).abs().max((x[1] - x0[1]).abs()));
    }
    for _ in 0..50 {
        let d = rng.gen_range(2..6);
        let aff = TransportMap::from(AffineMap::new(
            DMatrix::identity(d, d) * 0.5 + DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.2..0.2)),
            DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)),
        )?);
        let map = TransportMap::convex(0.5, aff, TransportMap::from(random_quadratic(&mut rng, d)))?;
        let x0: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let x = map.invert(&map.apply(&x0)?, 1e-12, 100)?;
        worst = worst.max(x.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let back = polar_direction(&polar_coordinates(&z));
        worst = worst.max(back.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    outcome(worst <= 1e-8, format!("250 round trips, largest error {worst:.1e} (<= 1e-8)"))
}

fn suite_h() -> Result<Outcome> {
    let prior = LogDensity::new(2, |x| -0.5 * (x[0] * x[0] + x[1] * x[1]) + 0.3 * x[0].sin());
    let part = LayerPartition::equidistant(6, 5.0, 2)?;
    let opts = DensityOptions { trig_size: 7, samples_per_layer: 600, ..DensityOptions::default() };
    let (ld, _) = LayeredDensity::build(&prior, &part, &opts)?;
    let inside = disc_quadrature(&ld, |_, _| 1.0);
    // standard normal mass outside radius 5 in two dimensions
    let total = inside + ld.normalizer() * ld.tail().kappa * (-12.5f64).exp();
    outcome((total - 1.0).abs() <= 1e-5, format!("total mass {total:.10} (|1 - m| <= 1e-5)"))
}

// ---------------------------------------------------------------- determinism

fn run_twice(cfg: &ExperimentConfig, scratch: &Path, tag: &str) -> Result<usize> {
    let a = ttdensity_cli::run(cfg)?;
    let b = ttdensity_cli::run(cfg)?;
    let (da, db) = (scratch.join(format!("{tag}_a")), scratch.join(format!("{tag}_b")));
    a.write(&da)?;
    b.write(&db)?;
    let mut compared = 0;
    for t in &a.tables {
        let x = std::fs::read(da.join(&t.name))?;
        let y = std::fs::read(db.join(&t.name))?;
        ensure!(x == y, "{tag}: {} differs between runs", t.name);
        compared += 1;
    }
    ensure!(std::fs::read(da.join("manifest.json"))? == std::fs::read(db.join("manifest.json"))?, "{tag}: manifests differ");
    Ok(compared)
}

fn criterion_7() -> Result<Outcome> {
    let scratch = tempfile::tempdir()?;
    let mut gaussian = config("gaussian.toml");
    gaussian.d = vec![3];
    gaussian.variances = vec![1e-4];
    gaussian.partition.layers = vec![6];
    gaussian.samples_per_layer = vec![200];
    gaussian.repetitions = 2;
    let banana = config("banana.toml");
    let mut darcy = config("darcy_d2.toml");
    darcy.partition.layers = vec![2];
    darcy.darcy.grid = 16;
    darcy.mcmc.chains = 2;
    darcy.kl_samples = 200;
    darcy.darcy.reference = ttdensity_cli::config::DarcyReference::Mcmc;
    darcy.mcmc.reference_steps = 3000;
    darcy.mcmc.reference_burn_in = 500;
    let mut files = 0;
    for (cfg, tag) in [(&gaussian, "gaussian"), (&banana, "banana"), (&darcy, "darcy")] {
        files += run_twice(cfg, scratch.path(), tag)?;
    }
    outcome(true, format!("{files} CSV files and 3 manifests byte-identical across reruns"))
}

fn main() {
    // `cargo test -- --list` and filters should not trigger the full run
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut runner = Runner { failures: Vec::new() };
    let gaussian = gaussian_cells();
    match &gaussian {
        Ok((rows, slowest)) => {
            runner.check("1", "exact-transport Gaussian evidence", || criterion_1(rows, *slowest));
            runner.check("2", "exact-transport Gaussian moments", || criterion_2(rows));
            runner.check("3", "rank recovery", || criterion_3(rows));
        }
        Err(e) => {
            for id in ["1", "2", "3"] {
                runner.check(id, "Gaussian sweep", || Err(anyhow::anyhow!("{e:#}")));
            }
        }
    }
    runner.check("4", "banana against matched-budget MCMC", criterion_4);
    runner.check("5", "Darcy d=2 against adaptive quadrature", criterion_5);
    runner.check_within("6a", "TT evaluate/round/contract vs dense oracle", 120.0, suite_a);
    runner.check_within("6b", "rounding error bound", 120.0, suite_b);
    runner.check_within("6c", "basis Gram matrices", 120.0, suite_c);
    runner.check_within("6d", "Jacobians vs finite differences", 120.0, suite_d);
    runner.check_within("6e", "sampler KS tests", 120.0, suite_e);
    runner.check_within("6f", "affine moments vs adaptive quadrature", 120.0, suite_f);
    runner.check_within("6g", "transport round trips", 120.0, suite_g);
    runner.check_within("6h", "surrogate total mass", 120.0, suite_h);
    runner.check("7", "determinism", criterion_7);
    if runner.failures.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {:?}", runner.failures);
        std::process::exit(1);
    }
}
