use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use ttdensity_core::basis::{angular_basis, radial_basis, trig_basis};
use ttdensity_core::bayes::GaussianNoiseModel;
use ttdensity_core::coords::{polar_coordinates, unit_ball_volume};
use ttdensity_core::density::compositions;
use ttdensity_core::quadrature::GaussLegendre;
use ttdensity_core::sampling::{sample_angular, sample_layer, sample_radial, seeded_rng};
use ttdensity_core::tt::{Core, ExtendedTT};
use ttdensity_core::{
    AffineMap, DensityOptions, LayerPartition, LayeredDensity, LogDensity, MCMCConfig, QuadraticMap, TransportMap,
};

fn quadratic(d: usize, coeffs: &[f64]) -> QuadraticMap {
    let mut it = coeffs.iter().cycle();
    let a = (0..d).map(|_| DMatrix::from_fn(d, d, |_, _| 0.2 * it.next().unwrap())).collect();
    let h = DMatrix::identity(d, d) * 2.0 + DMatrix::from_fn(d, d, |_, _| 0.3 * it.next().unwrap());
    let m = DVector::from_fn(d, |_, _| *it.next().unwrap());
    QuadraticMap::new(a, h, m).unwrap()
}

fn fd_jacobian(map: &TransportMap, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let h = 1e-6;
    DMatrix::from_fn(d, d, |i, j| {
        let mut p = x.to_vec();
        let mut q = x.to_vec();
        p[j] += h;
        q[j] -= h;
        (map.apply(&p).unwrap()[i] - map.apply(&q).unwrap()[i]) / (2.0 * h)
    })
}

fn tt_from(sizes: &[usize], ranks: &[usize], values: &[f64]) -> ExtendedTT {
    let mut it = values.iter().cycle();
    let cores = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let data = (0..ranks[i] * n * ranks[i + 1]).map(|_| *it.next().unwrap()).collect();
            Core::from_vec(ranks[i], n, ranks[i + 1], data).unwrap()
        })
        .collect();
    ExtendedTT::new(cores, sizes.iter().map(|&n| Arc::new(trig_basis(n))).collect()).unwrap()
}

fn frob(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inversion_round_trip(d in 2usize..5, coeffs in prop::collection::vec(-1.0f64..1.0, 8..40), x in prop::collection::vec(-0.5f64..0.5, 4)) {
        let map = TransportMap::from(quadratic(d, &coeffs));
        let x = &x[..d];
        if let Ok(back) = map.invert(&map.apply(x).unwrap(), 1e-12, 100) {
            for (a, b) in back.iter().zip(x) {
                prop_assert!((a - b).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences(d in 2usize..5, c1 in prop::collection::vec(-1.0f64..1.0, 8..40), c2 in prop::collection::vec(-1.0f64..1.0, 8..40), t in 0.0f64..1.0, x in prop::collection::vec(-1.0f64..1.0, 4)) {
        let (q1, q2) = (TransportMap::from(quadratic(d, &c1)), TransportMap::from(quadratic(d, &c2)));
        let x = &x[..d];
        for map in [q1.clone(), TransportMap::convex(t, q1.clone(), q2.clone()).unwrap(), TransportMap::compose(q1.clone(), q2.clone()).unwrap()] {
            let ja = map.jacobian(x).unwrap();
            let jf = fd_jacobian(&map, x);
            prop_assert!((&ja - &jf).norm() <= 1e-5 * (1.0 + ja.norm()));
        }
    }

    #[test]
    fn log_det_chain_rule(d in 2usize..5, c1 in prop::collection::vec(-1.0f64..1.0, 8..40), c2 in prop::collection::vec(-1.0f64..1.0, 8..40), x in prop::collection::vec(-0.5f64..0.5, 4)) {
        let (f, g) = (TransportMap::from(quadratic(d, &c1)), TransportMap::from(quadratic(d, &c2)));
        let x = &x[..d];
        let comp = TransportMap::compose(f.clone(), g.clone()).unwrap();
        let chain = f.log_abs_det_jacobian(&g.apply(x).unwrap()).unwrap() + g.log_abs_det_jacobian(x).unwrap();
        prop_assert!((comp.log_abs_det_jacobian(x).unwrap() - chain).abs() <= 1e-10);
    }

    #[test]
    fn polar_charts_are_rank_one_and_disjoint(d in 2usize..7, layers in 1usize..6, radius in 0.5f64..12.0, z in prop::collection::vec(-3.0f64..3.0, 6)) {
        let part = LayerPartition::equidistant(layers, radius, d).unwrap();
        let z = &z[..d];
        let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(r > 1e-6);
        let hat = polar_coordinates(z);
        prop_assert!((hat[0] - r).abs() <= 1e-12 * (1.0 + r));
        match part.cartesian_to_polar(z) {
            Ok((l, xh)) => {
                let owners: Vec<usize> = (0..layers).filter(|&k| part.chart(k).contains(&xh) && (k == l || xh[0] != part.radii()[k])).collect();
                prop_assert!(owners.contains(&l));
                prop_assert_eq!(part.layer_of_radius(r), Some(l));
                let back = part.chart(l).polar_to_cartesian_unchecked(&xh);
                for (a, b) in back.iter().zip(z) {
                    prop_assert!((a - b).abs() <= 1e-12 * (1.0 + r));
                }
                let factors: f64 = (0..d).map(|j| part.chart(l).jacobian_factor(j, xh[j])).product();
                prop_assert!((part.chart(l).jacobian_det(&xh) - factors).abs() <= 1e-14 * factors.abs().max(1.0));
            }
            Err(_) => prop_assert!(r >= radius),
        }
    }

    #[test]
    fn shell_volumes_sum_to_ball(d in 2usize..9, layers in 1usize..20, radius in 0.1f64..10.0) {
        let part = LayerPartition::equidistant(layers, radius, d).unwrap();
        let total: f64 = part.charts().iter().map(|c| c.layer_weight_mass()).sum();
        let ball = unit_ball_volume(d) * radius.powi(d as i32);
        prop_assert!((total - ball).abs() <= 1e-12 * ball);
    }

    #[test]
    fn compositions_are_counted_by_stars_and_bars(j in 0u32..7, d in 1usize..6) {
        let all = compositions(j, d);
        // C(j + d - 1, d - 1)
        let mut want = 1u64;
        for k in 1..d as u64 {
            want = want * (j as u64 + k) / k;
        }
        prop_assert_eq!(all.len() as u64, want);
        prop_assert!(all.iter().all(|b| b.len() == d && b.iter().sum::<u32>() == j));
        prop_assert!(all.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tt_dense_equivalence(d in 1usize..5, ranks in prop::collection::vec(1usize..4, 3), values in prop::collection::vec(-1.0f64..1.0, 16..64), x in prop::collection::vec(0.0f64..std::f64::consts::TAU, 4)) {
        let sizes: Vec<usize> = (0..d).map(|k| [1, 3][k % 2]).collect();
        let mut r = vec![1; d + 1];
        r[1..d].copy_from_slice(&ranks[..d - 1]);
        let tt = tt_from(&sizes, &r, &values);
        let dense = tt.to_dense();
        let x = &x[..d];
        let phis: Vec<Vec<f64>> = tt.bases().iter().zip(x).map(|(b, &v)| b.eval_vec(v)).collect();
        let mut want = 0.0;
        for (flat, c) in dense.iter().enumerate() {
            let mut rest = flat;
            let mut w = *c;
            for k in (0..d).rev() {
                w *= phis[k][rest % sizes[k]];
                rest /= sizes[k];
            }
            want += w;
        }
        let scale = frob(&dense).max(1e-300);
        prop_assert!((tt.evaluate(x).unwrap() - want).abs() <= 1e-12 * scale.max(1.0));
        let rounded = tt.round(1e-14).tt.to_dense();
        let diff: Vec<f64> = rounded.iter().zip(&dense).map(|(a, b)| a - b).collect();
        prop_assert!(frob(&diff) <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn rounding_error_is_bounded(d in 2usize..5, ranks in prop::collection::vec(1usize..5, 4), values in prop::collection::vec(-1.0f64..1.0, 32..128), eps in 1e-6f64..0.9) {
        let sizes: Vec<usize> = (0..d).map(|k| [3, 5][k % 2]).collect();
        let mut r = vec![1; d + 1];
        r[1..d].copy_from_slice(&ranks[..d - 1]);
        let tt = tt_from(&sizes, &r, &values);
        let dense = tt.to_dense();
        let out = tt.round(eps);
        let diff: Vec<f64> = out.tt.to_dense().iter().zip(&dense).map(|(a, b)| a - b).collect();
        let err = frob(&diff);
        // exact-arithmetic bounds plus roundoff relative to the tensor norm
        let slack = 1e-12 * frob(&dense);
        prop_assert!(err <= eps * frob(&dense) + slack);
        prop_assert!(err <= out.bound + slack, "err {err:e} bound {:e}", out.bound);
    }

    #[test]
    fn samplers_respect_their_supports(seed in 0u64..1000, a in 0.0f64..5.0, w in 0.01f64..3.0, d in 1usize..11, i in 1usize..8) {
        let mut rng = seeded_rng(seed, 1);
        prop_assert!(sample_radial(&mut rng, (a, a + w), d, 50).iter().all(|r| (a..=a + w).contains(r)));
        prop_assert!(sample_angular(&mut rng, i, 50).iter().all(|t| (0.0..=PI).contains(t)));
    }

    #[test]
    fn potential_scales_quadratically(obs in prop::collection::vec(-2.0f64..2.0, 1..20), sigma in 1e-3f64..10.0) {
        let g: Vec<f64> = obs.iter().map(|v| 0.5 * v + 0.1).collect();
        let wide = GaussianNoiseModel::new(obs.clone(), sigma).unwrap();
        let narrow = GaussianNoiseModel::new(obs.clone(), sigma / 10.0).unwrap();
        let (pw, pn) = (wide.potential(&g).unwrap(), narrow.potential(&g).unwrap());
        prop_assert!((pn - 100.0 * pw).abs() <= 1e-10 * pn.abs().max(1e-300));
        prop_assert!(wide.potential(&obs).unwrap() == 0.0);
    }

    #[test]
    fn mcmc_config_needs_steps_beyond_burn_in(steps in 0usize..100, burn in 0usize..100) {
        let cfg = MCMCConfig::new(steps, burn, vec![0.0, 0.0], 1);
        prop_assert_eq!(cfg.validate().is_ok(), steps > burn);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn low_degree_monomials_are_reproduced(lo in 0.0f64..9.0, w in 0.05f64..2.0, d in 1usize..11, k in 0usize..6) {
        let b = radial_basis((lo, lo + w), 6, d, 100).unwrap();
        let gl = GaussLegendre::new(64);
        let wt = |x: f64| x.powi(d as i32 - 1);
        let c: Vec<f64> = (0..6).map(|j| gl.integrate(lo, lo + w, |x| x.powi(k as i32) * b.eval(j, x) * wt(x))).collect();
        let err2 = gl.integrate(lo, lo + w, |x| {
            let p: f64 = (0..6).map(|j| c[j] * b.eval(j, x)).sum();
            (p - x.powi(k as i32)).powi(2) * wt(x)
        });
        let norm2 = gl.integrate(lo, lo + w, |x| x.powi(2 * k as i32) * wt(x));
        prop_assert!(err2.sqrt() <= 1e-9 * norm2.sqrt().max(1.0), "{}", err2.sqrt());
    }

    #[test]
    fn generation_precision_is_stable(lo in 0.0f64..9.0, w in 0.3f64..1.0, d in 1usize..6, i in 1usize..6, x in 0.0f64..1.0) {
        let (a, b) = (radial_basis((lo, lo + w), 11, d, 50).unwrap(), radial_basis((lo, lo + w), 11, d, 100).unwrap());
        let (p, q) = (angular_basis(i, 11, 50).unwrap(), angular_basis(i, 11, 100).unwrap());
        for j in 0..11 {
            let r = lo + x * w;
            prop_assert!((a.eval(j, r) - b.eval(j, r)).abs() <= 1e-12 * b.eval(j, r).abs().max(1.0));
            prop_assert!((p.eval(j, x * PI) - q.eval(j, x * PI)).abs() <= 1e-12 * q.eval(j, x * PI).abs().max(1.0));
        }
    }

    #[test]
    fn layer_samples_stay_in_their_charts(seed in 0u64..1000, d in 2usize..6, layer in 0usize..3) {
        let part = LayerPartition::equidistant(3, 3.0, d).unwrap();
        let chart = part.chart(layer);
        let prior = LogDensity::standard_normal(d);
        let s = sample_layer(&mut seeded_rng(seed, layer as u64), &chart, &prior, 40).unwrap();
        let again = sample_layer(&mut seeded_rng(seed, layer as u64), &chart, &prior, 40).unwrap();
        prop_assert_eq!(&s, &again);
        prop_assert!(s.points.chunks(d).all(|p| chart.contains(p)));
        prop_assert!(s.values.iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn surrogate_normalizer_identity(scale in 0.3f64..3.0, shift in -0.5f64..0.5, seed in 0u64..100) {
        let prior = LogDensity::new(2, move |x| -0.5 * ((x[0] - shift).powi(2) + x[1] * x[1]) / (scale * scale));
        let part = LayerPartition::equidistant(4, 6.0, 2).unwrap();
        let opts = DensityOptions { trig_size: 3, samples_per_layer: 120, seed, ..DensityOptions::default() };
        if let Ok((ld, _)) = LayeredDensity::build(&prior, &part, &opts) {
            prop_assert!(ld.mass_inside() >= 0.0);
            prop_assert!((ld.normalizer() * (ld.mass_inside() + ld.mass_tail()) - 1.0).abs() <= 1e-12);
            let map = TransportMap::Affine(AffineMap::identity(2));
            prop_assert!(ld.mean_and_cov(&map).is_ok());
        }
    }
}
