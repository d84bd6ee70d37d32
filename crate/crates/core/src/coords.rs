//! Hyperspherical layer geometry.
//!
//! A [`LayerPartition`] splits a ball into concentric shells
//! `[rho_l, rho_{l+1})`; each shell is the image of the box
//! `[rho_l, rho_{l+1}] x [0, 2pi] x [0, pi]^(d-2)` under the polar map.
//! Coordinates on a chart are `(rho, theta_0, theta_1, ..., theta_{d-2})`
//! and the Jacobian determinant factors as `rho^(d-1) prod sin^i(theta_i)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::basis::trig_power_integral;
use crate::error::{check_dim, Error, Result};

const BOX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPartition {
    radii: Vec<f64>,
    dim: usize,
    center: Vec<f64>,
}

/// One layer's polar chart.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarChart {
    layer: usize,
    rho: (f64, f64),
    dim: usize,
    center: Vec<f64>,
}

impl LayerPartition {
    /// Partition with the given radii `0 = rho_1 < ... < rho_{L+1}`, centered at 0.
    pub fn new(radii: Vec<f64>, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!("polar layers need d >= 2, got {dim}")));
        }
        if radii.len() < 2 || radii[0] != 0.0 {
            return Err(Error::InvalidArgument("radii must start at 0 and define at least one layer".into()));
        }
        if radii.windows(2).any(|w| !(w[1] > w[0])) || !radii.last().unwrap().is_finite() {
            return Err(Error::InvalidArgument(format!("radii must be strictly increasing and finite: {radii:?}")));
        }
        Ok(LayerPartition { radii, dim, center: vec![0.0; dim] })
    }

    /// `L` shells of equal width up to radius `r`.
    pub fn equidistant(l: usize, r: f64, dim: usize) -> Result<Self> {
        if l < 1 || !(r > 0.0) {
            return Err(Error::InvalidArgument(format!("need L >= 1 and R > 0, got L={l}, R={r}")));
        }
        let radii = (0..=l).map(|k| if k == l { r } else { k as f64 * r / l as f64 }).collect();
        Self::new(radii, dim)
    }

    pub fn with_center(mut self, center: Vec<f64>) -> Result<Self> {
        check_dim(self.dim, center.len())?;
        self.center = center;
        Ok(self)
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn num_layers(&self) -> usize {
        self.radii.len() - 1
    }

    pub fn outer_radius(&self) -> f64 {
        *self.radii.last().unwrap()
    }

    pub fn chart(&self, layer: usize) -> PolarChart {
        PolarChart {
            layer,
            rho: (self.radii[layer], self.radii[layer + 1]),
            dim: self.dim,
            center: self.center.clone(),
        }
    }

    pub fn charts(&self) -> Vec<PolarChart> {
        (0..self.num_layers()).map(|l| self.chart(l)).collect()
    }

    /// Layer owning radius `r` under the half-open convention.
    pub fn layer_of_radius(&self, r: f64) -> Option<usize> {
        if !(r >= 0.0) || r >= self.outer_radius() {
            return None;
        }
        Some(self.radii.partition_point(|&x| x <= r) - 1)
    }

    /// Layer index and chart coordinates of `x`.
    pub fn cartesian_to_polar(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        check_dim(self.dim, x.len())?;
        let z: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let hat = polar_coordinates(&z);
        match self.layer_of_radius(hat[0]) {
            Some(l) => Ok((l, hat)),
            None => Err(Error::OutsideCoveredRegion { radius: hat[0], outer: self.outer_radius() }),
        }
    }

    /// Volume of the covered ball.
    pub fn ball_volume(&self) -> f64 {
        unit_ball_volume(self.dim) * self.outer_radius().powi(self.dim as i32)
    }
}

/// Polar coordinates of a centered point; `theta_0 = 0` on the axis.
pub fn polar_coordinates(z: &[f64]) -> Vec<f64> {
    let d = z.len();
    let mut hat = vec![0.0; d];
    // partial[k] = |(z_1..z_{k+1})|
    let mut partial = vec![0.0; d];
    let mut acc = 0.0f64;
    for k in 0..d {
        acc = acc.hypot(z[k]);
        partial[k] = acc;
    }
    hat[0] = partial[d - 1];
    let mut t0 = z[1].atan2(z[0]);
    if t0 < 0.0 {
        t0 += 2.0 * PI;
    }
    if t0 >= 2.0 * PI {
        t0 = 0.0;
    }
    hat[1] = t0;
    for m in 1..d.saturating_sub(1) {
        hat[m + 1] = partial[m].atan2(z[m + 1]);
    }
    hat
}

impl PolarChart {
    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radial_interval(&self) -> (f64, f64) {
        self.rho
    }

    /// Box bounds per chart coordinate.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let mut b = vec![self.rho, (0.0, 2.0 * PI)];
        b.extend(std::iter::repeat((0.0, PI)).take(self.dim - 2));
        b
    }

    pub fn contains(&self, xh: &[f64]) -> bool {
        xh.len() == self.dim
            && self
                .bounds()
                .iter()
                .zip(xh)
                .all(|(&(lo, hi), &v)| v >= lo - BOX_TOL && v <= hi + BOX_TOL)
    }

    pub fn polar_to_cartesian(&self, xh: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, xh.len())?;
        if !self.contains(xh) {
            return Err(Error::OutOfChart(xh.to_vec()));
        }
        Ok(self.polar_to_cartesian_unchecked(xh))
    }

    pub fn polar_to_cartesian_unchecked(&self, xh: &[f64]) -> Vec<f64> {
        let mut x = polar_direction(xh);
        for (xi, c) in x.iter_mut().zip(&self.center) {
            *xi += c;
        }
        x
    }

    /// `h_j(v)`: the univariate Jacobian factor of chart coordinate `j`.
    pub fn jacobian_factor(&self, j: usize, v: f64) -> f64 {
        match j {
            0 => v.powi(self.dim as i32 - 1),
            1 => 1.0,
            _ => v.sin().powi(j as i32 - 1),
        }
    }

    pub fn jacobian_det(&self, xh: &[f64]) -> f64 {
        xh.iter().enumerate().map(|(j, &v)| self.jacobian_factor(j, v)).product()
    }

    /// Integral of the Jacobian over the box, i.e. the shell volume.
    pub fn layer_weight_mass(&self) -> f64 {
        let d = self.dim as i32;
        let radial = (self.rho.1.powi(d) - self.rho.0.powi(d)) / d as f64;
        let angular: f64 = (1..self.dim - 1).map(|i| trig_power_integral(i, 0, false)).product();
        radial * 2.0 * PI * angular
    }
}

/// Polar map without center: `rho * (cos t0 S_1, sin t0 S_1, cos t_1 S_2, ..., cos t_{d-2})`
/// with `S_m = prod_{i >= m} sin t_i`.
pub fn polar_direction(xh: &[f64]) -> Vec<f64> {
    let d = xh.len();
    let rho = xh[0];
    let mut x = vec![0.0; d];
    let mut s = rho;
    for m in (1..d - 1).rev() {
        let (sn, cs) = xh[m + 1].sin_cos();
        x[m + 1] = s * cs;
        s *= sn;
    }
    let (sn, cs) = xh[1].sin_cos();
    x[0] = s * cs;
    x[1] = s * sn;
    x
}

pub fn unit_ball_volume(d: usize) -> f64 {
    // V_d = 2 pi V_{d-2} / d
    let mut v = if d % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if d % 2 == 0 { 2 } else { 3 };
    while k <= d {
        v *= 2.0 * PI / k as f64;
        k += 2;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_jacobian_det(chart: &PolarChart, xh: &[f64]) -> f64 {
        let d = xh.len();
        let h = 1e-6;
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut p = xh.to_vec();
            let mut q = xh.to_vec();
            p[j] += h;
            q[j] -= h;
            let fp = chart.polar_to_cartesian_unchecked(&p);
            let fq = chart.polar_to_cartesian_unchecked(&q);
            for i in 0..d {
                m[(i, j)] = (fp[i] - fq[i]) / (2.0 * h);
            }
        }
        m.determinant().abs()
    }

    fn random_hat(rng: &mut ChaCha8Rng, chart: &PolarChart) -> Vec<f64> {
        chart.bounds().iter().map(|&(a, b)| rng.gen_range(a..b)).collect()
    }

    #[test]
    fn polar_examples() {
        let p = LayerPartition::equidistant(1, 5.0, 2).unwrap();
        let x = p.chart(0).polar_to_cartesian(&[1.0, 0.0]).unwrap();
        assert_eq!(x, vec![1.0, 0.0]);
        let p3 = LayerPartition::equidistant(1, 5.0, 3).unwrap();
        let x = p3.chart(0).polar_to_cartesian(&[2.0, PI / 2.0, PI / 2.0]).unwrap();
        assert!((x[0]).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15 && x[2].abs() < 1e-15);
        assert!(matches!(p3.chart(0).polar_to_cartesian(&[6.0, 0.0, 0.0]), Err(Error::OutOfChart(_))));
    }

    #[test]
    fn norm_preserved_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &d in &[2usize, 3, 5, 6] {
            let p = LayerPartition::equidistant(4, 3.0, d).unwrap();
            for _ in 0..1000 {
                let l = rng.gen_range(0..4);
                let chart = p.chart(l);
                let xh = random_hat(&mut rng, &chart);
                let x = chart.polar_to_cartesian(&xh).unwrap();
                let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - xh[0]).abs() < 1e-12);
                let (l2, back) = p.cartesian_to_polar(&x).unwrap();
                let x2 = p.chart(l2).polar_to_cartesian(&back).unwrap();
                for (a, b) in x.iter().zip(&x2) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn axis_points_and_boundaries() {
        let p = LayerPartition::equidistant(3, 3.0, 3).unwrap();
        let (l, hat) = p.cartesian_to_polar(&[0.0, 0.0, 1.5]).unwrap();
        assert_eq!(l, 1);
        assert_eq!(hat[1], 0.0);
        let x = p.chart(l).polar_to_cartesian(&hat).unwrap();
        assert!((x[2] - 1.5).abs() < 1e-15 && x[0].abs() < 1e-15);
        let (l, _) = p.cartesian_to_polar(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(l, 1, "radius rho_2 belongs to the second shell");
        assert!(matches!(p.cartesian_to_polar(&[3.0, 0.0, 0.0]), Err(Error::OutsideCoveredRegion { .. })));
    }

    #[test]
    fn jacobian_examples_and_fd() {
        let p2 = LayerPartition::equidistant(1, 5.0, 2).unwrap();
        assert_eq!(p2.chart(0).jacobian_det(&[3.0, 1.2]), 3.0);
        let p4 = LayerPartition::equidistant(2, 4.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let chart = p4.chart(1);
            let xh = random_hat(&mut rng, &chart);
            let fd = fd_jacobian_det(&chart, &xh);
            let an = chart.jacobian_det(&xh);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
        }
        assert_eq!(p4.chart(0).jacobian_det(&[1.0, 0.3, 0.0, 1.0]), 0.0);
    }

    #[test]
    fn shell_masses() {
        let p = LayerPartition::equidistant(1, 1.0, 2).unwrap();
        assert!((p.chart(0).layer_weight_mass() - PI).abs() < 1e-15);
        let p = LayerPartition::equidistant(1, 1.0, 3).unwrap();
        assert!((p.chart(0).layer_weight_mass() - 4.0 * PI / 3.0).abs() < 1e-14);
        for d in 2..12 {
            let p = LayerPartition::equidistant(19, 10.0, d).unwrap();
            let total: f64 = p.charts().iter().map(|c| c.layer_weight_mass()).sum();
            assert!((total / p.ball_volume() - 1.0).abs() < 1e-12, "d={d}");
        }
    }

    #[test]
    fn shell_volume_monte_carlo_d6() {
        let p = LayerPartition::new(vec![0.0, 1.0, 2.0], 6).unwrap();
        let exact = p.chart(1).layer_weight_mass();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let r2: f64 = (0..6).map(|_| rng.gen_range(-2.0f64..2.0).powi(2)).sum();
            if (1.0..4.0).contains(&r2) {
                hits += 1;
            }
        }
        let frac = hits as f64 / n as f64;
        let cube = 4f64.powi(6);
        let se = cube * (frac * (1.0 - frac) / n as f64).sqrt();
        assert!((cube * frac - exact).abs() < 3.0 * se, "{} vs {exact} (se {se})", cube * frac);
    }

    #[test]
    fn equidistant_radii() {
        let p = LayerPartition::equidistant(19, 10.0, 2).unwrap();
        assert_eq!(p.radii().len(), 20);
        assert_eq!(p.radii()[0], 0.0);
        assert_eq!(p.radii()[19], 10.0);
        assert!((p.radii()[1] - 10.0 / 19.0).abs() < 1e-15);
        let q = LayerPartition::equidistant(1, 1.0, 2).unwrap();
        assert_eq!(q.radii(), &[0.0, 1.0]);
        assert!(LayerPartition::equidistant(0, 1.0, 2).is_err());
    }
}
