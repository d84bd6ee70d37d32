//! Orthonormal univariate bases for the polar layer charts.
//!
//! Three families cover every chart coordinate: polynomials orthonormal
//! under `rho^(d-1)` on a radial interval, the real Fourier basis on
//! `[0, 2pi]`, and polynomials orthonormal under `sin^i` on `[0, pi]`.
//!
//! Polynomials are generated by Gram-Schmidt in extended precision and
//! stored in the local variable `t = (x - midpoint) / halfwidth`, which keeps
//! double-precision evaluation well conditioned on narrow intervals far from
//! the origin.

mod big;

use std::f64::consts::PI;

use astro_float::BigFloat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{periodic_trapezoid, GaussLegendre};
use big::{binomials, BigCtx};

/// Default number of significant decimal digits used during generation.
pub const DEFAULT_TAU_MANT: u32 = 100;

/// Largest monomial power tabulated at construction.
pub const MONOMIAL_TABLE_CAP: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Radial,
    Trig,
    Angular,
}

/// Weight function of the inner product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weight {
    /// `rho^(d-1)`.
    RadialPower { d: usize },
    Constant,
    /// `sin(theta)^i`.
    SinPower { i: usize },
}

impl Weight {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Weight::RadialPower { d } => x.powi(d as i32 - 1),
            Weight::Constant => 1.0,
            Weight::SinPower { i } => x.sin().powi(i as i32),
        }
    }
}

/// On-disk form of a basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisDescriptor {
    pub family: Family,
    pub interval: [f64; 2],
    pub weight: Weight,
    pub size: usize,
    pub tau_mant: u32,
    /// Coefficients of each polynomial in powers of
    /// `t = (x - midpoint) / halfwidth`, lowest degree first.
    pub coefficients: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "BasisDescriptor", into = "BasisDescriptor")]
pub struct OrthonormalBasis1D {
    family: Family,
    interval: (f64, f64),
    weight: Weight,
    size: usize,
    tau_mant: u32,
    midpoint: f64,
    halfwidth: f64,
    coeff_strings: Vec<Vec<String>>,
    coeffs: Vec<Vec<f64>>,
    // monomial_table[m][j] = int x^m P_j w
    monomial_table: Vec<Vec<f64>>,
}

impl From<OrthonormalBasis1D> for BasisDescriptor {
    fn from(b: OrthonormalBasis1D) -> Self {
        b.descriptor()
    }
}

impl TryFrom<BasisDescriptor> for OrthonormalBasis1D {
    type Error = Error;
    fn try_from(d: BasisDescriptor) -> Result<Self> {
        OrthonormalBasis1D::from_descriptor(&d)
    }
}

/// Radial basis of `n` polynomials on `[a, b]` orthonormal under `rho^(d-1)`.
pub fn radial_basis(interval: (f64, f64), n: usize, d: usize, tau_mant: u32) -> Result<OrthonormalBasis1D> {
    let (a, b) = interval;
    if !(a >= 0.0 && b > a && n >= 1 && d >= 1) {
        return Err(Error::InvalidArgument(format!(
            "radial basis needs 0 <= a < b, n >= 1, d >= 1 (got [{a}, {b}], n={n}, d={d})"
        )));
    }
    PolyBuilder::new(Family::Radial, interval, Weight::RadialPower { d }, tau_mant).build(n)
}

/// Real Fourier basis of size `n` on `[0, 2pi]`.
pub fn trig_basis(n: usize) -> OrthonormalBasis1D {
    assert!(n >= 1, "trig basis needs n >= 1");
    let mut basis = OrthonormalBasis1D {
        family: Family::Trig,
        interval: (0.0, 2.0 * PI),
        weight: Weight::Constant,
        size: n,
        tau_mant: 0,
        midpoint: PI,
        halfwidth: PI,
        coeff_strings: Vec::new(),
        coeffs: Vec::new(),
        monomial_table: Vec::new(),
    };
    basis.monomial_table = (0..=MONOMIAL_TABLE_CAP)
        .map(|m| (0..n).map(|j| basis.quadrature_monomial(m, j)).collect())
        .collect();
    basis
}

/// Angular basis of `n` polynomials on `[0, pi]` orthonormal under `sin^i`.
pub fn angular_basis(i: usize, n: usize, tau_mant: u32) -> Result<OrthonormalBasis1D> {
    if i < 1 || n < 1 {
        return Err(Error::InvalidArgument(format!("angular basis needs i >= 1, n >= 1 (got i={i}, n={n})")));
    }
    PolyBuilder::new(Family::Angular, (0.0, PI), Weight::SinPower { i }, tau_mant).build(n)
}

/// `int sin^a cos^b` over `[0, 2pi]` (`full_period`) or `[0, pi]`.
pub fn trig_power_integral(a: usize, b: usize, full_period: bool) -> f64 {
    if b % 2 == 1 || (full_period && a % 2 == 1) {
        return 0.0;
    }
    // (a-1)!! (b-1)!! / (a+b)!!, accumulated as a ratio
    let mut r = 1.0;
    let mut num: Vec<usize> = (1..a).rev().step_by(2).collect();
    num.extend((1..b).rev().step_by(2));
    let den: Vec<usize> = (1..=a + b).rev().step_by(2).collect();
    for k in 0..num.len().max(den.len()) {
        if let Some(&n) = num.get(k) {
            r *= n as f64;
        }
        if let Some(&d) = den.get(k) {
            r /= d as f64;
        }
    }
    if full_period {
        2.0 * PI * r
    } else if a % 2 == 0 {
        PI * r
    } else {
        2.0 * r
    }
}

impl OrthonormalBasis1D {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn weight(&self) -> Weight {
        self.weight
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn tau_mant(&self) -> u32 {
        self.tau_mant
    }

    /// Polynomial degree, or Fourier frequency for the trig family.
    pub fn degree(&self, j: usize) -> usize {
        match self.family {
            Family::Trig => j.div_ceil(2),
            _ => j,
        }
    }

    /// Coefficients of `P_j` in powers of the local variable.
    pub fn local_coefficients(&self, j: usize) -> &[f64] {
        &self.coeffs[j]
    }

    pub fn local_variable(&self) -> (f64, f64) {
        (self.midpoint, self.halfwidth)
    }

    /// `x` lies in the closed interval up to `tol`.
    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.interval.0 - tol && x <= self.interval.1 + tol
    }

    /// Value of `P_j(x)` (0-based `j`).
    pub fn eval(&self, j: usize, x: f64) -> f64 {
        match self.family {
            Family::Trig => trig_value(j, x),
            _ => {
                let t = (x - self.midpoint) / self.halfwidth;
                horner(&self.coeffs[j], t)
            }
        }
    }

    /// All basis values at `x` written into `out[..size]`.
    pub fn eval_all(&self, x: f64, out: &mut [f64]) {
        match self.family {
            Family::Trig => {
                out[0] = 1.0 / (2.0 * PI).sqrt();
                let s = 1.0 / PI.sqrt();
                for k in 1..=self.size / 2 {
                    let (sn, cs) = (k as f64 * x).sin_cos();
                    out[2 * k - 1] = sn * s;
                    if 2 * k < self.size {
                        out[2 * k] = cs * s;
                    }
                }
            }
            _ => {
                let t = (x - self.midpoint) / self.halfwidth;
                for (j, o) in out.iter_mut().enumerate().take(self.size) {
                    *o = horner(&self.coeffs[j], t);
                }
            }
        }
    }

    pub fn eval_vec(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        self.eval_all(x, &mut out);
        out
    }

    /// `int x^m P_j(x) w(x) dx` over the basis interval.
    pub fn weighted_monomial_integral(&self, m: usize, j: usize) -> f64 {
        if m <= MONOMIAL_TABLE_CAP {
            return self.monomial_table[m][j];
        }
        match self.family {
            Family::Trig => self.quadrature_monomial(m, j),
            _ => {
                let mut b = PolyBuilder::new(self.family, self.interval, self.weight, self.tau_mant);
                let coeffs = b.parse_coefficients(&self.coeff_strings);
                b.monomial_integral(&coeffs[j], m)
            }
        }
    }

    /// Mass of the weight over the interval.
    pub fn weight_mass(&self) -> f64 {
        let p0 = self.eval(0, self.midpoint);
        self.weighted_monomial_integral(0, 0) / p0
    }

    /// `int P_j(x) sin^a(x) cos^b(x) w(x) dx` over the basis interval.
    pub fn basis_times_trigpower_integral(&self, j: usize, a: usize, b: usize) -> f64 {
        match self.family {
            Family::Trig => {
                let m = 2 * (self.degree(j) + a + b) + 2;
                periodic_trapezoid(m, |x| trig_value(j, x) * x.sin().powi(a as i32) * x.cos().powi(b as i32))
            }
            _ => {
                let extra = match self.weight {
                    Weight::SinPower { i } => i,
                    Weight::RadialPower { d } => d - 1,
                    Weight::Constant => 0,
                };
                let total = self.degree(j) + a + b + extra;
                let nodes = (total / 2 + 8).max(2 * total + 24);
                let gl = GaussLegendre::cached(nodes);
                gl.integrate(self.interval.0, self.interval.1, |x| {
                    self.eval(j, x) * x.sin().powi(a as i32) * x.cos().powi(b as i32) * self.weight.eval(x)
                })
            }
        }
    }

    pub fn descriptor(&self) -> BasisDescriptor {
        BasisDescriptor {
            family: self.family,
            interval: [self.interval.0, self.interval.1],
            weight: self.weight,
            size: self.size,
            tau_mant: self.tau_mant,
            coefficients: self.coeff_strings.clone(),
        }
    }

    /// Rebuilds a basis from its descriptor without repeating Gram-Schmidt.
    pub fn from_descriptor(d: &BasisDescriptor) -> Result<Self> {
        match d.family {
            Family::Trig => {
                if d.size == 0 {
                    return Err(Error::Serialization("empty trig basis".into()));
                }
                Ok(trig_basis(d.size))
            }
            _ => {
                if d.coefficients.len() != d.size || d.coefficients.iter().enumerate().any(|(j, c)| c.len() != j + 1) {
                    return Err(Error::Serialization("coefficient table does not match basis size".into()));
                }
                let mut b = PolyBuilder::new(d.family, (d.interval[0], d.interval[1]), d.weight, d.tau_mant);
                let coeffs = b.parse_coefficients(&d.coefficients);
                Ok(b.finish(coeffs))
            }
        }
    }

    fn quadrature_monomial(&self, m: usize, j: usize) -> f64 {
        let nodes = 2 * (m + self.degree(j)) + 48;
        let gl = GaussLegendre::cached(nodes);
        gl.integrate(self.interval.0, self.interval.1, |x| x.powi(m as i32) * self.eval(j, x) * self.weight.eval(x))
    }
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * t + v)
}

fn trig_value(j: usize, x: f64) -> f64 {
    if j == 0 {
        return 1.0 / (2.0 * PI).sqrt();
    }
    let k = j.div_ceil(2) as f64;
    if j % 2 == 1 {
        (k * x).sin() / PI.sqrt()
    } else {
        (k * x).cos() / PI.sqrt()
    }
}

/// Extended-precision state for one polynomial family on one interval.
struct PolyBuilder {
    ctx: BigCtx,
    family: Family,
    interval: (f64, f64),
    weight: Weight,
    tau_mant: u32,
    mid: BigFloat,
    half: BigFloat,
    // kernel[n] = int_{-1}^{1} t^n k(t) dt for the family's reduced weight
    kernel: Vec<BigFloat>,
}

impl PolyBuilder {
    fn new(family: Family, interval: (f64, f64), weight: Weight, tau_mant: u32) -> Self {
        let tau_mant = tau_mant.max(50);
        let mut ctx = BigCtx::new(tau_mant);
        let (mid, half) = match family {
            Family::Angular => {
                let pi = ctx.pi();
                let h = ctx.div(&pi, &ctx.int(2));
                (h.clone(), h)
            }
            _ => {
                let a = ctx.f64(interval.0);
                let b = ctx.f64(interval.1);
                let two = ctx.int(2);
                (ctx.div(&ctx.add(&a, &b), &two), ctx.div(&ctx.sub(&b, &a), &two))
            }
        };
        PolyBuilder { ctx, family, interval, weight, tau_mant, mid, half, kernel: Vec::new() }
    }

    /// Order of the polynomial weight factor in `x`.
    fn weight_power(&self) -> usize {
        match self.weight {
            Weight::RadialPower { d } => d - 1,
            _ => 0,
        }
    }

    fn ensure_kernel(&mut self, n_max: usize) {
        if self.kernel.len() > n_max {
            return;
        }
        self.kernel = match self.weight {
            Weight::SinPower { i } => self.cos_power_moments(i, n_max),
            _ => (0..=n_max)
                .map(|n| {
                    if n % 2 == 0 {
                        self.ctx.div(&self.ctx.int(2), &self.ctx.int(n as i64 + 1))
                    } else {
                        self.ctx.zero()
                    }
                })
                .collect(),
        };
    }

    /// `int_{-1}^{1} t^n cos^i(pi t / 2) dt` for `n <= n_max`, by
    /// Clenshaw-Curtis quadrature with the node count doubled until two
    /// successive levels agree to half the working digits.
    fn cos_power_moments(&mut self, i: usize, n_max: usize) -> Vec<BigFloat> {
        let mut prev: Option<Vec<BigFloat>> = None;
        let mut nn = 32usize;
        loop {
            let cur = self.clenshaw_curtis_level(i, n_max, nn);
            if let Some(p) = &prev {
                let ok = (0..=n_max).step_by(2).all(|n| {
                    let diff = self.ctx.sub(&cur[n], &p[n]);
                    self.ctx.negligible(&diff, &cur[n], self.tau_mant / 2)
                });
                if ok || nn >= 4096 {
                    return cur;
                }
            }
            prev = Some(cur);
            nn *= 2;
        }
    }

    fn clenshaw_curtis_level(&mut self, i: usize, n_max: usize, nn: usize) -> Vec<BigFloat> {
        let ctx = &mut self.ctx;
        let pi = ctx.pi();
        // c[m] = cos(pi m / nn), m in 0..2nn
        let step = ctx.div(&pi, &ctx.int(nn as i64));
        let c: Vec<BigFloat> = (0..2 * nn)
            .map(|m| {
                let ang = ctx.mul(&step, &ctx.int(m as i64));
                ctx.cos(&ang)
            })
            .collect();
        let half_pi = ctx.div(&pi, &ctx.int(2));
        let mut out = vec![ctx.zero(); n_max + 1];
        for k in 0..=nn {
            let ck = if k == 0 || k == nn { 1 } else { 2 };
            let mut s = ctx.int(1);
            for j in 1..=nn / 2 {
                let bj = if 2 * j == nn { 1 } else { 2 };
                let idx = (2 * j * k) % (2 * nn);
                let term = ctx.div(&ctx.mul(&ctx.int(bj), &c[idx]), &ctx.int((4 * j * j - 1) as i64));
                s = ctx.sub(&s, &term);
            }
            let w = ctx.div(&ctx.mul(&s, &ctx.int(ck)), &ctx.int(nn as i64));
            let t = c[k].clone();
            let arg = ctx.mul(&half_pi, &t);
            let cv = ctx.cos(&arg);
            let fv = ctx.powi(&cv, i);
            let mut acc = ctx.mul(&w, &fv);
            for o in out.iter_mut() {
                *o = ctx.add(o, &acc);
                acc = ctx.mul(&acc, &t);
            }
        }
        out
    }

    /// `int x^m t^k w(x) dx` over the interval, with `x = mid + half t`.
    fn local_moment(&mut self, m: usize, k: usize, binom: &[BigFloat]) -> BigFloat {
        let q = m + self.weight_power();
        self.ensure_kernel(k + q);
        let ctx = &self.ctx;
        let mut acc = ctx.zero();
        let mut hp = ctx.int(1);
        for l in 0..=q {
            if (k + l) % 2 == 0 {
                let sp = ctx.powi(&self.mid, q - l);
                let term = ctx.mul(&ctx.mul(&binom[l], &sp), &ctx.mul(&hp, &self.kernel[k + l]));
                acc = ctx.add(&acc, &term);
            }
            hp = ctx.mul(&hp, &self.half);
        }
        ctx.mul(&acc, &self.half)
    }

    fn build(mut self, n: usize) -> Result<OrthonormalBasis1D> {
        let q = self.weight_power();
        let binom = binomials(&self.ctx, q);
        let gram: Vec<BigFloat> = (0..2 * n - 1).map(|k| self.local_moment(0, k, &binom)).collect();
        let ctx = &self.ctx;
        let inner = |p: &[BigFloat], r: &[BigFloat]| -> BigFloat {
            let mut acc = ctx.zero();
            for (a, pa) in p.iter().enumerate() {
                if pa.is_zero() {
                    continue;
                }
                for (b, rb) in r.iter().enumerate() {
                    if !rb.is_zero() {
                        acc = ctx.add(&acc, &ctx.mul(&ctx.mul(pa, rb), &gram[a + b]));
                    }
                }
            }
            acc
        };
        let mut basis: Vec<Vec<BigFloat>> = Vec::with_capacity(n);
        for k in 0..n {
            let mut v = vec![ctx.zero(); k + 1];
            v[k] = ctx.int(1);
            for _pass in 0..2 {
                for qj in &basis {
                    let c = inner(&v, qj);
                    for (vi, qi) in v.iter_mut().zip(qj) {
                        *vi = ctx.sub(vi, &ctx.mul(&c, qi));
                    }
                }
            }
            let nrm2 = inner(&v, &v);
            let digits = self.tau_mant;
            let scale = gram[2 * k].clone();
            if nrm2.is_negative() || ctx.negligible(&nrm2, &scale, digits) {
                return Err(Error::PrecisionLoss { index: k });
            }
            let nrm = ctx.sqrt(&nrm2);
            let v: Vec<BigFloat> = v.iter().map(|x| ctx.div(x, &nrm)).collect();
            basis.push(v);
        }
        Ok(self.finish(basis))
    }

    fn parse_coefficients(&mut self, strings: &[Vec<String>]) -> Vec<Vec<BigFloat>> {
        strings
            .iter()
            .map(|row| row.iter().map(|s| self.ctx.parse(s)).collect())
            .collect()
    }

    fn monomial_integral(&mut self, coeffs: &[BigFloat], m: usize) -> f64 {
        let binom = binomials(&self.ctx, m + self.weight_power());
        let mut acc = self.ctx.zero();
        for (k, c) in coeffs.iter().enumerate() {
            let mk = self.local_moment(m, k, &binom);
            acc = self.ctx.add(&acc, &self.ctx.mul(c, &mk));
        }
        self.ctx.to_f64(&acc)
    }

    fn finish(mut self, coeffs: Vec<Vec<BigFloat>>) -> OrthonormalBasis1D {
        let size = coeffs.len();
        let coeff_strings: Vec<Vec<String>> =
            coeffs.iter().map(|row| row.iter().map(|c| self.ctx.to_string(c)).collect()).collect();
        let coeffs_f64: Vec<Vec<f64>> = coeff_strings
            .iter()
            .map(|row| row.iter().map(|s| s.parse::<f64>().unwrap_or(f64::NAN)).collect())
            .collect();
        let monomial_table = (0..=MONOMIAL_TABLE_CAP)
            .map(|m| (0..size).map(|j| self.monomial_integral(&coeffs[j], m)).collect())
            .collect();
        let midpoint = self.ctx.to_f64(&self.mid.clone());
        let halfwidth = self.ctx.to_f64(&self.half.clone());
        OrthonormalBasis1D {
            family: self.family,
            interval: self.interval,
            weight: self.weight,
            size,
            tau_mant: self.tau_mant,
            midpoint,
            halfwidth,
            coeff_strings,
            coeffs: coeffs_f64,
            monomial_table,
        }
    }
}
