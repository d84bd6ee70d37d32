//! Thin wrapper over `astro_float` for the fixed-precision arithmetic used
//! while generating bases.

use astro_float::{BigFloat, Consts, Radix, RoundingMode};

const RM: RoundingMode = RoundingMode::ToEven;

pub(crate) struct BigCtx {
    p: usize,
    cc: Consts,
}

impl BigCtx {
    /// Context carrying at least `digits` significant decimal digits.
    pub fn new(digits: u32) -> Self {
        let bits = (digits as f64 * std::f64::consts::LOG2_10).ceil() as usize + 32;
        BigCtx {
            p: bits.div_ceil(64) * 64,
            cc: Consts::new().expect("astro-float constants"),
        }
    }

    pub fn int(&self, v: i64) -> BigFloat {
        BigFloat::from_i64(v, self.p)
    }

    pub fn f64(&self, v: f64) -> BigFloat {
        BigFloat::from_f64(v, self.p)
    }

    pub fn zero(&self) -> BigFloat {
        self.int(0)
    }

    pub fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, self.p, RM)
    }

    pub fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, self.p, RM)
    }

    pub fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, self.p, RM)
    }

    pub fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, self.p, RM)
    }

    pub fn sqrt(&self, a: &BigFloat) -> BigFloat {
        a.sqrt(self.p, RM)
    }

    pub fn powi(&self, a: &BigFloat, n: usize) -> BigFloat {
        if n == 0 {
            return self.int(1);
        }
        a.powi(n, self.p, RM)
    }

    pub fn pi(&mut self) -> BigFloat {
        self.cc.pi(self.p, RM)
    }

    pub fn cos(&mut self, a: &BigFloat) -> BigFloat {
        a.cos(self.p, RM, &mut self.cc)
    }

    pub fn to_string(&mut self, a: &BigFloat) -> String {
        if a.is_zero() {
            return "0".to_string();
        }
        a.format(Radix::Dec, RM, &mut self.cc)
            .expect("decimal formatting")
    }

    pub fn parse(&mut self, s: &str) -> BigFloat {
        BigFloat::parse(s, Radix::Dec, self.p, RM, &mut self.cc)
    }

    pub fn to_f64(&mut self, a: &BigFloat) -> f64 {
        let s = self.to_string(a);
        s.parse::<f64>().unwrap_or(f64::NAN)
    }

    /// `a` is below `10^-digits` times `b` in magnitude.
    pub fn negligible(&self, a: &BigFloat, b: &BigFloat, digits: u32) -> bool {
        let thresh = self.div(&self.int(1), &self.powi(&self.int(10), digits as usize));
        let scaled = self.mul(b, &thresh);
        a.abs_cmp(&scaled).map(|c| c < 0).unwrap_or(true)
    }
}

/// Binomial coefficients C(n, 0..=n) as big floats.
pub(crate) fn binomials(ctx: &BigCtx, n: usize) -> Vec<BigFloat> {
    let mut row = vec![ctx.int(1)];
    for k in 1..=n {
        let prev = &row[k - 1];
        let v = ctx.div(&ctx.mul(prev, &ctx.int((n - k + 1) as i64)), &ctx.int(k as i64));
        row.push(v);
    }
    row
}
