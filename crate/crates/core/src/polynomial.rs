//! Sparse multivariate polynomials with `f64` coefficients.

use std::collections::BTreeMap;

/// `sum_beta c_beta x^beta`, keyed by exponent tuple.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultiPoly {
    dim: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl MultiPoly {
    pub fn zero(dim: usize) -> Self {
        MultiPoly { dim, terms: BTreeMap::new() }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Self::zero(dim);
        p.add_term(vec![0; dim], c);
        p
    }

    /// The coordinate function `x_i`.
    pub fn variable(dim: usize, i: usize) -> Self {
        let mut e = vec![0; dim];
        e[i] = 1;
        let mut p = Self::zero(dim);
        p.add_term(e, 1.0);
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &f64)> {
        self.terms.iter()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn add_term(&mut self, exps: Vec<u32>, c: f64) {
        debug_assert_eq!(exps.len(), self.dim);
        if c == 0.0 {
            return;
        }
        *self.terms.entry(exps).or_insert(0.0) += c;
    }

    pub fn add(&self, other: &MultiPoly) -> MultiPoly {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }

    pub fn scale(&self, s: f64) -> MultiPoly {
        MultiPoly {
            dim: self.dim,
            terms: self.terms.iter().map(|(e, c)| (e.clone(), c * s)).collect(),
        }
    }

    pub fn mul(&self, other: &MultiPoly) -> MultiPoly {
        let mut out = MultiPoly::zero(self.dim);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, c1 * c2);
            }
        }
        out
    }

    pub fn pow(&self, n: u32) -> MultiPoly {
        let mut out = MultiPoly::constant(self.dim, 1.0);
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }

    /// `self(q_1(x), ..., q_n(x))`.
    pub fn compose(&self, inner: &[MultiPoly]) -> MultiPoly {
        assert_eq!(inner.len(), self.dim, "composition arity");
        let dim = inner.first().map(|p| p.dim).unwrap_or(0);
        let mut out = MultiPoly::zero(dim);
        for (e, c) in &self.terms {
            let mut term = MultiPoly::constant(dim, *c);
            for (q, &k) in inner.iter().zip(e) {
                if k > 0 {
                    term = term.mul(&q.pow(k));
                }
            }
            out = out.add(&term);
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(&k, &v)| v.powi(k as i32)).product::<f64>())
            .sum()
    }
}

/// Product `prod_k p_k^{alpha_k}` of component polynomials.
pub fn monomial_of(components: &[MultiPoly], alpha: &[u32]) -> MultiPoly {
    let dim = components[0].dim();
    let mut out = MultiPoly::constant(dim, 1.0);
    for (p, &a) in components.iter().zip(alpha) {
        if a > 0 {
            out = out.mul(&p.pow(a));
        }
    }
    out
}
