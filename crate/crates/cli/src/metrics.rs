//! Error measures and summary statistics for report tables.

use nalgebra::{DMatrix, DVector};
use ttdensity_core::tt::{empirical_hellinger, empirical_kl};
use ttdensity_core::LayeredDensity;

/// `|a - b|_2 / |b|_2`.
pub fn rel_err_vec(approx: &DVector<f64>, exact: &DVector<f64>) -> f64 {
    (approx - exact).norm() / exact.norm()
}

/// `|A - B|_F / |B|_F`.
pub fn rel_err_mat(approx: &DMatrix<f64>, exact: &DMatrix<f64>) -> f64 {
    (approx - exact).norm() / exact.norm()
}

/// Linear-interpolation quantile of unsorted data, `q` in [0, 1].
pub fn quantile(data: &[f64], q: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return v[lo];
    }
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(data: &[f64]) -> f64 {
    quantile(data, 0.5)
}

/// Plug-in KL divergence (with standard error) and Hellinger distance of the
/// surrogate from a density with normalized log-values `log_f` at `points`,
/// which are drawn from that density.
pub fn divergences(density: &LayeredDensity, points: &[Vec<f64>], log_f: &[f64]) -> (f64, f64, f64) {
    let fh: Vec<f64> = points.iter().map(|x| density.eval(x)).collect();
    let (kl, kl_se) = empirical_kl(log_f, &fh).unwrap_or((f64::INFINITY, f64::NAN));
    (kl, kl_se, empirical_hellinger(log_f, &fh))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let d = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&d, 0.0), 1.0);
        assert_eq!(quantile(&d, 1.0), 4.0);
        assert_eq!(median(&d), 2.5);
        assert!(median(&[]).is_nan());
        assert_eq!(median(&[f64::INFINITY]), f64::INFINITY);
    }

    #[test]
    fn relative_errors() {
        let a = DVector::from_vec(vec![1.0, 0.0]);
        let b = DVector::from_vec(vec![2.0, 0.0]);
        assert_eq!(rel_err_vec(&a, &b), 0.5);
        let m = DMatrix::identity(2, 2);
        assert!((rel_err_mat(&(m.clone() * 1.1), &m) - 0.1).abs() < 1e-15);
    }
}
