//! Small dense linear-algebra helpers shared by the analysis modules.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value threshold used for numeric rank decisions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RankTol {
    /// `max(rows, cols) * f64::EPSILON`.
    #[default]
    Auto,
    /// Singular values below `tol * sigma_max` are treated as zero.
    Relative(f64),
}

impl RankTol {
    pub fn resolve(self, rows: usize, cols: usize) -> f64 {
        match self {
            RankTol::Auto => rows.max(cols) as f64 * f64::EPSILON,
            RankTol::Relative(tol) => tol,
        }
    }
}

/// Singular values in descending order.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Number of singular values at or above `tol * sigma_max`.
pub fn numeric_rank(sv_desc: &[f64], tol: f64) -> usize {
    let smax = sv_desc.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    sv_desc.iter().filter(|&&s| s >= tol * smax).count()
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn sym_eigenvalues_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (ss / a.len() as f64).sqrt()
}

pub fn dvector(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}

/// Linear-interpolated quantile of already sorted data, `q` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, 0.5)
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
