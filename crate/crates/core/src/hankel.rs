//! Hankel matrices, persistency of excitation and the minimum-norm Willems solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{numeric_rank, singular_values_desc, RankTol};

/// A finite, scalar-valued sampled sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    values: Vec<f64>,
    start_index: i64,
}

impl Signal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_start(values, 0)
    }

    pub fn with_start(values: Vec<f64>, start_index: i64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Parameter("signal must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal"));
        }
        Ok(Self { values, start_index })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// The samples from `offset` on, with the start index advanced accordingly.
    pub fn suffix(&self, offset: usize) -> Result<Self> {
        if offset >= self.len() {
            return Err(Error::Depth { depth: offset + 1, len: self.len() });
        }
        Self::with_start(self.values[offset..].to_vec(), self.start_index + offset as i64)
    }

    /// The first `len` samples.
    pub fn prefix(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(Error::Depth { depth: len, len: self.len() });
        }
        Self::with_start(self.values[..len].to_vec(), self.start_index)
    }
}

impl std::ops::Index<usize> for Signal {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// An `L x (N - L + 1)` matrix with entry `(i, j) = z[i + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix {
    matrix: DMatrix<f64>,
}

impl HankelMatrix {
    pub fn depth(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn width(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i).iter().copied().collect()
    }

    /// Reads the generating sequence back from the first column and last row.
    pub fn signal(&self) -> Vec<f64> {
        let (l, w) = self.matrix.shape();
        let mut z: Vec<f64> = (0..l).map(|i| self.matrix[(i, 0)]).collect();
        z.extend((1..w).map(|j| self.matrix[(l - 1, j)]));
        z
    }

    pub fn is_skew_constant(&self) -> bool {
        let (l, w) = self.matrix.shape();
        (1..l).all(|i| (0..w - 1).all(|j| self.matrix[(i, j)] == self.matrix[(i - 1, j + 1)]))
    }
}

pub fn build_hankel(z: &Signal, depth: usize) -> Result<HankelMatrix> {
    hankel_from_slice(z.values(), depth)
}

pub(crate) fn hankel_from_slice(z: &[f64], depth: usize) -> Result<HankelMatrix> {
    let n = z.len();
    if depth == 0 || depth > n {
        return Err(Error::Depth { depth, len: n });
    }
    let width = n - depth + 1;
    Ok(HankelMatrix { matrix: DMatrix::from_fn(depth, width, |i, j| z[i + j]) })
}

/// Hankel matrix of the signal advanced by one sample, `H_L(z[1..])`.
pub fn shift_hankel(z: &Signal, depth: usize) -> Result<HankelMatrix> {
    if depth == 0 || z.len() < depth + 1 {
        return Err(Error::Depth { depth: depth + 1, len: z.len() });
    }
    hankel_from_slice(&z.values()[1..], depth)
}

/// Whether `H_L(z)` has full row rank, together with its numeric rank.
pub fn is_persistently_exciting(z: &Signal, order: usize, rank_tol: RankTol) -> Result<(bool, usize)> {
    let h = build_hankel(z, order)?;
    let sv = singular_values_desc(h.matrix());
    let rank = numeric_rank(&sv, rank_tol.resolve(h.depth(), h.width()));
    Ok((rank == order, rank))
}

/// Input/output Hankel matrices of depth `L` and their one-step-shifted twins,
/// all built from one dataset of `N + 1` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelModel {
    depth: usize,
    data_len: usize,
    hu: HankelMatrix,
    hy: HankelMatrix,
    hu_shift: HankelMatrix,
    hy_shift: HankelMatrix,
}

impl HankelModel {
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `N`; the dataset holds samples `0..=N`.
    pub fn data_len(&self) -> usize {
        self.data_len
    }

    /// Number of columns, `N - L + 1`.
    pub fn width(&self) -> usize {
        self.hu.width()
    }

    pub fn hu(&self) -> &HankelMatrix {
        &self.hu
    }

    pub fn hy(&self) -> &HankelMatrix {
        &self.hy
    }

    pub fn hu_shift(&self) -> &HankelMatrix {
        &self.hu_shift
    }

    pub fn hy_shift(&self) -> &HankelMatrix {
        &self.hy_shift
    }

    /// `[Hu; Hy]`, `2L` rows.
    pub fn stacked(&self) -> DMatrix<f64> {
        stack_rows(self.hu.matrix(), self.hy.matrix())
    }
}

pub(crate) fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(top.ncols(), bottom.ncols());
    let (rt, c) = top.shape();
    let rb = bottom.nrows();
    DMatrix::from_fn(rt + rb, c, |i, j| if i < rt { top[(i, j)] } else { bottom[(i - rt, j)] })
}

pub fn build_model(u: &Signal, y: &Signal, depth: usize) -> Result<HankelModel> {
    if u.len() != y.len() {
        return Err(Error::Dimension(format!(
            "input has {} samples but output has {}",
            u.len(),
            y.len()
        )));
    }
    if depth == 0 || u.len() < depth + 1 {
        return Err(Error::Depth { depth: depth + 1, len: u.len() });
    }
    let n = u.len() - 1;
    let (uv, yv) = (u.values(), y.values());
    Ok(HankelModel {
        depth,
        data_len: n,
        hu: hankel_from_slice(&uv[..n], depth)?,
        hy: hankel_from_slice(&yv[..n], depth)?,
        hu_shift: hankel_from_slice(&uv[1..], depth)?,
        hy_shift: hankel_from_slice(&yv[1..], depth)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinNormSolution {
    pub alpha: DVector<f64>,
    pub residual_norm: f64,
    pub effective_rank: usize,
}

/// Truncated SVD of a fixed matrix, reused for repeated minimum-norm solves
/// against different right-hand sides.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    rows: usize,
    cols: usize,
    /// `rows x r`
    u: DMatrix<f64>,
    /// `r` retained singular values, descending.
    sigma: Vec<f64>,
    /// `cols x r`
    v: DMatrix<f64>,
    singular_values: Vec<f64>,
}

impl PseudoInverse {
    pub fn new(m: &DMatrix<f64>, rank_tol: RankTol) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::Dimension("empty matrix".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pseudoinverse input"));
        }
        let (rows, cols) = m.shape();
        let svd = m.clone().svd(true, true);
        let u_full = svd.u.expect("left singular vectors requested");
        let vt_full = svd.v_t.expect("right singular vectors requested");
        let all: Vec<f64> = svd.singular_values.iter().copied().collect();
        let mut order: Vec<usize> = (0..all.len()).collect();
        order.sort_by(|&a, &b| all[b].total_cmp(&all[a]));
        let singular_values: Vec<f64> = order.iter().map(|&k| all[k]).collect();
        let rank = numeric_rank(&singular_values, rank_tol.resolve(rows, cols));
        let keep = &order[..rank];
        let u = DMatrix::from_fn(rows, rank, |i, k| u_full[(i, keep[k])]);
        let v = DMatrix::from_fn(cols, rank, |i, k| vt_full[(keep[k], i)]);
        let sigma = keep.iter().map(|&k| all[k]).collect();
        Ok(Self { rows, cols, u, sigma, v, singular_values })
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// All singular values of the factored matrix, descending.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Left singular vectors of the retained triplets.
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Right singular vectors of the retained triplets.
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn retained_sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Coordinates of the minimum-norm solution in the retained right singular
    /// basis: `alpha = V * coords`, with `coords = S^-1 U^T b`.
    pub fn coordinates(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut c = self.u.tr_mul(b);
        for (ck, s) in c.iter_mut().zip(&self.sigma) {
            *ck /= s;
        }
        c
    }

    /// `||b - M M^+ b||`, computed from the left singular basis.
    pub fn residual_norm(&self, b: &DVector<f64>) -> f64 {
        let proj = &self.u * self.u.tr_mul(b);
        (b - proj).norm()
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<MinNormSolution> {
        if b.len() != self.rows {
            return Err(Error::Dimension(format!(
                "right-hand side has {} entries, matrix has {} rows",
                b.len(),
                self.rows
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("right-hand side"));
        }
        let alpha = &self.v * self.coordinates(b);
        Ok(MinNormSolution { alpha, residual_norm: self.residual_norm(b), effective_rank: self.rank() })
    }

    /// The dense pseudoinverse `V S^-1 U^T` (`cols x rows`).
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut vs = self.v.clone();
        for (k, s) in self.sigma.iter().enumerate() {
            vs.column_mut(k).scale_mut(1.0 / s);
        }
        vs * self.u.transpose()
    }
}

/// Minimum-norm least-squares solution of `M alpha = b` via a truncated SVD.
pub fn min_norm_solve(m: &DMatrix<f64>, b: &DVector<f64>, rank_tol: RankTol) -> Result<MinNormSolution> {
    if m.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "matrix has {} rows but right-hand side has {} entries",
            m.nrows(),
            b.len()
        )));
    }
    let pinv = PseudoInverse::new(m, rank_tol)?;
    let mut sol = pinv.solve(b)?;
    sol.residual_norm = (m * &sol.alpha - b).norm();
    Ok(sol)
}

/// `1 / sigma_k(M)` for 1-based `k`; `+inf` when `sigma_k` falls below the
/// rank threshold.
pub fn pinv_norm(m: &DMatrix<f64>, k: usize, rank_tol: RankTol) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::Dimension("empty matrix".into()));
    }
    let bound = m.nrows().min(m.ncols());
    if k == 0 || k > bound {
        return Err(Error::Index { index: k, bound });
    }
    let sv = singular_values_desc(m);
    let tol = rank_tol.resolve(m.nrows(), m.ncols());
    let sk = sv[k - 1];
    if sk < tol * sv[0] || sk == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(1.0 / sk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_vec, stream};
    use proptest::prelude::*;

    fn sig(v: &[f64]) -> Signal {
        Signal::new(v.to_vec()).unwrap()
    }

    fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        DMatrix::from_vec(rows, cols, standard_normal_vec(&mut stream(seed), rows * cols))
    }

    #[test]
    fn hankel_examples() {
        let h = build_hankel(&sig(&[1., 2., 3., 4., 5.]), 2).unwrap();
        assert_eq!(h.matrix(), &DMatrix::from_row_slice(2, 4, &[1., 2., 3., 4., 2., 3., 4., 5.]));
        let h = build_hankel(&sig(&[7.]), 1).unwrap();
        assert_eq!(h.matrix(), &DMatrix::from_element(1, 1, 7.));
        let h = build_hankel(&sig(&[1., 2., 3.]), 3).unwrap();
        assert_eq!(h.matrix(), &DMatrix::from_column_slice(3, 1, &[1., 2., 3.]));
    }

    #[test]
    fn hankel_depth_errors() {
        let z = sig(&[1., 2., 3.]);
        assert_eq!(build_hankel(&z, 0), Err(Error::Depth { depth: 0, len: 3 }));
        assert_eq!(build_hankel(&z, 4), Err(Error::Depth { depth: 4, len: 3 }));
        assert!(shift_hankel(&z, 3).is_err());
        let msg = build_hankel(&z, 4).unwrap_err().to_string();
        assert!(msg.contains('4') && msg.contains('3'));
    }

    #[test]
    fn signal_rejects_bad_input() {
        assert!(Signal::new(vec![]).is_err());
        assert_eq!(Signal::new(vec![1.0, f64::NAN]), Err(Error::NonFinite("signal")));
    }

    #[test]
    fn shift_examples() {
        let h = shift_hankel(&sig(&[1., 2., 3., 4.]), 2).unwrap();
        assert_eq!(h.matrix(), &DMatrix::from_row_slice(2, 2, &[2., 3., 3., 4.]));
        let h = shift_hankel(&sig(&[0., 0., 0.]), 1).unwrap();
        assert_eq!(h.matrix(), &DMatrix::from_row_slice(1, 2, &[0., 0.]));
    }

    #[test]
    fn shift_matches_suffix_construction() {
        let z = standard_normal_vec(&mut stream(11), 51);
        let shifted = shift_hankel(&sig(&z), 5).unwrap();
        // independent construction from the explicit suffix
        let suffix = &z[1..];
        assert_eq!(shifted.depth(), 5);
        assert_eq!(shifted.width(), 50 - 5 + 1);
        for i in 0..5 {
            for j in 0..shifted.width() {
                assert_eq!(shifted.get(i, j), suffix[i + j]);
            }
        }
    }

    #[test]
    fn persistency_examples() {
        assert_eq!(is_persistently_exciting(&sig(&[1., 1., 1., 1.]), 2, RankTol::Auto).unwrap(), (false, 1));
        // a leading impulse leaves the second row empty; an interior one is exciting
        assert_eq!(is_persistently_exciting(&sig(&[1., 0., 0., 0., 0.]), 2, RankTol::Auto).unwrap(), (false, 1));
        assert_eq!(is_persistently_exciting(&sig(&[0., 1., 0., 0., 0.]), 2, RankTol::Auto).unwrap(), (true, 2));
    }

    #[test]
    fn gaussian_inputs_are_persistently_exciting() {
        let hits = (0..200u64)
            .filter(|&s| {
                let z = sig(&standard_normal_vec(&mut stream(s), 50));
                is_persistently_exciting(&z, 4, RankTol::Auto).unwrap().0
            })
            .count();
        assert_eq!(hits, 200);
    }

    #[test]
    fn model_blocks() {
        let u = sig(&[1., 2., 3.]);
        let m = build_model(&u, &u, 1).unwrap();
        assert_eq!(m.hu().matrix(), &DMatrix::from_row_slice(1, 2, &[1., 2.]));
        assert_eq!(m.hy().matrix(), &DMatrix::from_row_slice(1, 2, &[1., 2.]));
        assert_eq!(m.hu_shift().matrix(), &DMatrix::from_row_slice(1, 2, &[2., 3.]));
        assert_eq!(m.hy_shift().matrix(), &DMatrix::from_row_slice(1, 2, &[2., 3.]));
        assert_eq!(m.stacked().nrows(), 2);
        assert_eq!(m.data_len(), 2);
        assert!(matches!(build_model(&u, &sig(&[1., 2.]), 1), Err(Error::Dimension(_))));
        assert!(matches!(build_model(&u, &u, 3), Err(Error::Depth { .. })));
    }

    #[test]
    fn constant_input_builds_but_is_not_exciting() {
        let u = sig(&[1.0; 30]);
        let y = sig(&standard_normal_vec(&mut stream(3), 30));
        assert!(build_model(&u, &y, 2).is_ok());
        let n = 2;
        assert!(!is_persistently_exciting(&u, 2 + 1 + n, RankTol::Auto).unwrap().0);
    }

    #[test]
    fn min_norm_examples() {
        let sol = min_norm_solve(&DMatrix::identity(3, 3), &DVector::from_vec(vec![1., 2., 3.]), RankTol::Auto).unwrap();
        assert!((sol.alpha - DVector::from_vec(vec![1., 2., 3.])).norm() < 1e-14);
        assert!(sol.residual_norm < 1e-14);
        assert_eq!(sol.effective_rank, 3);

        let sol = min_norm_solve(&DMatrix::from_row_slice(1, 2, &[1., 1.]), &DVector::from_vec(vec![2.]), RankTol::Auto).unwrap();
        assert!((sol.alpha[0] - 1.0).abs() < 1e-14 && (sol.alpha[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn min_norm_matches_ridge_limit() {
        let m = gaussian_matrix(6, 9, 5);
        let b = DVector::from_vec(standard_normal_vec(&mut stream(6), 6));
        let sol = min_norm_solve(&m, &b, RankTol::Auto).unwrap();
        // ridge solution in its dual form M^T (M M^T + lambda I)^-1 b
        let ridge = |lambda: f64| {
            let g = &m * m.transpose() + DMatrix::identity(6, 6) * lambda;
            m.transpose() * g.lu().solve(&b).unwrap()
        };
        let errs: Vec<f64> = [1e-4, 1e-6, 1e-8, 1e-10].iter().map(|&l| (ridge(l) - &sol.alpha).norm()).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]));
        assert!(errs[3] < 1e-8, "{errs:?}");
    }

    #[test]
    fn min_norm_rejects_non_finite() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = f64::INFINITY;
        assert!(matches!(min_norm_solve(&m, &DVector::zeros(2), RankTol::Auto), Err(Error::NonFinite(_))));
        assert!(matches!(
            min_norm_solve(&DMatrix::identity(2, 2), &DVector::zeros(3), RankTol::Auto),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn pinv_norm_examples() {
        let two = DMatrix::identity(2, 2) * 2.0;
        assert_eq!(pinv_norm(&two, 2, RankTol::Auto).unwrap(), 0.5);
        let deficient = DMatrix::from_row_slice(2, 2, &[1., 0., 0., 0.]);
        assert_eq!(pinv_norm(&deficient, 2, RankTol::Auto).unwrap(), f64::INFINITY);
        assert_eq!(pinv_norm(&two, 3, RankTol::Auto), Err(Error::Index { index: 3, bound: 2 }));
        assert!(pinv_norm(&two, 0, RankTol::Auto).is_err());
    }

    #[test]
    fn pinv_norm_matches_full_svd() {
        let m = gaussian_matrix(4, 100, 9);
        // oracle: smallest eigenvalue of the 4x4 Gram matrix
        let gram = &m * m.transpose();
        let lam_min = gram.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        let expected = 1.0 / lam_min.sqrt();
        let got = pinv_norm(&m, 4, RankTol::Auto).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn pseudoinverse_penrose_conditions() {
        let m = gaussian_matrix(5, 3, 1) * gaussian_matrix(3, 8, 2);
        let p = PseudoInverse::new(&m, RankTol::Auto).unwrap();
        assert_eq!(p.rank(), 3);
        let mp = p.matrix();
        assert!((&m * &mp * &m - &m).abs().max() < 1e-10);
        assert!((&mp * &m * &mp - &mp).abs().max() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hankel_structure(z in prop::collection::vec(-1e3f64..1e3, 1..40), frac in 0.0f64..1.0) {
            let depth = 1 + ((z.len() - 1) as f64 * frac) as usize;
            let h = build_hankel(&sig(&z), depth).unwrap();
            prop_assert!(h.is_skew_constant());
            prop_assert_eq!(h.width(), z.len() - depth + 1);
            prop_assert_eq!(h.signal(), z);
        }

        #[test]
        fn min_norm_beats_null_space_perturbations(seed in 0u64..10_000, scale in 0.01f64..10.0) {
            let m = gaussian_matrix(4, 7, seed);
            let b = DVector::from_vec(standard_normal_vec(&mut stream(seed ^ 1), 4));
            let sol = min_norm_solve(&m, &b, RankTol::Auto).unwrap();
            // null-space direction from the normal equations of the row space
            let v = DVector::from_vec(standard_normal_vec(&mut stream(seed ^ 2), 7)) * scale;
            let g = &m * m.transpose();
            let null = &v - m.transpose() * g.lu().solve(&(&m * &v)).unwrap();
            let other = &sol.alpha + null;
            prop_assert!(((&m * &other - &b).norm() - sol.residual_norm).abs() < 1e-8);
            prop_assert!(sol.alpha.norm() <= other.norm() + 1e-12);
        }

        #[test]
        fn pinv_norm_scaling_and_transpose(seed in 0u64..10_000, c in 0.1f64..10.0, k in 1usize..=3) {
            let m = gaussian_matrix(3, 3, seed);
            let base = pinv_norm(&m, k, RankTol::Auto).unwrap();
            let scaled = pinv_norm(&(&m * c), k, RankTol::Auto).unwrap();
            let transposed = pinv_norm(&m.transpose(), k, RankTol::Auto).unwrap();
            prop_assert!((scaled - base / c).abs() <= 1e-9 * base.max(1.0));
            prop_assert!((transposed - base).abs() <= 1e-9 * base.max(1.0));
        }
    }
}
