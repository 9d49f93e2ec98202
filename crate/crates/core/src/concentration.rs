//! Singular-value concentration of random Hankel matrices.
//!
//! For `H = H_L(z)` with iid standard normal `z`, write `z_i` for row `i` and
//! `G = H H^T = [<z_i, z_j>]`. When `G` is strictly diagonally dominant every
//! eigenvalue of `G^-1` (that is, every `1 / sigma^2`) lies in the union of the
//! intervals `[c_i - rho_i, c_i + rho_i]` with
//!
//! ```text
//! c_i   = 1 / <z_i, z_i>
//! r_i   = sum_{j != i} |<z_i, z_j>| / <z_i, z_i>
//! rho_i = r_i / (<z_i, z_i> (1 - r_i))
//! ```
//!
//! Under the events `|<z_i, z_i> - N^| <= beta N^` and `|<z_i, z_j>| <= theta`
//! with `theta = gamma (1 - beta) N^ / (L - 1)`, this yields
//! `1 / sigma^2 <= epsilon_N = (1 + gamma / (1 - gamma)) / (N^ (1 - beta))`,
//! where `N^ = N - L + 1`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hankel::{build_model, hankel_from_slice, stack_rows, HankelMatrix, Signal};
use crate::linalg::{quantile_sorted, sym_eigenvalues_desc};
use crate::lti::{gaussian_signal, simulate, LtiSystem, NoiseSpec};
use crate::par;
use crate::rng::{derive_seed, standard_normal_vec, stream};

/// `beta = gamma = 1 / (L + 1)`.
pub fn default_beta_gamma(depth: usize) -> f64 {
    1.0 / (depth as f64 + 1.0)
}

/// `epsilon_N` for `N^` columns.
pub fn epsilon_bound(n_hat: usize, beta: f64, gamma: f64) -> f64 {
    (1.0 / (n_hat as f64 * (1.0 - beta))) * (1.0 + gamma / (1.0 - gamma))
}

/// `(L + 1) / (L sqrt(N^))`, the approximation of `sqrt(epsilon_N)` at
/// `beta = gamma = 1 / (L + 1)`.
pub fn depth_scaling_bound(depth: usize, n_hat: usize) -> f64 {
    let l = depth as f64;
    (l + 1.0) / (l * (n_hat as f64).sqrt())
}

/// Off-diagonal threshold `theta`; undefined for `L = 1`.
pub fn off_diagonal_threshold(depth: usize, n_hat: usize, beta: f64, gamma: f64) -> Option<f64> {
    (depth >= 2).then(|| gamma * (1.0 - beta) * n_hat as f64 / (depth as f64 - 1.0))
}

fn check_constants(beta: f64, gamma: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0 && gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Parameter(format!("beta and gamma must lie in (0, 1), got {beta} and {gamma}")));
    }
    Ok(())
}

/// Gram matrix of the rows of `H_L(z)` computed directly from the sequence.
pub fn hankel_gram(z: &[f64], depth: usize) -> Result<DMatrix<f64>> {
    if depth == 0 || depth > z.len() {
        return Err(Error::Depth { depth, len: z.len() });
    }
    let n_hat = z.len() - depth + 1;
    let mut g = DMatrix::zeros(depth, depth);
    for i in 0..depth {
        for j in i..depth {
            let s: f64 = z[i..i + n_hat].iter().zip(&z[j..j + n_hat]).map(|(a, b)| a * b).sum();
            g[(i, j)] = s;
            g[(j, i)] = s;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GershgorinCertificate {
    pub depth: usize,
    pub data_len: usize,
    pub n_hat: usize,
    pub beta: f64,
    pub gamma: f64,
    /// `None` when `L = 1` (no off-diagonal terms).
    pub theta: Option<f64>,
    pub centers: Vec<f64>,
    /// `+inf` for rows that are not diagonally dominant.
    pub radii: Vec<f64>,
    pub row_ratios: Vec<f64>,
    pub diagonal_event: bool,
    pub off_diagonal_event: bool,
    pub dominance: bool,
    pub epsilon_n: f64,
}

impl GershgorinCertificate {
    /// Whether `value` lies in the union of the real intervals
    /// `[c_i - rho_i, c_i + rho_i]`, with a relative slack of `rel_tol`.
    pub fn contains(&self, value: f64, rel_tol: f64) -> bool {
        self.centers.iter().zip(&self.radii).any(|(&c, &r)| (value - c).abs() <= r + rel_tol * c.abs())
    }
}

fn certificate_from_gram(gram: &DMatrix<f64>, data_len: usize, beta: f64, gamma: f64) -> GershgorinCertificate {
    let depth = gram.nrows();
    let n_hat = data_len + 1 - depth;
    let nh = n_hat as f64;
    let theta = off_diagonal_threshold(depth, n_hat, beta, gamma);
    let mut centers = Vec::with_capacity(depth);
    let mut radii = Vec::with_capacity(depth);
    let mut row_ratios = Vec::with_capacity(depth);
    let mut diagonal_event = true;
    let mut off_diagonal_event = true;
    for i in 0..depth {
        let d = gram[(i, i)];
        let off: f64 = (0..depth).filter(|&j| j != i).map(|j| gram[(i, j)].abs()).sum();
        let r = off / d;
        centers.push(1.0 / d);
        row_ratios.push(r);
        radii.push(if r < 1.0 { r / (d * (1.0 - r)) } else { f64::INFINITY });
        diagonal_event &= (d - nh).abs() <= beta * nh;
        if let Some(theta) = theta {
            off_diagonal_event &= (0..depth).filter(|&j| j != i).all(|j| gram[(i, j)].abs() <= theta);
        }
    }
    GershgorinCertificate {
        depth,
        data_len,
        n_hat,
        beta,
        gamma,
        theta,
        centers,
        radii,
        row_ratios,
        diagonal_event,
        off_diagonal_event,
        dominance: diagonal_event && off_diagonal_event,
        epsilon_n: epsilon_bound(n_hat, beta, gamma),
    }
}

pub fn gershgorin_certificate(h: &HankelMatrix, beta: f64, gamma: f64) -> Result<GershgorinCertificate> {
    check_constants(beta, gamma)?;
    let gram = h.matrix() * h.matrix().transpose();
    if (0..gram.nrows()).any(|i| gram[(i, i)] <= 0.0) {
        return Err(Error::Singular("Gershgorin certificate (zero row)"));
    }
    let data_len = h.width() + h.depth() - 1;
    Ok(certificate_from_gram(&gram, data_len, beta, gamma))
}

/// Eigenvalues of `(H H^T)^-1`, descending.
pub fn inverse_gram_spectrum(h: &HankelMatrix) -> Vec<f64> {
    let gram = h.matrix() * h.matrix().transpose();
    let mut inv: Vec<f64> = sym_eigenvalues_desc(&gram).into_iter().map(|l| 1.0 / l).collect();
    inv.sort_by(|a, b| b.total_cmp(a));
    inv
}

/// One random Hankel instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationSample {
    pub seed: u64,
    pub sigma_min: f64,
    pub inv_sigma_sq: f64,
    pub bound_holds: bool,
    pub diagonal_event: bool,
    pub off_diagonal_event: bool,
}

/// Draws `z` of length `N`, forms `H_L(z)` and evaluates the events and bound.
pub fn sample_concentration(depth: usize, data_len: usize, beta: f64, gamma: f64, seed: u64) -> Result<ConcentrationSample> {
    check_constants(beta, gamma)?;
    let z = standard_normal_vec(&mut stream(seed), data_len);
    let gram = hankel_gram(&z, depth)?;
    let lam_min = sym_eigenvalues_desc(&gram).last().copied().unwrap_or(0.0).max(0.0);
    let cert = certificate_from_gram(&gram, data_len, beta, gamma);
    let inv_sigma_sq = 1.0 / lam_min;
    Ok(ConcentrationSample {
        seed,
        sigma_min: lam_min.sqrt(),
        inv_sigma_sq,
        bound_holds: inv_sigma_sq <= cert.epsilon_n,
        diagonal_event: cert.diagonal_event,
        off_diagonal_event: cert.off_diagonal_event,
    })
}

fn trial_seed(master: u64, data_len: usize, trial: usize) -> u64 {
    derive_seed(derive_seed(master, data_len as u64), trial as u64)
}

/// Empirical probabilities of the concentration events.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFrequencies {
    pub depth: usize,
    pub data_len: usize,
    pub beta: f64,
    pub gamma: f64,
    pub trials: usize,
    pub diagonal: f64,
    pub off_diagonal: f64,
    pub joint: f64,
    /// Fraction of trials with `1 / sigma_min^2 <= epsilon_N`.
    pub bound: f64,
}

pub fn hw_event_frequencies(depth: usize, data_len: usize, beta: f64, gamma: f64, trials: usize, seed: u64) -> Result<EventFrequencies> {
    check_constants(beta, gamma)?;
    if trials == 0 {
        return Err(Error::Parameter("trial count must be >= 1".into()));
    }
    if depth < 2 {
        return Err(Error::Parameter("event frequencies need L >= 2".into()));
    }
    if data_len < depth {
        return Err(Error::Depth { depth, len: data_len });
    }
    let samples: Vec<ConcentrationSample> =
        par::map_indexed(trials, |k| sample_concentration(depth, data_len, beta, gamma, trial_seed(seed, data_len, k)))
            .into_iter()
            .collect::<Result<_>>()?;
    let frac = |f: &dyn Fn(&ConcentrationSample) -> bool| samples.iter().filter(|s| f(s)).count() as f64 / trials as f64;
    Ok(EventFrequencies {
        depth,
        data_len,
        beta,
        gamma,
        trials,
        diagonal: frac(&|s| s.diagonal_event),
        off_diagonal: frac(&|s| s.off_diagonal_event),
        joint: frac(&|s| s.diagonal_event && s.off_diagonal_event),
        bound: frac(&|s| s.bound_holds),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularValueRow {
    pub data_len: usize,
    pub n_hat: usize,
    pub median_inv_sigma: f64,
    pub q25_inv_sigma: f64,
    pub q75_inv_sigma: f64,
    pub epsilon_n: f64,
    pub sqrt_epsilon_n: f64,
    pub scale_bound: f64,
}

/// `1 / sigma_min` statistics of random Hankel matrices across data lengths,
/// next to `epsilon_N`, `sqrt(epsilon_N)` and `(L + 1) / (L sqrt(N^))` at
/// `beta = gamma = 1 / (L + 1)`.
pub fn singular_value_sweep(depth: usize, n_grid: &[usize], trials: usize, seed: u64) -> Result<Vec<SingularValueRow>> {
    if trials == 0 {
        return Err(Error::Parameter("trial count must be >= 1".into()));
    }
    let bg = default_beta_gamma(depth);
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        if n < depth {
            return Err(Error::Depth { depth, len: n });
        }
        let mut inv: Vec<f64> = par::map_indexed(trials, |k| sample_concentration(depth, n, bg, bg, trial_seed(seed, n, k)))
            .into_iter()
            .map(|s| s.map(|s| 1.0 / s.sigma_min))
            .collect::<Result<_>>()?;
        inv.sort_by(|a, b| a.total_cmp(b));
        let n_hat = n - depth + 1;
        let eps = epsilon_bound(n_hat, bg, bg);
        rows.push(SingularValueRow {
            data_len: n,
            n_hat,
            median_inv_sigma: quantile_sorted(&inv, 0.5),
            q25_inv_sigma: quantile_sorted(&inv, 0.25),
            q75_inv_sigma: quantile_sorted(&inv, 0.75),
            epsilon_n: eps,
            sqrt_epsilon_n: eps.sqrt(),
            scale_bound: depth_scaling_bound(depth, n_hat),
        });
    }
    Ok(rows)
}

/// The noisy Gram matrix split into its clean, noise, input-noise and
/// output-noise parts.
#[derive(Debug, Clone, PartialEq)]
pub struct GramDecomposition {
    pub full: DMatrix<f64>,
    pub clean: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub input_noise_cross: DMatrix<f64>,
    pub output_noise_cross: DMatrix<f64>,
    /// `max |clean + noise + crosses - full| / max(1, max |full|)`.
    pub identity_error: f64,
    /// `lambda_{L+n}` of the noisy and clean Gram matrices.
    pub lambda_full: f64,
    pub lambda_clean: f64,
    pub min_eig_noise: f64,
    pub min_eig_input_cross: f64,
    pub min_eig_output_cross: f64,
}

fn embed_lower_right(block: &DMatrix<f64>, depth: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * depth, 2 * depth);
    m.view_mut((depth, depth), (depth, depth)).copy_from(block);
    m
}

/// Splits `H H^T` for `H = [Hu; Hy_clean + Hw]`; `order` is the system order
/// `n` used to pick `lambda_{L+n}`.
pub fn gram_decomposition(hu: &HankelMatrix, hy_clean: &HankelMatrix, hw: &HankelMatrix, order: usize) -> Result<GramDecomposition> {
    let shape = hu.matrix().shape();
    if hy_clean.matrix().shape() != shape || hw.matrix().shape() != shape {
        return Err(Error::Dimension(format!(
            "blocks have shapes {:?}, {:?} and {:?}",
            shape,
            hy_clean.matrix().shape(),
            hw.matrix().shape()
        )));
    }
    let depth = hu.depth();
    if depth + order > 2 * depth {
        return Err(Error::Parameter(format!("L + n = {} exceeds the 2L = {} rows", depth + order, 2 * depth)));
    }
    let (u, yc, w) = (hu.matrix(), hy_clean.matrix(), hw.matrix());
    let h = stack_rows(u, &(yc + w));
    let h_clean = stack_rows(u, yc);
    let full = &h * h.transpose();
    let clean = &h_clean * h_clean.transpose();
    let noise = embed_lower_right(&(w * w.transpose()), depth);
    let mut input_noise_cross = DMatrix::zeros(2 * depth, 2 * depth);
    let uw = u * w.transpose();
    input_noise_cross.view_mut((0, depth), (depth, depth)).copy_from(&uw);
    input_noise_cross.view_mut((depth, 0), (depth, depth)).copy_from(&uw.transpose());
    let yw = yc * w.transpose();
    let output_noise_cross = embed_lower_right(&(&yw + yw.transpose()), depth);

    let sum = &clean + &noise + &input_noise_cross + &output_noise_cross;
    let scale = full.abs().max().max(1.0);
    let identity_error = (&sum - &full).abs().max() / scale;
    let pick = |m: &DMatrix<f64>| sym_eigenvalues_desc(m)[depth + order - 1];
    let min_eig = |m: &DMatrix<f64>| *sym_eigenvalues_desc(m).last().expect("non-empty");
    Ok(GramDecomposition {
        lambda_full: pick(&full),
        lambda_clean: pick(&clean),
        min_eig_noise: min_eig(&noise),
        min_eig_input_cross: min_eig(&input_noise_cross),
        min_eig_output_cross: min_eig(&output_noise_cross),
        full,
        clean,
        noise,
        input_noise_cross,
        output_noise_cross,
        identity_error,
    })
}

/// Gram decomposition of one simulated dataset: Gaussian input of `N`
/// samples into `plant`, output noise of the given variance.
pub fn plant_gram_decomposition(plant: &LtiSystem, depth: usize, data_len: usize, noise_variance: f64, seed: u64) -> Result<GramDecomposition> {
    let u = gaussian_signal(data_len + 1, derive_seed(seed, 0))?;
    let noise = NoiseSpec::new(noise_variance, derive_seed(seed, 1))?;
    let (y_clean, y_noisy) = simulate(plant, &u, None, noise)?;
    let w: Vec<f64> = y_noisy.values().iter().zip(y_clean.values()).map(|(a, b)| a - b).collect();
    let model = build_model(&u, &y_clean, depth)?;
    let hw = hankel_from_slice(&w[..data_len], depth)?;
    gram_decomposition(model.hu(), model.hy(), &hw, plant.order())
}

/// Explicit selection matrix `U_i` of shape `(N + 1) x N^` with `i` zero rows on
/// top, an `N^ x N^` identity, and `L - i` zero rows below.
pub fn selection_matrix(depth: usize, data_len: usize, i: usize) -> Result<DMatrix<f64>> {
    if depth == 0 || data_len < depth {
        return Err(Error::Depth { depth, len: data_len });
    }
    if i >= depth {
        return Err(Error::Index { index: i, bound: depth - 1 });
    }
    let n_hat = data_len - depth + 1;
    Ok(DMatrix::from_fn(data_len + 1, n_hat, |r, c| if r == i + c { 1.0 } else { 0.0 }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionCheck {
    /// `<z_i, z_j>` from the Hankel rows.
    pub row_inner: f64,
    /// `z U_i U_j^T z^T`.
    pub quadratic_form: f64,
    pub trace: f64,
    pub expected_trace: f64,
}

impl SelectionCheck {
    pub fn consistent(&self, tol: f64) -> bool {
        (self.row_inner - self.quadratic_form).abs() <= tol * (1.0 + self.row_inner.abs()) && self.trace == self.expected_trace
    }
}

/// Links the Hankel-row and quadratic-form views of `<z_i, z_j>` for a
/// sequence `z` of `N + 1` samples.
pub fn selection_matrix_check(depth: usize, data_len: usize, i: usize, j: usize, z: &[f64]) -> Result<SelectionCheck> {
    if z.len() != data_len + 1 {
        return Err(Error::Dimension(format!("z must have N + 1 = {} entries, got {}", data_len + 1, z.len())));
    }
    let ui = selection_matrix(depth, data_len, i)?;
    let uj = selection_matrix(depth, data_len, j)?;
    let m = &ui * uj.transpose();
    let zr = DMatrix::from_row_slice(1, z.len(), z);
    let quadratic_form = (&zr * &m * zr.transpose())[(0, 0)];
    let h = hankel_from_slice(&z[..data_len], depth)?;
    let row_inner = h.matrix().row(i).dot(&h.matrix().row(j));
    let n_hat = data_len - depth + 1;
    Ok(SelectionCheck {
        row_inner,
        quadratic_form,
        trace: m.trace(),
        expected_trace: if i == j { n_hat as f64 } else { 0.0 },
    })
}

/// Builds `H_L` of a fresh standard normal sequence of length `N`.
pub fn random_hankel(depth: usize, data_len: usize, seed: u64) -> Result<HankelMatrix> {
    let z = Signal::new(standard_normal_vec(&mut stream(seed), data_len))?;
    crate::hankel::build_hankel(&z, depth)
}
