//! LQR over the trajectory coordinates of a Hankel model.
//!
//! With `M = [Hu; Hy]`, appending a new input to the current window maps the
//! coefficient vector `alpha` to `alpha' = M^+ (S alpha + e u)` where
//!
//! ```text
//!     [ rows 1..L-1 of Hu ]        [ 0 ]
//! S = [       0           ],   e = [ 1 ]   (row L)
//!     [     Hy_shift      ]        [ 0 ]
//! ```
//!
//! and the output is `y = c^T alpha` with `c` the last row of `Hy`. Because
//! `A_alpha = M^+ S` and `B_alpha = M^+ e` both map into the row space of `M`,
//! every reachable `alpha` lies in the span of the retained right singular
//! vectors `V`. The servo design therefore runs on the exact restriction
//! `(V^T A_alpha V, V^T B_alpha, V^T c)`, whose dimension is `rank(M) <= 2L`
//! instead of `N - L + 1`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hankel::{build_model, HankelModel, PseudoInverse, Signal};
use crate::linalg::{spectral_radius, RankTol};
use crate::lti::{gaussian_signal, simulate, LtiSystem, NoiseSpec};
use crate::par;
use crate::rng::derive_seed;

/// Closed-loop outputs beyond this magnitude mark the loop unstable.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct TrajSpaceModel {
    depth: usize,
    a_alpha: DMatrix<f64>,
    b_alpha: DVector<f64>,
    c_alpha: DVector<f64>,
    stacked: DMatrix<f64>,
    shift: DMatrix<f64>,
    pinv: PseudoInverse,
}

impl TrajSpaceModel {
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Dimension of `alpha`, `N - L + 1`.
    pub fn width(&self) -> usize {
        self.stacked.ncols()
    }

    pub fn rank(&self) -> usize {
        self.pinv.rank()
    }

    pub fn a_alpha(&self) -> &DMatrix<f64> {
        &self.a_alpha
    }

    pub fn b_alpha(&self) -> &DVector<f64> {
        &self.b_alpha
    }

    /// Output row (last row of `Hy`) as a column vector.
    pub fn c_alpha(&self) -> &DVector<f64> {
        &self.c_alpha
    }

    pub fn stacked(&self) -> &DMatrix<f64> {
        &self.stacked
    }

    /// The shift-stacked right-hand matrix `S`.
    pub fn shift(&self) -> &DMatrix<f64> {
        &self.shift
    }

    pub fn pseudo_inverse(&self) -> &PseudoInverse {
        &self.pinv
    }

    /// Indicator `e` of the new-input row.
    pub fn input_indicator(&self) -> DVector<f64> {
        let mut e = DVector::zeros(2 * self.depth);
        e[self.depth - 1] = 1.0;
        e
    }

    /// Dynamics restricted to the row space of `M`, in the coordinates
    /// `alpha = V coords`.
    pub fn reduced(&self) -> ReducedModel {
        let v = self.pinv.v();
        let inv_s = |m: DMatrix<f64>| {
            let mut m = m;
            for (k, s) in self.pinv.retained_sigma().iter().enumerate() {
                m.row_mut(k).scale_mut(1.0 / s);
            }
            m
        };
        let ut = self.pinv.u().transpose();
        let a = inv_s(&ut * &self.shift * v);
        let b = inv_s(&ut * DMatrix::from_column_slice(2 * self.depth, 1, self.input_indicator().as_slice()));
        ReducedModel { a, b: b.column(0).into_owned(), c: v.tr_mul(&self.c_alpha) }
    }

    /// Coordinates of the minimum-norm `alpha` for a stacked window.
    pub fn coordinates(&self, window: &DVector<f64>) -> DVector<f64> {
        self.pinv.coordinates(window)
    }
}

/// `coords+ = a coords + b u`, `y = c^T coords`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

/// Builds the trajectory-space dynamics; `order` is the plant order `n`, and
/// the stacked matrix must have numeric rank at least `L + n`.
pub fn build_traj_model(model: &HankelModel, rank_tol: RankTol, order: usize) -> Result<TrajSpaceModel> {
    let depth = model.depth();
    let stacked = model.stacked();
    let pinv = PseudoInverse::new(&stacked, rank_tol)?;
    let required = depth + order;
    if pinv.rank() < required {
        return Err(Error::Expressivity { rank: pinv.rank(), required });
    }
    let width = model.width();
    let hu_shift = model.hu_shift().matrix();
    let hy_shift = model.hy_shift().matrix();
    let shift = DMatrix::from_fn(2 * depth, width, |i, j| {
        if i + 1 < depth {
            hu_shift[(i, j)]
        } else if i + 1 == depth {
            0.0
        } else {
            hy_shift[(i - depth, j)]
        }
    });
    let pinv_m = pinv.matrix();
    let a_alpha = &pinv_m * &shift;
    let b_alpha = pinv_m.column(depth - 1).into_owned();
    let c_alpha = model.hy().matrix().row(depth - 1).transpose();
    Ok(TrajSpaceModel { depth, a_alpha, b_alpha, c_alpha, stacked, shift, pinv })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Default Riccati tolerance and iteration cap.
pub const DARE_TOL: f64 = 1e-10;
pub const DARE_MAX_ITER: usize = 100_000;

fn riccati_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let btp = b.transpose() * p;
    let s = r + &btp * b;
    let rhs = &btp * a;
    s.clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| s.lu().solve(&rhs))
        .ok_or(Error::Singular("R + B^T P B"))
}

/// Discrete algebraic Riccati equation by fixed-point iteration from `P = Q`.
///
/// Converged when `||P_{k+1} - P_k|| <= tol * max(1, max |P_ij|)`; the
/// Frobenius norm of the step is used, which bounds the spectral norm.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DareSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.nrows() != b.ncols() || r.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    let at = a.transpose();
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let k = riccati_gain(a, b, r, &p)?;
        let atp = &at * &p;
        let mut next = &atp * a - &atp * b * &k + q;
        next = (&next + next.transpose()) * 0.5;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::DareDivergence { iterations: it, residual });
        }
        residual = (&next - &p).norm();
        let scale = next.abs().max().max(1.0);
        p = next;
        if residual <= tol * scale {
            let k = riccati_gain(a, b, r, &p)?;
            return Ok(DareSolution { p, k, iterations: it, residual });
        }
    }
    Err(Error::DareDivergence { iterations: max_iter, residual })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoWeights {
    /// Weight on the increment `alpha_k - alpha_{k-1}`.
    pub q_delta: f64,
    /// Weight on the tracking error `r - y`.
    pub q_error: f64,
    /// Weight on the input increment.
    pub r: f64,
}

impl Default for ServoWeights {
    fn default() -> Self {
        Self { q_delta: 0.0, q_error: 1.0, r: 1.0 }
    }
}

/// Velocity-form servo design on `x = [alpha_k - alpha_{k-1}; r - y_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrDesign {
    pub weights: ServoWeights,
    pub a_aug: DMatrix<f64>,
    pub b_aug: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Gain row on the reduced augmented state.
    pub k: DMatrix<f64>,
    /// Gain on `alpha` increments in full coordinates (`V k_coords`).
    pub k_alpha: DVector<f64>,
    pub k_error: f64,
    pub dare_iterations: usize,
}

impl LqrDesign {
    pub fn closed_loop_spectral_radius(&self) -> f64 {
        spectral_radius(&(&self.a_aug - &self.b_aug * &self.k))
    }
}

/// Augmented velocity-form system `([A, 0; -cA, 1], [b; -cb])`.
pub fn augment(reduced: &ReducedModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = reduced.a.nrows();
    let ca = reduced.a.tr_mul(&reduced.c).transpose();
    let cb = reduced.c.dot(&reduced.b);
    let mut a_aug = DMatrix::zeros(r + 1, r + 1);
    a_aug.view_mut((0, 0), (r, r)).copy_from(&reduced.a);
    a_aug.view_mut((r, 0), (1, r)).copy_from(&(-ca));
    a_aug[(r, r)] = 1.0;
    let mut b_aug = DMatrix::zeros(r + 1, 1);
    b_aug.view_mut((0, 0), (r, 1)).copy_from(&reduced.b);
    b_aug[(r, 0)] = -cb;
    (a_aug, b_aug)
}

pub fn design_servo(traj: &TrajSpaceModel, weights: ServoWeights) -> Result<LqrDesign> {
    design_servo_with(traj, weights, DARE_TOL, DARE_MAX_ITER)
}

pub fn design_servo_with(traj: &TrajSpaceModel, weights: ServoWeights, tol: f64, max_iter: usize) -> Result<LqrDesign> {
    if !(weights.q_delta >= 0.0 && weights.q_error >= 0.0 && weights.r > 0.0) {
        return Err(Error::Parameter(format!("invalid servo weights {weights:?}")));
    }
    let reduced = traj.reduced();
    let dim = reduced.a.nrows();
    let (a_aug, b_aug) = augment(&reduced);
    let mut q = DMatrix::identity(dim + 1, dim + 1) * weights.q_delta;
    q[(dim, dim)] = weights.q_error;
    let r = DMatrix::from_element(1, 1, weights.r);
    let sol = solve_dare(&a_aug, &b_aug, &q, &r, tol, max_iter)?;
    let k_coords = DVector::from_iterator(dim, sol.k.view((0, 0), (1, dim)).iter().copied());
    let k_alpha = traj.pseudo_inverse().v() * k_coords;
    let k_error = sol.k[(0, dim)];
    Ok(LqrDesign {
        weights,
        a_aug,
        b_aug,
        q,
        r,
        p: sol.p,
        k: sol.k,
        k_alpha,
        k_error,
        dare_iterations: sol.iterations,
    })
}

/// How the controller obtains `alpha` at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaUpdate {
    /// Minimum-norm solve against the measured window.
    #[default]
    Resolve,
    /// Open-loop propagation through the trajectory dynamics.
    Propagate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    /// Noise-free plant output.
    pub y: Vec<f64>,
    /// Output as seen by the controller.
    pub y_measured: Vec<f64>,
    pub u: Vec<f64>,
    pub unstable: bool,
}

/// Plant plus data-driven servo, advanced one sample at a time.
///
/// At step `t` the window holds inputs and measured outputs through `t`; the
/// controller then chooses `u_{t+1} = u_t - k_alpha . dalpha_t - k_error e_t`.
struct ServoLoop<'a> {
    plant: &'a LtiSystem,
    traj: &'a TrajSpaceModel,
    reduced: ReducedModel,
    k_coords: DVector<f64>,
    k_error: f64,
    update: AlphaUpdate,
    x: DVector<f64>,
    u_t: f64,
    /// Previous `L - 1` inputs and measured outputs, oldest first.
    u_hist: Vec<f64>,
    y_hist: Vec<f64>,
    coords_prev: DVector<f64>,
}

impl<'a> ServoLoop<'a> {
    fn new(plant: &'a LtiSystem, traj: &'a TrajSpaceModel, design: &LqrDesign, update: AlphaUpdate) -> Result<Self> {
        if !plant.is_discrete() {
            return Err(Error::Parameter("closed-loop evaluation needs a discrete plant".into()));
        }
        let reduced = traj.reduced();
        let dim = reduced.a.nrows();
        if design.k.ncols() != dim + 1 {
            return Err(Error::Dimension(format!("gain has {} columns, model needs {}", design.k.ncols(), dim + 1)));
        }
        let k_coords = DVector::from_iterator(dim, design.k.view((0, 0), (1, dim)).iter().copied());
        let lag = traj.depth() - 1;
        Ok(Self {
            plant,
            traj,
            reduced,
            k_coords,
            k_error: design.k_error,
            update,
            x: DVector::zeros(plant.order()),
            u_t: 0.0,
            u_hist: vec![0.0; lag],
            y_hist: vec![0.0; lag],
            coords_prev: DVector::zeros(dim),
        })
    }

    fn state_dim(&self) -> usize {
        self.x.len() + 1 + self.u_hist.len() + self.y_hist.len() + self.coords_prev.len()
    }

    fn state(&self) -> DVector<f64> {
        let parts = self.x.iter().chain([&self.u_t]).chain(&self.u_hist).chain(&self.y_hist).chain(self.coords_prev.iter());
        DVector::from_iterator(self.state_dim(), parts.copied())
    }

    fn set_state(&mut self, z: &DVector<f64>) {
        let mut it = z.iter().copied();
        self.x.iter_mut().for_each(|v| *v = it.next().unwrap_or(0.0));
        self.u_t = it.next().unwrap_or(0.0);
        self.u_hist.iter_mut().for_each(|v| *v = it.next().unwrap_or(0.0));
        self.y_hist.iter_mut().for_each(|v| *v = it.next().unwrap_or(0.0));
        self.coords_prev.iter_mut().for_each(|v| *v = it.next().unwrap_or(0.0));
    }

    /// Measures, acts and advances; returns `(y_t, y_measured_t, u_t)`.
    fn step(&mut self, reference: f64, noise: f64) -> (f64, f64, f64) {
        let u_t = self.u_t;
        let y_t = self.plant.c().dot(&self.x) + self.plant.d() * u_t;
        let y_meas = y_t + noise;
        let (coords, y_model) = match self.update {
            AlphaUpdate::Resolve => {
                let window = self.u_hist.iter().chain([&u_t]).chain(&self.y_hist).chain([&y_meas]);
                let b = DVector::from_iterator(2 * self.traj.depth(), window.copied());
                let c = self.traj.coordinates(&b);
                let y_model = self.reduced.c.dot(&c);
                (c, y_model)
            }
            AlphaUpdate::Propagate => (&self.reduced.a * &self.coords_prev + &self.reduced.b * u_t, y_meas),
        };
        let error = reference - y_model;
        let du = -(self.k_coords.dot(&(&coords - &self.coords_prev)) + self.k_error * error);
        if !self.u_hist.is_empty() {
            self.u_hist.remove(0);
            self.u_hist.push(u_t);
            self.y_hist.remove(0);
            self.y_hist.push(y_meas);
        }
        self.x = self.plant.a() * &self.x + self.plant.b() * u_t;
        self.u_t = u_t + du;
        self.coords_prev = coords;
        (y_t, y_meas, u_t)
    }
}

/// Runs the data-driven servo on `plant` (from rest) against `reference`.
pub fn simulate_closed_loop(
    plant: &LtiSystem,
    traj: &TrajSpaceModel,
    design: &LqrDesign,
    reference: &[f64],
    noise: NoiseSpec,
    update: AlphaUpdate,
) -> Result<ClosedLoopRun> {
    if reference.is_empty() {
        return Err(Error::Parameter("reference must be non-empty".into()));
    }
    let mut lp = ServoLoop::new(plant, traj, design, update)?;
    let horizon = reference.len();
    let w = noise.samples(horizon);
    let mut run = ClosedLoopRun {
        y: Vec::with_capacity(horizon),
        y_measured: Vec::with_capacity(horizon),
        u: Vec::with_capacity(horizon),
        unstable: false,
    };
    for (r, w) in reference.iter().zip(&w) {
        let (y, y_meas, u) = lp.step(*r, *w);
        run.y.push(y);
        run.y_measured.push(y_meas);
        run.u.push(u);
        if !y.is_finite() || y.abs() > DIVERGENCE_LIMIT {
            run.unstable = true;
            break;
        }
    }
    Ok(run)
}

/// State matrix of the autonomous loop (plant, input, windows, previous
/// coordinates) with zero reference and noise.
pub fn closed_loop_matrix(plant: &LtiSystem, traj: &TrajSpaceModel, design: &LqrDesign, update: AlphaUpdate) -> Result<DMatrix<f64>> {
    let mut lp = ServoLoop::new(plant, traj, design, update)?;
    let n = lp.state_dim();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        lp.set_state(&e);
        lp.step(0.0, 0.0);
        m.set_column(j, &lp.state());
    }
    Ok(m)
}

/// Spectral radius of the true plant under the data-driven servo.
pub fn true_loop_spectral_radius(plant: &LtiSystem, traj: &TrajSpaceModel, design: &LqrDesign, update: AlphaUpdate) -> Result<f64> {
    Ok(spectral_radius(&closed_loop_matrix(plant, traj, design, update)?))
}

/// A noisy-data design and its noise-free-data baseline on the true plant.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopEval {
    pub noisy: ClosedLoopRun,
    pub baseline: ClosedLoopRun,
    /// `y_noisy_design - y_baseline` per step (shortest common horizon).
    pub deviation: Vec<f64>,
    /// RMS of `deviation`; `+inf` if either loop is unstable.
    pub rms_deviation: f64,
    pub unstable: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn closed_loop_eval(
    plant: &LtiSystem,
    traj: &TrajSpaceModel,
    design: &LqrDesign,
    baseline_traj: &TrajSpaceModel,
    baseline_design: &LqrDesign,
    reference: &Signal,
    noise: NoiseSpec,
    update: AlphaUpdate,
) -> Result<ClosedLoopEval> {
    let noisy = simulate_closed_loop(plant, traj, design, reference.values(), noise, update)?;
    let baseline = simulate_closed_loop(plant, baseline_traj, baseline_design, reference.values(), noise, update)?;
    let deviation: Vec<f64> = noisy.y.iter().zip(&baseline.y).map(|(a, b)| a - b).collect();
    let unstable = noisy.unstable || baseline.unstable;
    let rms_deviation = if unstable {
        f64::INFINITY
    } else {
        (deviation.iter().map(|d| d * d).sum::<f64>() / deviation.len() as f64).sqrt()
    };
    Ok(ClosedLoopEval { noisy, baseline, deviation, rms_deviation, unstable })
}

/// Configuration of the depth comparison for trajectory-space LQR.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrExperimentConfig {
    pub depths: Vec<usize>,
    /// Number of collected input/output samples.
    pub samples: usize,
    /// Output-noise variance of the collected data.
    pub noise_variance: f64,
    /// Measurement-noise variance inside the closed loop.
    pub loop_noise_variance: f64,
    pub weights: ServoWeights,
    pub reference_amplitude: f64,
    pub horizon: usize,
    pub seed: u64,
    pub update: AlphaUpdate,
    pub rank_tol: RankTol,
}

impl Default for LqrExperimentConfig {
    fn default() -> Self {
        Self {
            depths: vec![5, 10, 20],
            samples: 400,
            noise_variance: 1.0,
            loop_noise_variance: 0.0,
            weights: ServoWeights::default(),
            reference_amplitude: 1.0,
            horizon: 400,
            seed: 0,
            update: AlphaUpdate::Resolve,
            rank_tol: RankTol::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthOutcome {
    pub depth: usize,
    pub eval: ClosedLoopEval,
    /// Spectral radius of the designed loop on the noisy-data model.
    pub design_radius: f64,
    /// Spectral radius of the true plant under the noisy-data servo.
    pub true_radius: f64,
    /// Same for the noise-free-data servo.
    pub baseline_true_radius: f64,
}

impl DepthOutcome {
    pub fn stable(&self) -> bool {
        !self.eval.unstable && self.true_radius < 1.0 && self.baseline_true_radius < 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrExperiment {
    pub u: Vec<f64>,
    pub y_clean: Vec<f64>,
    pub y_noisy: Vec<f64>,
    pub reference: Vec<f64>,
    pub outcomes: Vec<DepthOutcome>,
}

impl LqrExperiment {
    /// Depth with the smallest RMS deviation from its baseline.
    pub fn best_depth(&self) -> Option<usize> {
        self.outcomes
            .iter()
            .min_by(|a, b| a.eval.rms_deviation.total_cmp(&b.eval.rms_deviation))
            .map(|o| o.depth)
    }
}

/// Collects one dataset from `plant`, then designs and evaluates a noisy-data
/// and a noise-free-data servo for every depth.
pub fn lqr_experiment(plant: &LtiSystem, config: &LqrExperimentConfig) -> Result<LqrExperiment> {
    if config.samples < 2 || config.horizon == 0 {
        return Err(Error::Parameter("need at least two samples and a non-empty horizon".into()));
    }
    let u = gaussian_signal(config.samples, derive_seed(config.seed, 0))?;
    let noise = NoiseSpec::new(config.noise_variance, derive_seed(config.seed, 1))?;
    let (y_clean, y_noisy) = simulate(plant, &u, None, noise)?;
    let reference = Signal::new(vec![config.reference_amplitude; config.horizon])?;
    let loop_noise = NoiseSpec::new(config.loop_noise_variance, derive_seed(config.seed, 2))?;
    let outcomes = par::map_slice(&config.depths, |&depth| -> Result<DepthOutcome> {
        let noisy_traj = build_traj_model(&build_model(&u, &y_noisy, depth)?, config.rank_tol, plant.order())?;
        let clean_traj = build_traj_model(&build_model(&u, &y_clean, depth)?, config.rank_tol, plant.order())?;
        let noisy_design = design_servo(&noisy_traj, config.weights)?;
        let clean_design = design_servo(&clean_traj, config.weights)?;
        let eval = closed_loop_eval(plant, &noisy_traj, &noisy_design, &clean_traj, &clean_design, &reference, loop_noise, config.update)?;
        Ok(DepthOutcome {
            depth,
            eval,
            design_radius: noisy_design.closed_loop_spectral_radius(),
            true_radius: true_loop_spectral_radius(plant, &noisy_traj, &noisy_design, config.update)?,
            baseline_true_radius: true_loop_spectral_radius(plant, &clean_traj, &clean_design, config.update)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(LqrExperiment {
        u: u.into_values(),
        y_clean: y_clean.into_values(),
        y_noisy: y_noisy.into_values(),
        reference: reference.into_values(),
        outcomes,
    })
}
