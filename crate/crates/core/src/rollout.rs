//! Data-driven rollouts of a Hankel model and the self-consistency protocol.
//!
//! Each step solves `[Hu; Hy] alpha = [u_window; y_window]` in the minimum-norm
//! sense, reads the next output from the last row of `Hy_shift * alpha`, and
//! slides both windows by one sample, appending the queued input.

use log::warn;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hankel::{build_model, is_persistently_exciting, HankelModel, PseudoInverse};
use crate::linalg::{mean_std, rmse, RankTol};
use crate::lti::{gaussian_signal, simulate, LtiSystem, NoiseSpec};
use crate::par;
use crate::preprocess::{apply_strategy, PreprocessStrategy};
use crate::rng::derive_seed;

/// Redraws of a non-exciting probing input before giving up.
pub const MAX_INPUT_REDRAWS: u64 = 100;

/// The trailing `L` inputs and outputs that pin down the current trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutState {
    u_window: Vec<f64>,
    y_window: Vec<f64>,
}

impl RolloutState {
    pub fn new(u_window: Vec<f64>, y_window: Vec<f64>) -> Result<Self> {
        if u_window.is_empty() || u_window.len() != y_window.len() {
            return Err(Error::Dimension(format!(
                "windows must be non-empty and equal length (got {} and {})",
                u_window.len(),
                y_window.len()
            )));
        }
        Ok(Self { u_window, y_window })
    }

    /// All-zero windows: the system at rest at the origin.
    pub fn origin(depth: usize) -> Self {
        Self { u_window: vec![0.0; depth], y_window: vec![0.0; depth] }
    }

    pub fn depth(&self) -> usize {
        self.u_window.len()
    }

    pub fn u_window(&self) -> &[f64] {
        &self.u_window
    }

    pub fn y_window(&self) -> &[f64] {
        &self.y_window
    }

    /// `[u_window; y_window]`.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(2 * self.depth(), self.u_window.iter().chain(&self.y_window).copied())
    }

    /// Drops the oldest sample pair and appends `(u, y)`.
    pub fn push(&mut self, u: f64, y: f64) {
        self.u_window.remove(0);
        self.u_window.push(u);
        self.y_window.remove(0);
        self.y_window.push(y);
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutResult {
    pub y_pred: Vec<f64>,
    pub alpha_norms: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl RolloutResult {
    pub fn horizon(&self) -> usize {
        self.y_pred.len()
    }
}

/// A Hankel model prepared for repeated one-step predictions.
///
/// The stacked matrix is fixed for the whole rollout, so its truncated SVD is
/// computed once; every step then evaluates the exact minimum-norm solution
/// `alpha = V S^-1 U^T b` for the current window.
#[derive(Debug, Clone)]
pub struct OneStepPredictor {
    depth: usize,
    pinv: PseudoInverse,
    /// Last row of `Hy_shift` expressed in the retained right singular basis.
    next_output_row: DVector<f64>,
}

impl OneStepPredictor {
    pub fn new(model: &HankelModel, rank_tol: RankTol) -> Result<Self> {
        let pinv = PseudoInverse::new(&model.stacked(), rank_tol)?;
        let last = model.hy_shift().matrix().row(model.depth() - 1).transpose();
        let next_output_row = pinv.v().tr_mul(&last);
        Ok(Self { depth: model.depth(), pinv, next_output_row })
    }

    pub fn rank(&self) -> usize {
        self.pinv.rank()
    }

    pub fn pseudo_inverse(&self) -> &PseudoInverse {
        &self.pinv
    }

    /// Next output, `||alpha||`, and the least-squares residual of the solve.
    pub fn predict(&self, state: &RolloutState) -> Result<(f64, f64, f64)> {
        if state.depth() != self.depth {
            return Err(Error::Dimension(format!(
                "window length {} does not match model depth {}",
                state.depth(),
                self.depth
            )));
        }
        let b = state.stacked();
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rollout window"));
        }
        let coords = self.pinv.coordinates(&b);
        Ok((self.next_output_row.dot(&coords), coords.norm(), self.pinv.residual_norm(&b)))
    }
}

/// Rolls the model forward over `u_sim` starting from `init`.
///
/// Step `k` predicts the output paired with `u_sim[k]`, which depends only on
/// inputs already in the window, then queues `u_sim[k]`.
pub fn rollout(model: &HankelModel, init: &RolloutState, u_sim: &[f64], rank_tol: RankTol) -> Result<RolloutResult> {
    if init.depth() != model.depth() {
        return Err(Error::Dimension(format!(
            "initial window length {} does not match model depth {}",
            init.depth(),
            model.depth()
        )));
    }
    if u_sim.is_empty() {
        return Ok(RolloutResult::default());
    }
    let predictor = OneStepPredictor::new(model, rank_tol)?;
    let mut state = init.clone();
    let mut out = RolloutResult {
        y_pred: Vec::with_capacity(u_sim.len()),
        alpha_norms: Vec::with_capacity(u_sim.len()),
        residuals: Vec::with_capacity(u_sim.len()),
    };
    for &u in u_sim {
        let (y, alpha_norm, residual) = predictor.predict(&state)?;
        out.y_pred.push(y);
        out.alpha_norms.push(alpha_norm);
        out.residuals.push(residual);
        state.push(u, y);
    }
    Ok(out)
}

/// Triangle-inequality split of a one-step prediction error into the part
/// explained by clean data and the part carried by the noise row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSplit {
    pub total: f64,
    pub clean_term: f64,
    pub noise_term: f64,
}

pub fn prediction_error_split(alpha: &[f64], clean_row: &[f64], noise_row: &[f64], target: f64) -> Result<ErrorSplit> {
    if alpha.len() != clean_row.len() || alpha.len() != noise_row.len() {
        return Err(Error::Dimension(format!(
            "alpha has {} entries, rows have {} and {}",
            alpha.len(),
            clean_row.len(),
            noise_row.len()
        )));
    }
    let dot = |row: &[f64]| row.iter().zip(alpha).map(|(r, a)| r * a).sum::<f64>();
    let clean = dot(clean_row);
    let noise = dot(noise_row);
    let split = ErrorSplit { total: (clean + noise - target).abs(), clean_term: (clean - target).abs(), noise_term: noise.abs() };
    debug_assert!(split.total <= split.clean_term + split.noise_term + 1e-12 * (1.0 + split.total));
    Ok(split)
}

/// Configuration of the self-consistency protocol for one `(L, N)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfConsistencyConfig {
    pub depth: usize,
    /// `N`; each dataset holds `N + 1` samples.
    pub data_len: usize,
    pub noise_variance: f64,
    pub strategy: PreprocessStrategy,
    pub rollouts: usize,
    pub seed: u64,
    /// Draw a fresh probing input for every rollout; otherwise only the output
    /// noise changes between rollouts.
    pub resample_input: bool,
    pub rank_tol: RankTol,
}

impl SelfConsistencyConfig {
    pub fn new(depth: usize, data_len: usize, noise_variance: f64, strategy: PreprocessStrategy) -> Self {
        Self {
            depth,
            data_len,
            noise_variance,
            strategy,
            rollouts: 10,
            seed: 0,
            resample_input: true,
            rank_tol: RankTol::Auto,
        }
    }
}

/// One dataset and its rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrial {
    pub trial: usize,
    pub input_seed: u64,
    pub noise_seed: u64,
    /// Probing input redraws needed to obtain a persistently exciting input.
    pub redraws: u64,
    pub u: Vec<f64>,
    pub y_clean: Vec<f64>,
    pub result: RolloutResult,
    pub rmse: f64,
}

const INPUT_STREAM: u64 = 0x494e_5055_5400_0000;
const NOISE_STREAM: u64 = 0x4e4f_4953_4500_0000;

/// Seed of the probing input for `trial` (after `attempt` redraws).
pub fn input_seed(master: u64, trial: usize, resample_input: bool, attempt: u64) -> u64 {
    let stream = if resample_input { trial as u64 } else { 0 };
    derive_seed(derive_seed(master ^ INPUT_STREAM, stream), attempt)
}

pub fn noise_seed(master: u64, trial: usize) -> u64 {
    derive_seed(master ^ NOISE_STREAM, trial as u64)
}

/// Runs a single rollout of the self-consistency protocol.
pub fn run_trial(plant: &LtiSystem, config: &SelfConsistencyConfig, trial: usize) -> Result<RolloutTrial> {
    let n = plant.order();
    let len = config.data_len + 1;
    if config.depth == 0 || config.data_len <= 2 * config.depth + n {
        return Err(Error::Parameter(format!(
            "N = {} must exceed 2L + n = {}",
            config.data_len,
            2 * config.depth + n
        )));
    }
    let order = config.depth + 1 + n;
    let mut attempt = 0;
    let (u, seed) = loop {
        let seed = input_seed(config.seed, trial, config.resample_input, attempt);
        let u = gaussian_signal(len, seed)?;
        let (exciting, rank) = is_persistently_exciting(&u, order, config.rank_tol)?;
        if exciting {
            break (u, seed);
        }
        warn!("probing input (seed {seed}) has rank {rank} < {order}; redrawing");
        attempt += 1;
        if attempt >= MAX_INPUT_REDRAWS {
            return Err(Error::NotExciting { order, rank });
        }
    };
    let noise = NoiseSpec::new(config.noise_variance, noise_seed(config.seed, trial))?;
    let (y_clean, y_noisy) = simulate(plant, &u, None, noise)?;
    let (u_model, y_model) = apply_strategy(&u, &y_noisy, &config.strategy, config.depth)?;
    let model = build_model(&u_model, &y_model, config.depth)?;
    let result = rollout(&model, &RolloutState::origin(config.depth), u.values(), config.rank_tol)?;
    let rmse = rmse(&result.y_pred, y_clean.values());
    Ok(RolloutTrial {
        trial,
        input_seed: seed,
        noise_seed: noise.seed,
        redraws: attempt,
        u: u.into_values(),
        y_clean: y_clean.into_values(),
        result,
        rmse,
    })
}

/// All rollouts of one configuration, ordered by trial index.
pub fn run_trials(plant: &LtiSystem, config: &SelfConsistencyConfig) -> Result<Vec<RolloutTrial>> {
    par::map_indexed(config.rollouts, |k| run_trial(plant, config, k)).into_iter().collect()
}

/// One row of a depth sweep: RMSE statistics over the rollouts of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSweepRow {
    pub depth: usize,
    pub data_len: usize,
    pub strategy: String,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub rollouts: usize,
    pub redraws: u64,
}

pub fn self_consistency_rmse(plant: &LtiSystem, config: &SelfConsistencyConfig) -> Result<DepthSweepRow> {
    if config.rollouts == 0 {
        return Err(Error::Parameter("rollout count must be >= 1".into()));
    }
    let trials = run_trials(plant, config)?;
    let rmses: Vec<f64> = trials.iter().map(|t| t.rmse).collect();
    let (mean_rmse, std_rmse) = mean_std(&rmses);
    Ok(DepthSweepRow {
        depth: config.depth,
        data_len: config.data_len,
        strategy: config.strategy.tag().to_string(),
        mean_rmse,
        std_rmse,
        rollouts: trials.len(),
        redraws: trials.iter().map(|t| t.redraws).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hankel::{min_norm_solve, Signal};
    use crate::lti::second_order_benchmark;
    use crate::rng::{standard_normal_vec, stream};

    fn noise_free_model(depth: usize, n_data: usize, seed: u64) -> (HankelModel, Signal) {
        let plant = second_order_benchmark();
        let u = gaussian_signal(n_data + 1, seed).unwrap();
        let (y, _) = simulate(&plant, &u, None, NoiseSpec::none()).unwrap();
        (build_model(&u, &y, depth).unwrap(), u)
    }

    #[test]
    fn state_window_slides() {
        let mut s = RolloutState::new(vec![1., 2., 3.], vec![4., 5., 6.]).unwrap();
        s.push(7., 8.);
        assert_eq!(s.u_window(), &[2., 3., 7.]);
        assert_eq!(s.y_window(), &[5., 6., 8.]);
        assert_eq!(s.stacked().as_slice(), &[2., 3., 7., 5., 6., 8.]);
        assert!(RolloutState::new(vec![1.], vec![]).is_err());
    }

    #[test]
    fn empty_horizon_and_depth_mismatch() {
        let (model, _) = noise_free_model(4, 60, 1);
        let r = rollout(&model, &RolloutState::origin(4), &[], RankTol::Auto).unwrap();
        assert_eq!(r.horizon(), 0);
        assert!(matches!(rollout(&model, &RolloutState::origin(3), &[1.0], RankTol::Auto), Err(Error::Dimension(_))));
    }

    #[test]
    fn predictor_matches_explicit_min_norm_solve() {
        let plant = second_order_benchmark();
        let u = gaussian_signal(121, 2).unwrap();
        let (_, y) = simulate(&plant, &u, None, NoiseSpec { variance: 0.1, seed: 3 }).unwrap();
        let model = build_model(&u, &y, 6).unwrap();
        let predictor = OneStepPredictor::new(&model, RankTol::Auto).unwrap();
        let window = RolloutState::new(standard_normal_vec(&mut stream(4), 6), standard_normal_vec(&mut stream(5), 6)).unwrap();
        let (y_next, alpha_norm, residual) = predictor.predict(&window).unwrap();
        let sol = min_norm_solve(&model.stacked(), &window.stacked(), RankTol::Auto).unwrap();
        let full_next = model.hy_shift().matrix() * &sol.alpha;
        assert!((y_next - full_next[5]).abs() < 1e-10);
        assert!((alpha_norm - sol.alpha.norm()).abs() < 1e-10);
        assert!((residual - sol.residual_norm).abs() < 1e-10);
        // the leading entries of H' alpha replicate the known window
        for i in 0..5 {
            assert!((full_next[i] - window.y_window()[i + 1]).abs() < 1e-8);
        }
    }

    #[test]
    fn noise_free_rollout_reproduces_plant() {
        let (model, u) = noise_free_model(5, 200, 7);
        let plant = second_order_benchmark();
        let (y, _) = simulate(&plant, &u, None, NoiseSpec::none()).unwrap();
        let r = rollout(&model, &RolloutState::origin(5), u.values(), RankTol::Auto).unwrap();
        let err = r.y_pred.iter().zip(y.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err}");
        assert!(r.residuals.iter().all(|&v| v < 1e-8));
    }

    #[test]
    fn rollout_from_mid_trajectory_window() {
        let plant = second_order_benchmark();
        let (model, _) = noise_free_model(6, 150, 8);
        let u = gaussian_signal(100, 77).unwrap();
        let (y, _) = simulate(&plant, &u, Some(&[0.3, -0.2]), NoiseSpec::none()).unwrap();
        let init = RolloutState::new(u.values()[..6].to_vec(), y.values()[..6].to_vec()).unwrap();
        let r = rollout(&model, &init, &u.values()[6..], RankTol::Auto).unwrap();
        let err = r.y_pred.iter().zip(&y.values()[6..]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err}");
    }

    #[test]
    fn zero_input_stays_at_origin() {
        let (model, _) = noise_free_model(4, 80, 9);
        let r = rollout(&model, &RolloutState::origin(4), &[0.0; 40], RankTol::Auto).unwrap();
        assert!(r.y_pred.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn error_split_examples() {
        let s = prediction_error_split(&[1., 2.], &[0.5, 0.5], &[0., 0.], 2.0).unwrap();
        assert_eq!(s.noise_term, 0.0);
        assert_eq!(s.total, s.clean_term);
        let s = prediction_error_split(&[0., 0.], &[3., 1.], &[1., 1.], -4.0).unwrap();
        assert_eq!(s.total, 4.0);
        for seed in 0..100 {
            let v = standard_normal_vec(&mut stream(seed), 31);
            let s = prediction_error_split(&v[..10], &v[10..20], &v[20..30], v[30]).unwrap();
            assert!(s.total <= s.clean_term + s.noise_term + 1e-14);
        }
        assert!(prediction_error_split(&[1.], &[1., 2.], &[1.], 0.).is_err());
    }

    #[test]
    fn noiseless_protocol_is_exact() {
        let plant = second_order_benchmark();
        for depth in [2, 5, 10] {
            let mut cfg = SelfConsistencyConfig::new(depth, 120, 0.0, PreprocessStrategy::Noisy);
            cfg.rollouts = 3;
            let row = self_consistency_rmse(&plant, &cfg).unwrap();
            assert!(row.mean_rmse < 1e-6, "L={depth}: {}", row.mean_rmse);
            assert_eq!(row.rollouts, 3);
        }
    }

    #[test]
    fn protocol_is_deterministic() {
        let plant = second_order_benchmark();
        let mut cfg = SelfConsistencyConfig::new(5, 100, 0.1, PreprocessStrategy::Noisy);
        cfg.rollouts = 4;
        cfg.seed = 21;
        assert_eq!(self_consistency_rmse(&plant, &cfg).unwrap(), self_consistency_rmse(&plant, &cfg).unwrap());
    }

    #[test]
    fn fixed_input_shares_probing_signal() {
        let plant = second_order_benchmark();
        let mut cfg = SelfConsistencyConfig::new(3, 60, 0.1, PreprocessStrategy::Noisy);
        cfg.rollouts = 3;
        cfg.resample_input = false;
        let trials = run_trials(&plant, &cfg).unwrap();
        assert!(trials.windows(2).all(|w| w[0].u == w[1].u && w[0].noise_seed != w[1].noise_seed));
        cfg.resample_input = true;
        let trials = run_trials(&plant, &cfg).unwrap();
        assert_ne!(trials[0].u, trials[1].u);
    }

    #[test]
    fn protocol_rejects_short_data() {
        let plant = second_order_benchmark();
        let cfg = SelfConsistencyConfig::new(10, 20, 0.1, PreprocessStrategy::Noisy);
        assert!(matches!(self_consistency_rmse(&plant, &cfg), Err(Error::Parameter(_))));
    }
}
