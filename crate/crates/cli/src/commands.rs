//! The five experiments. Each `*_tables` function is pure given the config;
//! [`run`] writes its tables and the config snapshot.

use std::path::PathBuf;

use deep_hankel::concentration::{default_beta_gamma, hw_event_frequencies, singular_value_sweep, EventFrequencies};
use deep_hankel::linalg::median;
use deep_hankel::rng::derive_seed;
use deep_hankel::rollout::{run_trials, self_consistency_rmse, SelfConsistencyConfig};
use deep_hankel::traj_lqr::{lqr_experiment, LqrExperiment, LqrExperimentConfig, ServoWeights};
use deep_hankel::RankTol;
use log::info;

use crate::config::{Experiment, ExperimentConfig};
use crate::table::{Cell, Table};
use crate::{CliError, CliResult};

/// Files written by one run, in write order.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub snapshot: PathBuf,
    pub tables: Vec<PathBuf>,
}

pub type NamedTable = (String, Table);

pub fn tables(config: &ExperimentConfig) -> CliResult<Vec<NamedTable>> {
    match config.experiment {
        Experiment::Rollout => rollout_tables(config),
        Experiment::DepthSweep => depth_sweep_tables(config),
        Experiment::Singvals => singvals_tables(config),
        Experiment::HwEvents => hw_events_tables(config),
        Experiment::Lqr => lqr_tables(config),
    }
}

pub fn run(config: &ExperimentConfig) -> CliResult<Artifacts> {
    config.validate()?;
    let tables = tables(config)?;
    std::fs::create_dir_all(&config.out)?;
    let snapshot = config.snapshot_path();
    std::fs::write(&snapshot, config.snapshot())?;
    let mut written = Vec::with_capacity(tables.len());
    for (name, table) in tables {
        let path = config.out.join(name);
        table.write(&path)?;
        info!("wrote {} ({} rows)", path.display(), table.len());
        written.push(path);
    }
    Ok(Artifacts { snapshot, tables: written })
}

fn sorted_rows<K: Ord>(mut rows: Vec<(K, Vec<Cell>)>, header: &[&'static str]) -> Table {
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let mut t = Table::new(header);
    for (_, r) in rows {
        t.push(r);
    }
    t
}

fn self_consistency(config: &ExperimentConfig, depth: usize, data_len: usize, noise_var: f64, strategy: usize) -> SelfConsistencyConfig {
    let mut sc = SelfConsistencyConfig::new(depth, data_len, noise_var, config.resolved_strategies()[strategy]);
    sc.rollouts = config.trials;
    sc.seed = config.seed;
    sc.resample_input = config.resample_input;
    sc
}

/// `rollout.csv`: every step of every rollout, keyed by the rollout's noise seed.
pub fn rollout_tables(config: &ExperimentConfig) -> CliResult<Vec<NamedTable>> {
    let plant = config.plant.build()?;
    let data_len = config.data_lens[0];
    let mut rows = Vec::new();
    for &depth in &config.depths {
        let trials = run_trials(&plant, &self_consistency(config, depth, data_len, config.noise_var, 0))?;
        for trial in trials {
            for (step, (yp, yc)) in trial.result.y_pred.iter().zip(&trial.y_clean).enumerate() {
                let row = vec![step.into(), trial.noise_seed.into(), depth.into(), (*yp).into(), (*yc).into()];
                rows.push(((depth, trial.noise_seed, step), row));
            }
        }
    }
    Ok(vec![("rollout.csv".into(), sorted_rows(rows, &["step", "seed", "L", "y_pred", "y_clean"]))])
}

/// `depth_sweep_var{v}.csv` per noise level.
pub fn depth_sweep_tables(config: &ExperimentConfig) -> CliResult<Vec<NamedTable>> {
    let plant = config.plant.build()?;
    let strategies = config.resolved_strategies();
    let mut out = Vec::new();
    for panel in &config.panels {
        let mut rows = Vec::new();
        for &n in &panel.data_lens {
            for &depth in &config.depths {
                for (k, strategy) in strategies.iter().enumerate() {
                    let row = self_consistency_rmse(&plant, &self_consistency(config, depth, n, panel.noise_var, k))?;
                    info!("var {} N {n} L {depth} {strategy}: mean rmse {:.4e}", panel.noise_var, row.mean_rmse);
                    let cells = vec![depth.into(), n.into(), strategy.tag().into(), row.mean_rmse.into(), row.std_rmse.into()];
                    rows.push(((depth, n, strategy.tag()), cells));
                }
            }
        }
        let table = sorted_rows(rows, &["L", "N", "strategy", "mean_rmse", "std_rmse"]);
        out.push((format!("depth_sweep_var{}.csv", panel.noise_var), table));
    }
    Ok(out)
}

/// `singvals_L{L}.csv` per depth.
pub fn singvals_tables(config: &ExperimentConfig) -> CliResult<Vec<NamedTable>> {
    let header = [
        "N",
        "n_hat",
        "median_inv_sigma",
        "q25_inv_sigma",
        "q75_inv_sigma",
        "epsilon_n",
        "sqrt_epsilon_n",
        "scale_bound",
    ];
    let mut out = Vec::new();
    for &depth in &config.depths {
        let rows = singular_value_sweep(depth, &config.data_lens, config.trials, config.seed)?
            .into_iter()
            .map(|r| {
                let cells = vec![
                    r.data_len.into(),
                    r.n_hat.into(),
                    r.median_inv_sigma.into(),
                    r.q25_inv_sigma.into(),
                    r.q75_inv_sigma.into(),
                    r.epsilon_n.into(),
                    r.sqrt_epsilon_n.into(),
                    r.scale_bound.into(),
                ];
                (r.data_len, cells)
            })
            .collect();
        out.push((format!("singvals_L{depth}.csv"), sorted_rows(rows, &header)));
    }
    Ok(out)
}

/// Event frequencies of every batch, grouped by data length.
pub fn hw_event_batches(config: &ExperimentConfig, depth: usize) -> CliResult<Vec<(usize, Vec<EventFrequencies>)>> {
    let bg = config.beta_gamma.unwrap_or_else(|| default_beta_gamma(depth));
    config
        .data_lens
        .iter()
        .map(|&n| {
            let batches = (0..config.batches)
                .map(|b| hw_event_frequencies(depth, n, bg, bg, config.trials, derive_seed(config.seed, b as u64)))
                .collect::<deep_hankel::Result<Vec<_>>>()?;
            Ok((n, batches))
        })
        .collect()
}

/// `hw_events_L{L}.csv` (one row per batch) and `hw_events_L{L}_summary.csv`
/// (medians over batches).
pub fn hw_events_tables(config: &ExperimentConfig) -> CliResult<Vec<NamedTable>> {
    let mut out = Vec::new();
    for &depth in &config.depths {
        let groups = hw_event_batches(config, depth)?;
        let mut rows = Vec::new();
        let mut summary = Vec::new();
        for (n, batches) in &groups {
            for (b, f) in batches.iter().enumerate() {
                let cells = vec![
                    (*n).into(),
                    b.into(),
                    f.trials.into(),
                    f.beta.into(),
                    f.gamma.into(),
                    f.diagonal.into(),
                    f.off_diagonal.into(),
                    f.joint.into(),
                    f.bound.into(),
                ];
                rows.push(((*n, b), cells));
            }
            let med = |g: fn(&EventFrequencies) -> f64| median(&batches.iter().map(g).collect::<Vec<_>>());
            let cells = vec![
                (*n).into(),
                batches.len().into(),
                med(|f| f.diagonal).into(),
                med(|f| f.off_diagonal).into(),
                med(|f| f.joint).into(),
                med(|f| f.bound).into(),
            ];
            summary.push((*n, cells));
        }
        let header = ["N", "batch", "trials", "beta", "gamma", "diagonal", "off_diagonal", "joint", "bound"];
        out.push((format!("hw_events_L{depth}.csv"), sorted_rows(rows, &header)));
        let header = ["N", "batches", "median_diagonal", "median_off_diagonal", "median_joint", "median_bound"];
        out.push((format!("hw_events_L{depth}_summary.csv"), sorted_rows(summary, &header)));
    }
    Ok(out)
}

/// One LQR experiment per trial; trial `k` uses seed `derive_seed(seed, k)`.
pub fn lqr_runs(config: &ExperimentConfig) -> CliResult<Vec<(u64, LqrExperiment)>> {
    let plant = config.plant.build()?;
    let l = &config.lqr;
    (0..config.trials)
        .map(|k| {
            let seed = derive_seed(config.seed, k as u64);
            let cfg = LqrExperimentConfig {
                depths: config.depths.clone(),
                samples: config.data_lens[0],
                noise_variance: config.noise_var,
                loop_noise_variance: l.loop_noise_var,
                weights: ServoWeights { q_delta: l.q_delta, q_error: l.q_error, r: l.r },
                reference_amplitude: l.reference_amplitude,
                horizon: l.horizon,
                seed,
                update: l.update,
                rank_tol: RankTol::Auto,
            };
            lqr_experiment(&plant, &cfg).map(|e| (seed, e)).map_err(CliError::from)
        })
        .collect()
}

/// `lqr_data.csv`, `lqr_deviation.csv`, `lqr_tracking.csv`, `lqr_summary.csv`.
pub fn lqr_tables(config: &ExperimentConfig) -> CliResult<Vec<NamedTable>> {
    let runs = lqr_runs(config)?;
    let mut data = Vec::new();
    let mut deviation = Vec::new();
    let mut tracking = Vec::new();
    let mut summary = Vec::new();
    for (seed, e) in &runs {
        let seed = *seed;
        for (step, ((u, yc), yn)) in e.u.iter().zip(&e.y_clean).zip(&e.y_noisy).enumerate() {
            data.push(((seed, step), vec![seed.into(), step.into(), (*u).into(), (*yc).into(), (*yn).into()]));
        }
        for o in &e.outcomes {
            let d = o.depth;
            for (step, dev) in o.eval.deviation.iter().enumerate() {
                deviation.push(((d, seed, step), vec![d.into(), seed.into(), step.into(), (*dev).into()]));
            }
            let run = &o.eval.noisy;
            for step in 0..run.y.len() {
                let baseline = o.eval.baseline.y.get(step).copied().unwrap_or(f64::NAN);
                let cells = vec![
                    d.into(),
                    seed.into(),
                    step.into(),
                    e.reference[step].into(),
                    run.y[step].into(),
                    run.u[step].into(),
                    baseline.into(),
                ];
                tracking.push(((d, seed, step), cells));
            }
            let cells = vec![
                d.into(),
                seed.into(),
                o.eval.rms_deviation.into(),
                o.true_radius.into(),
                o.baseline_true_radius.into(),
                o.design_radius.into(),
                o.stable().into(),
            ];
            summary.push(((d, seed), cells));
        }
    }
    Ok(vec![
        ("lqr_data.csv".into(), sorted_rows(data, &["seed", "step", "u", "y_clean", "y_noisy"])),
        ("lqr_deviation.csv".into(), sorted_rows(deviation, &["L", "seed", "step", "deviation"])),
        (
            "lqr_tracking.csv".into(),
            sorted_rows(tracking, &["L", "seed", "step", "reference", "y", "u", "y_baseline"]),
        ),
        (
            "lqr_summary.csv".into(),
            sorted_rows(
                summary,
                &["L", "seed", "rms_deviation", "true_radius", "baseline_true_radius", "design_radius", "stable"],
            ),
        ),
    ])
}
