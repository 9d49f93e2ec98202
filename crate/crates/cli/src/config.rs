//! Flat `key = value` experiment configuration.
//!
//! Resolution order is per-experiment defaults, then the config file, then
//! command-line flags. The snapshot written next to the results lists every
//! resolved key, and loading it reproduces the same [`ExperimentConfig`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use deep_hankel::preprocess::{PreprocessStrategy, SsaOptions};
use deep_hankel::traj_lqr::AlphaUpdate;
use deep_hankel::{c2d_zoh, tf_to_ss, LtiSystem};

use crate::{CliError, CliResult};

pub type KeyValues = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Experiment {
    Rollout,
    DepthSweep,
    Singvals,
    HwEvents,
    Lqr,
}

impl Experiment {
    pub const ALL: [Experiment; 5] =
        [Experiment::Rollout, Experiment::DepthSweep, Experiment::Singvals, Experiment::HwEvents, Experiment::Lqr];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Rollout => "rollout",
            Experiment::DepthSweep => "depth-sweep",
            Experiment::Singvals => "singvals",
            Experiment::HwEvents => "hw-events",
            Experiment::Lqr => "lqr",
        }
    }

    /// Keys accepted besides `experiment`, `seed`, `out` and `trials`.
    fn keys(self) -> &'static [&'static str] {
        const PLANT: [&str; 4] = ["plant", "plant.num", "plant.den", "plant.ts"];
        match self {
            Experiment::Rollout => {
                &[PLANT[0], PLANT[1], PLANT[2], PLANT[3], "L", "N", "noise_var", "strategy", "resample_input", "ssa_both"]
            }
            Experiment::DepthSweep => &[
                PLANT[0],
                PLANT[1],
                PLANT[2],
                PLANT[3],
                "L",
                "N",
                "noise_var",
                "panels",
                "strategy",
                "resample_input",
                "ssa_both",
            ],
            Experiment::Singvals => &["L", "N"],
            Experiment::HwEvents => &["L", "N", "batches", "beta_gamma"],
            Experiment::Lqr => &[
                PLANT[0],
                PLANT[1],
                PLANT[2],
                PLANT[3],
                "L",
                "N",
                "noise_var",
                "loop_noise_var",
                "horizon",
                "reference_amplitude",
                "q_delta",
                "q_error",
                "r",
                "update",
            ],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s.trim())
            .ok_or_else(|| CliError::Config(format!("experiment: unknown value '{s}'")))
    }
}

/// Transfer function in descending powers; continuous plants are
/// discretized by zero-order hold with period `ts`.
#[derive(Debug, Clone, PartialEq)]
pub enum PlantSpec {
    Continuous { num: Vec<f64>, den: Vec<f64>, ts: f64 },
    Discrete { num: Vec<f64>, den: Vec<f64>, ts: f64 },
}

impl PlantSpec {
    /// `1 / (s^2 + 0.5 s + 1)` sampled at 0.1.
    pub fn second_order() -> Self {
        PlantSpec::Continuous { num: vec![1.0], den: vec![1.0, 0.5, 1.0], ts: 0.1 }
    }

    /// `0.1159 (z^3 + 0.5 z) / (z^4 - 2.2 z^3 + 2.42 z^2 - 1.87 z + 0.7225)`.
    pub fn fourth_order() -> Self {
        PlantSpec::Discrete {
            num: vec![0.1159, 0.0, 0.05795, 0.0],
            den: vec![1.0, -2.2, 2.42, -1.87, 0.7225],
            ts: 1.0,
        }
    }

    pub fn build(&self) -> CliResult<LtiSystem> {
        let sys = match self {
            PlantSpec::Continuous { num, den, ts } => c2d_zoh(&tf_to_ss(num, den, 0.0)?, *ts)?,
            PlantSpec::Discrete { num, den, ts } => {
                if !(*ts > 0.0 && ts.is_finite()) {
                    return Err(CliError::Config(format!("plant.ts: must be positive, got {ts}")));
                }
                tf_to_ss(num, den, *ts)?
            }
        };
        Ok(sys)
    }

    fn kind(&self) -> &'static str {
        match self {
            PlantSpec::Continuous { .. } => "continuous",
            PlantSpec::Discrete { .. } => "discrete",
        }
    }

    fn parts(&self) -> (&[f64], &[f64], f64) {
        match self {
            PlantSpec::Continuous { num, den, ts } | PlantSpec::Discrete { num, den, ts } => (num, den, *ts),
        }
    }

    fn with_parts(kind: &str, num: Vec<f64>, den: Vec<f64>, ts: f64) -> CliResult<Self> {
        match kind {
            "continuous" => Ok(PlantSpec::Continuous { num, den, ts }),
            "discrete" => Ok(PlantSpec::Discrete { num, den, ts }),
            other => Err(CliError::Config(format!("plant: expected continuous or discrete, got '{other}'"))),
        }
    }
}

/// One noise level of a depth sweep with its data-length grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub noise_var: f64,
    pub data_lens: Vec<usize>,
}

/// Data-length grid of a depth-sweep panel when none is given.
pub fn default_panel_lens(noise_var: f64) -> Option<Vec<usize>> {
    if noise_var == 0.1 {
        Some(vec![150, 200, 250])
    } else if noise_var == 1.0 {
        Some(vec![1500, 2500, 5000])
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrSettings {
    pub loop_noise_var: f64,
    pub horizon: usize,
    pub reference_amplitude: f64,
    pub q_delta: f64,
    pub q_error: f64,
    pub r: f64,
    pub update: AlphaUpdate,
}

impl Default for LqrSettings {
    fn default() -> Self {
        Self {
            loop_noise_var: 0.0,
            horizon: 400,
            reference_amplitude: 1.0,
            q_delta: 0.0,
            q_error: 1.0,
            r: 1.0,
            update: AlphaUpdate::Resolve,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub out: PathBuf,
    pub trials: usize,
    pub plant: PlantSpec,
    pub depths: Vec<usize>,
    /// Data lengths; a single entry for `rollout` and `lqr`.
    pub data_lens: Vec<usize>,
    pub noise_var: f64,
    /// Noise levels of a depth sweep.
    pub panels: Vec<Panel>,
    pub strategies: Vec<PreprocessStrategy>,
    pub resample_input: bool,
    pub ssa_both: bool,
    pub batches: usize,
    /// `beta = gamma`; `None` means `1 / (L + 1)`.
    pub beta_gamma: Option<f64>,
    pub lqr: LqrSettings,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let mut c = Self {
            experiment,
            seed: 0,
            out: PathBuf::from("out"),
            trials: 50,
            plant: PlantSpec::second_order(),
            depths: vec![2, 5, 10, 20],
            data_lens: vec![250],
            noise_var: 0.1,
            panels: Vec::new(),
            strategies: vec![PreprocessStrategy::Noisy],
            resample_input: false,
            ssa_both: false,
            batches: 5,
            beta_gamma: None,
            lqr: LqrSettings::default(),
        };
        match experiment {
            Experiment::Rollout => {}
            Experiment::DepthSweep => {
                c.trials = 10;
                c.depths = vec![2, 5, 10, 20, 40];
                c.panels = [0.1, 1.0]
                    .iter()
                    .map(|&v| Panel { noise_var: v, data_lens: default_panel_lens(v).unwrap_or_default() })
                    .collect();
                c.strategies = vec![
                    PreprocessStrategy::Noisy,
                    PreprocessStrategy::Smooth,
                    PreprocessStrategy::Ssa(SsaOptions::default()),
                ];
                c.resample_input = true;
            }
            Experiment::Singvals => {
                c.depths = vec![8];
                c.data_lens = vec![100, 316, 1_000, 3_162, 10_000, 31_623, 100_000];
            }
            Experiment::HwEvents => {
                c.depths = vec![8];
                c.data_lens = vec![1_000, 10_000, 100_000];
            }
            Experiment::Lqr => {
                c.trials = 1;
                c.plant = PlantSpec::fourth_order();
                c.depths = vec![5, 10, 20];
                c.data_lens = vec![400];
                c.noise_var = 1.0;
            }
        }
        c
    }

    /// Defaults, then `file`, then `flags`; validated.
    pub fn resolve(experiment: Experiment, file: Option<&KeyValues>, flags: &KeyValues) -> CliResult<Self> {
        let mut c = Self::defaults(experiment);
        if let Some(kv) = file {
            c.apply(kv)?;
        }
        c.apply(flags)?;
        c.validate()?;
        Ok(c)
    }

    /// Overrides fields from `kv`; unknown or inapplicable keys are errors.
    pub fn apply(&mut self, kv: &KeyValues) -> CliResult<()> {
        let allowed = self.experiment.keys();
        for key in kv.keys() {
            let common = matches!(key.as_str(), "experiment" | "seed" | "out" | "trials");
            if !common && !allowed.contains(&key.as_str()) {
                return Err(CliError::Config(format!("{key}: not a setting of '{}'", self.experiment)));
            }
        }
        if let Some(v) = kv.get("experiment") {
            let e: Experiment = v.parse()?;
            if e != self.experiment {
                return Err(CliError::Config(format!("experiment: config is for '{e}', command is '{}'", self.experiment)));
            }
        }
        if let Some(v) = kv.get("seed") {
            self.seed = parse_scalar("seed", v)?;
        }
        if let Some(v) = kv.get("out") {
            self.out = PathBuf::from(v.trim());
        }
        if let Some(v) = kv.get("trials") {
            self.trials = parse_scalar("trials", v)?;
        }
        if kv.keys().any(|k| k.starts_with("plant")) {
            let (num, den, ts) = self.plant.parts();
            let kind = kv.get("plant").map(|s| s.trim().to_string()).unwrap_or_else(|| self.plant.kind().to_string());
            let num = kv.get("plant.num").map(|v| parse_list("plant.num", v)).transpose()?.unwrap_or_else(|| num.to_vec());
            let den = kv.get("plant.den").map(|v| parse_list("plant.den", v)).transpose()?.unwrap_or_else(|| den.to_vec());
            let ts = kv.get("plant.ts").map(|v| parse_scalar("plant.ts", v)).transpose()?.unwrap_or(ts);
            self.plant = PlantSpec::with_parts(&kind, num, den, ts)?;
        }
        if let Some(v) = kv.get("L") {
            self.depths = parse_list("L", v)?;
        }
        if self.experiment == Experiment::DepthSweep {
            self.apply_panels(kv)?;
        } else {
            if let Some(v) = kv.get("N") {
                self.data_lens = parse_list("N", v)?;
            }
            if let Some(v) = kv.get("noise_var") {
                self.noise_var = parse_scalar("noise_var", v)?;
            }
        }
        if let Some(v) = kv.get("strategy") {
            self.strategies = parse_list("strategy", v)?;
        }
        if let Some(v) = kv.get("resample_input") {
            self.resample_input = parse_scalar("resample_input", v)?;
        }
        if let Some(v) = kv.get("ssa_both") {
            self.ssa_both = parse_scalar("ssa_both", v)?;
        }
        if let Some(v) = kv.get("batches") {
            self.batches = parse_scalar("batches", v)?;
        }
        if let Some(v) = kv.get("beta_gamma") {
            self.beta_gamma = if v.trim() == "auto" { None } else { Some(parse_scalar("beta_gamma", v)?) };
        }
        let l = &mut self.lqr;
        if let Some(v) = kv.get("loop_noise_var") {
            l.loop_noise_var = parse_scalar("loop_noise_var", v)?;
        }
        if let Some(v) = kv.get("horizon") {
            l.horizon = parse_scalar("horizon", v)?;
        }
        if let Some(v) = kv.get("reference_amplitude") {
            l.reference_amplitude = parse_scalar("reference_amplitude", v)?;
        }
        if let Some(v) = kv.get("q_delta") {
            l.q_delta = parse_scalar("q_delta", v)?;
        }
        if let Some(v) = kv.get("q_error") {
            l.q_error = parse_scalar("q_error", v)?;
        }
        if let Some(v) = kv.get("r") {
            l.r = parse_scalar("r", v)?;
        }
        if let Some(v) = kv.get("update") {
            l.update = match v.trim() {
                "resolve" => AlphaUpdate::Resolve,
                "propagate" => AlphaUpdate::Propagate,
                other => return Err(CliError::Config(format!("update: expected resolve or propagate, got '{other}'"))),
            };
        }
        Ok(())
    }

    /// `panels` sets the sweep directly; `noise_var` and `N` build a single
    /// panel, taking the default grid for a known noise level.
    fn apply_panels(&mut self, kv: &KeyValues) -> CliResult<()> {
        let var = kv.get("noise_var").map(|v| parse_scalar::<f64>("noise_var", v)).transpose()?;
        let lens = kv.get("N").map(|v| parse_list::<usize>("N", v)).transpose()?;
        if let Some(v) = kv.get("panels") {
            if var.is_some() || lens.is_some() {
                return Err(CliError::Config("panels: cannot be combined with noise_var or N in the same source".into()));
            }
            self.panels = parse_panels(v)?;
            return Ok(());
        }
        match (var, lens) {
            (None, None) => {}
            (Some(v), lens) => {
                let data_lens = lens
                    .or_else(|| default_panel_lens(v))
                    .ok_or_else(|| CliError::Config(format!("N: required for noise_var = {v}")))?;
                self.panels = vec![Panel { noise_var: v, data_lens }];
            }
            (None, Some(lens)) => {
                for p in &mut self.panels {
                    p.data_lens = lens.clone();
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let err = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        if self.trials == 0 {
            return err("trials", "must be >= 1".into());
        }
        if self.depths.is_empty() || self.depths.contains(&0) {
            return err("L", "needs one or more positive depths".into());
        }
        if has_duplicates(&self.depths) {
            return err("L", "contains duplicates".into());
        }
        let single_n = matches!(self.experiment, Experiment::Rollout | Experiment::Lqr);
        if single_n && self.data_lens.len() != 1 {
            return err("N", format!("'{}' takes exactly one value", self.experiment));
        }
        if self.data_lens.is_empty() || has_duplicates(&self.data_lens) {
            return err("N", "needs one or more distinct values".into());
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return err("noise_var", format!("must be finite and >= 0, got {}", self.noise_var));
        }
        match self.experiment {
            Experiment::Rollout => {
                if self.strategies.len() != 1 {
                    return err("strategy", "rollout takes exactly one strategy".into());
                }
            }
            Experiment::DepthSweep => {
                if self.panels.is_empty() {
                    return err("panels", "needs one or more panels".into());
                }
                for p in &self.panels {
                    if !(p.noise_var >= 0.0 && p.noise_var.is_finite()) || p.data_lens.is_empty() || has_duplicates(&p.data_lens) {
                        return err("panels", format!("invalid panel {p:?}"));
                    }
                }
                if self.strategies.is_empty() || has_duplicates(&self.strategies.iter().map(|s| s.tag()).collect::<Vec<_>>()) {
                    return err("strategy", "needs one or more distinct strategies".into());
                }
            }
            Experiment::Singvals | Experiment::HwEvents => {
                let max_l = *self.depths.iter().max().unwrap_or(&0);
                if let Some(n) = self.data_lens.iter().find(|&&n| n < max_l) {
                    return err("N", format!("{n} is shorter than depth {max_l}"));
                }
                if self.experiment == Experiment::HwEvents {
                    if self.depths.contains(&1) {
                        return err("L", "event frequencies need L >= 2".into());
                    }
                    if self.batches == 0 {
                        return err("batches", "must be >= 1".into());
                    }
                    if let Some(bg) = self.beta_gamma {
                        if !(bg > 0.0 && bg < 1.0) {
                            return err("beta_gamma", format!("must lie in (0, 1), got {bg}"));
                        }
                    }
                }
            }
            Experiment::Lqr => {
                let l = &self.lqr;
                if l.horizon == 0 {
                    return err("horizon", "must be >= 1".into());
                }
                if !(l.loop_noise_var >= 0.0 && l.loop_noise_var.is_finite()) {
                    return err("loop_noise_var", "must be finite and >= 0".into());
                }
                if !(l.q_delta >= 0.0 && l.q_error >= 0.0 && l.r > 0.0) {
                    return err("r", "weights need q_delta >= 0, q_error >= 0, r > 0".into());
                }
                if !l.reference_amplitude.is_finite() {
                    return err("reference_amplitude", "must be finite".into());
                }
            }
        }
        Ok(())
    }

    /// Strategies with the `ssa_both` switch applied.
    pub fn resolved_strategies(&self) -> Vec<PreprocessStrategy> {
        self.strategies
            .iter()
            .map(|s| match s {
                PreprocessStrategy::Ssa(o) => PreprocessStrategy::Ssa(SsaOptions { denoise_input: self.ssa_both, ..*o }),
                other => *other,
            })
            .collect()
    }

    /// Every resolved key as `key = value` lines, sorted by key.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        put("experiment", self.experiment.name().into());
        put("seed", self.seed.to_string());
        put("out", self.out.display().to_string());
        put("trials", self.trials.to_string());
        let keys = self.experiment.keys();
        if keys.contains(&"plant") {
            let (num, den, ts) = self.plant.parts();
            put("plant", self.plant.kind().into());
            put("plant.num", join(num));
            put("plant.den", join(den));
            put("plant.ts", ts.to_string());
        }
        put("L", join(&self.depths));
        match self.experiment {
            Experiment::DepthSweep => put("panels", format_panels(&self.panels)),
            _ => put("N", join(&self.data_lens)),
        }
        if matches!(self.experiment, Experiment::Rollout | Experiment::Lqr) {
            put("noise_var", self.noise_var.to_string());
        }
        if keys.contains(&"strategy") {
            put("strategy", self.strategies.iter().map(|s| s.tag()).collect::<Vec<_>>().join(", "));
            put("resample_input", self.resample_input.to_string());
            put("ssa_both", self.ssa_both.to_string());
        }
        if self.experiment == Experiment::HwEvents {
            put("batches", self.batches.to_string());
            put("beta_gamma", self.beta_gamma.map_or_else(|| "auto".into(), |v| v.to_string()));
        }
        if self.experiment == Experiment::Lqr {
            let l = &self.lqr;
            put("loop_noise_var", l.loop_noise_var.to_string());
            put("horizon", l.horizon.to_string());
            put("reference_amplitude", l.reference_amplitude.to_string());
            put("q_delta", l.q_delta.to_string());
            put("q_error", l.q_error.to_string());
            put("r", l.r.to_string());
            put("update", if l.update == AlphaUpdate::Resolve { "resolve" } else { "propagate" }.into());
        }
        kv
    }

    pub fn snapshot(&self) -> String {
        self.to_kv().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.out.join(format!("{}.config", self.experiment.name()))
    }
}

fn has_duplicates<T: PartialEq>(v: &[T]) -> bool {
    v.iter().enumerate().any(|(i, a)| v[..i].contains(a))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn parse_scalar<T: FromStr>(field: &str, v: &str) -> CliResult<T> {
    v.trim().parse().map_err(|_| CliError::Config(format!("{field}: cannot parse '{}'", v.trim())))
}

fn parse_list<T: FromStr>(field: &str, v: &str) -> CliResult<Vec<T>> {
    let items: Vec<&str> = v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(CliError::Config(format!("{field}: empty list")));
    }
    items.into_iter().map(|s| parse_scalar(field, s)).collect()
}

/// `var:N,N,...; var:N,...`
pub fn parse_panels(v: &str) -> CliResult<Vec<Panel>> {
    v.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|p| {
            let (var, lens) =
                p.split_once(':').ok_or_else(|| CliError::Config(format!("panels: expected 'var:N,...', got '{p}'")))?;
            Ok(Panel { noise_var: parse_scalar("panels", var)?, data_lens: parse_list("panels", lens)? })
        })
        .collect()
}

pub fn format_panels(panels: &[Panel]) -> String {
    panels
        .iter()
        .map(|p| format!("{}:{}", p.noise_var, p.data_lens.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> CliResult<KeyValues> {
    let mut kv = KeyValues::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected 'key = value'", no + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", no + 1)));
        }
        if kv.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("{k}: given twice")));
        }
    }
    Ok(kv)
}

pub fn load_key_values(path: &Path) -> CliResult<KeyValues> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("config: cannot read {}: {e}", path.display())))?;
    parse_key_values(&text)
}
