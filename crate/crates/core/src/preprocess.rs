//! Data conditioning applied before building a Hankel model: raw data,
//! trailing moving average, or singular spectrum analysis (SSA).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hankel::{hankel_from_slice, Signal};

/// Upper limit on the default SSA embedding window.
pub const DEFAULT_SSA_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SsaOptions {
    /// Embedding window; defaults to `max(L, min(len / 2, DEFAULT_SSA_WINDOW))`.
    pub window: Option<usize>,
    /// Truncation rank; defaults to `min(L, window)`.
    pub rank: Option<usize>,
    /// Denoise the input channel as well as the output.
    pub denoise_input: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PreprocessStrategy {
    #[default]
    Noisy,
    Smooth,
    Ssa(SsaOptions),
}

impl PreprocessStrategy {
    pub fn tag(&self) -> &'static str {
        match self {
            PreprocessStrategy::Noisy => "noisy",
            PreprocessStrategy::Smooth => "smooth",
            PreprocessStrategy::Ssa(_) => "ssa",
        }
    }
}

impl fmt::Display for PreprocessStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for PreprocessStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "noisy" => Ok(PreprocessStrategy::Noisy),
            "smooth" => Ok(PreprocessStrategy::Smooth),
            "ssa" => Ok(PreprocessStrategy::Ssa(SsaOptions::default())),
            other => Err(Error::Parameter(format!("unknown strategy '{other}' (expected noisy, smooth or ssa)"))),
        }
    }
}

fn trailing_mean(z: &[f64], window: usize) -> Vec<f64> {
    let w = window as f64;
    let mut sum: f64 = z[..window].iter().sum();
    let mut out = Vec::with_capacity(z.len() - window + 1);
    out.push(sum / w);
    for t in window..z.len() {
        sum += z[t] - z[t - window];
        out.push(sum / w);
    }
    out
}

/// Trailing moving average of both channels over `window` samples.
///
/// Output sample `k` is the mean of inputs `k..k + window`, i.e. it belongs to
/// the window end `t = k + window - 1`; start indices are shifted to match.
pub fn smooth(u: &Signal, y: &Signal, window: usize) -> Result<(Signal, Signal)> {
    if u.len() != y.len() {
        return Err(Error::Dimension(format!("input has {} samples, output has {}", u.len(), y.len())));
    }
    if window == 0 || window > u.len() {
        return Err(Error::Window { window, len: u.len() });
    }
    let shift = window as i64 - 1;
    let mut su = trailing_mean(u.values(), window);
    let mut sy = trailing_mean(y.values(), window);
    if window == 1 {
        su.copy_from_slice(u.values());
        sy.copy_from_slice(y.values());
    }
    Ok((
        Signal::with_start(su, u.start_index() + shift)?,
        Signal::with_start(sy, y.start_index() + shift)?,
    ))
}

/// Singular spectrum analysis: embed at depth `window`, keep the top `rank`
/// singular triplets, and average each skew-diagonal back into a signal.
pub fn ssa_denoise(z: &Signal, window: usize, rank: usize) -> Result<Signal> {
    let n = z.len();
    if window == 0 || window > n {
        return Err(Error::Depth { depth: window, len: n });
    }
    if rank == 0 || rank > window {
        return Err(Error::Parameter(format!("SSA rank must lie in 1..={window}, got {rank}")));
    }
    let h = hankel_from_slice(z.values(), window)?.into_matrix();
    let k = h.ncols();
    let svd = h.svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));

    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for i in 0..window {
        for j in 0..k {
            counts[i + j] += 1;
        }
    }
    for &c in order.iter().take(rank) {
        let s = sv[c];
        for i in 0..window {
            let ui = s * u[(i, c)];
            for j in 0..k {
                sums[i + j] += ui * vt[(c, j)];
            }
        }
    }
    let out = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    Signal::with_start(out, z.start_index())
}

/// Resolved SSA `(window, rank)` for a signal of `len` samples at depth `depth`.
pub fn ssa_parameters(options: &SsaOptions, len: usize, depth: usize) -> (usize, usize) {
    let window = options
        .window
        .unwrap_or_else(|| depth.max((len / 2).min(DEFAULT_SSA_WINDOW)))
        .min(len);
    let rank = options.rank.unwrap_or(depth).min(window).max(1);
    (window, rank)
}

pub fn apply_strategy(u: &Signal, y: &Signal, strategy: &PreprocessStrategy, depth: usize) -> Result<(Signal, Signal)> {
    match strategy {
        PreprocessStrategy::Noisy => Ok((u.clone(), y.clone())),
        PreprocessStrategy::Smooth => smooth(u, y, depth),
        PreprocessStrategy::Ssa(opts) => {
            let (window, rank) = ssa_parameters(opts, y.len(), depth);
            let y2 = ssa_denoise(y, window, rank)?;
            let u2 = if opts.denoise_input { ssa_denoise(u, window, rank)? } else { u.clone() };
            Ok((u2, y2))
        }
    }
}
