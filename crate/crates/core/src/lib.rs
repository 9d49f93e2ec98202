//! Data-driven Hankel models of linear time-invariant systems.
//!
//! The crate builds input/output Hankel matrices from (noisy) data, rolls the
//! resulting model forward with minimum-norm solves, measures how the Hankel
//! depth trades off against data length, checks singular-value concentration
//! of random Hankel matrices, and designs LQR servo controllers directly in the
//! trajectory coordinates of the model.
//!
//! Monte Carlo loops run on rayon when the `parallel` feature is enabled
//! (default) and sequentially otherwise; results are identical either way.

pub mod concentration;
pub mod error;
pub mod hankel;
pub mod linalg;
pub mod lti;
pub mod par;
pub mod preprocess;
pub mod rng;
pub mod rollout;
pub mod traj_lqr;

pub use error::{Error, Result};
pub use hankel::{
    build_hankel, build_model, is_persistently_exciting, min_norm_solve, pinv_norm, shift_hankel, HankelMatrix,
    HankelModel, MinNormSolution, PseudoInverse, Signal,
};
pub use linalg::RankTol;
pub use lti::{c2d_zoh, gaussian_signal, simulate, tf_to_ss, LtiSystem, NoiseSpec};
