//! Data-parallel map over independent Monte Carlo trials.
//!
//! With the `parallel` feature the work is spread over the rayon pool;
//! without it the same closure runs sequentially. Output order always
//! follows input order, so downstream aggregation is scheduling-independent.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..count`, returning results in index order.
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// Maps `f` over a slice, returning results in slice order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// True when trials are dispatched to the rayon pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
