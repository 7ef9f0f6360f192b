//! Deterministic map over an index range, parallel when the `parallel`
//! feature is enabled.
//!
//! Scenario repeats, randomized-profile batches and k-d tree construction
//! are all embarrassingly parallel: each work item derives everything it
//! needs (including its RNG stream) from its index alone. [`map_indexed`]
//! exploits that with rayon while collecting results in index order, so the
//! output — and every downstream report byte — is identical to the
//! sequential fallback. [`map_indexed_seq`] always runs sequentially and
//! exists as the baseline for the bench suite.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, in parallel when built with the `parallel` feature.
/// Results are returned in index order either way.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential twin of [`map_indexed`]; the bench suite compares the two.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
