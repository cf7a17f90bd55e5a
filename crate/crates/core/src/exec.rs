//! Data-parallel execution helpers.
//!
//! Every hot loop in the crate (convolution channels, span renders, sample
//! batches) goes through these helpers. With the `parallel` feature the work
//! is spread over the rayon pool; without it, or inside a [`sequential`]
//! scope, the same closures run in order on the calling thread.
//!
//! Work items never share accumulators, so both paths produce bit-identical
//! results.

use std::sync::atomic::{AtomicUsize, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static SEQUENTIAL_SCOPES: AtomicUsize = AtomicUsize::new(0);

/// Whether the helpers currently dispatch to rayon.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && SEQUENTIAL_SCOPES.load(Ordering::Relaxed) == 0
}

/// Runs `f` with parallel dispatch disabled process-wide.
///
/// Intended for benchmarks and equivalence tests. Scopes nest.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    struct Guard;
    impl Drop for Guard {
        fn drop(&mut self) {
            SEQUENTIAL_SCOPES.fetch_sub(1, Ordering::Relaxed);
        }
    }
    SEQUENTIAL_SCOPES.fetch_add(1, Ordering::Relaxed);
    let _guard = Guard;
    f()
}

/// Calls `f(index, chunk)` for each `chunk_len`-sized chunk of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 || data.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    if is_parallel() {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Evaluates `f(0..n)` and collects the results in index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}
