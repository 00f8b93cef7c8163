//! Execution strategy for the data-parallel kernels.
//!
//! Every kernel splits its output into independent chunks (one output plane,
//! one weight filter, ...) and fills each chunk with a fixed summation order.
//! The parallel and sequential strategies therefore produce bit-identical
//! results. Without the `parallel` feature, [`Exec::Parallel`] runs
//! sequentially.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

const SEQUENTIAL: u8 = 0;
const PARALLEL: u8 = 1;

static MODE: AtomicU8 = AtomicU8::new(if cfg!(feature = "parallel") { PARALLEL } else { SEQUENTIAL });

impl Exec {
    /// Process-wide strategy used by the tape operations.
    pub fn current() -> Exec {
        match MODE.load(Ordering::Relaxed) {
            PARALLEL => Exec::Parallel,
            _ => Exec::Sequential,
        }
    }

    pub fn set_current(mode: Exec) {
        let v = match mode {
            Exec::Sequential => SEQUENTIAL,
            Exec::Parallel => PARALLEL,
        };
        MODE.store(v, Ordering::Relaxed);
    }

    /// Whether this build can actually run kernels on multiple threads.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

impl Default for Exec {
    fn default() -> Self {
        Exec::current()
    }
}

/// Applies `f(chunk_index, chunk)` to consecutive `chunk_len` slices of `out`.
pub(crate) fn for_each_chunk<T, F>(exec: Exec, out: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 || out.is_empty() {
        return;
    }
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
        }
        _ => out.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c)),
    }
}

/// Maps `f` over `0..count`, collecting results in index order.
pub(crate) fn map_indices<R, F>(exec: Exec, count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..count).into_par_iter().map(f).collect()
        }
        _ => (0..count).map(f).collect(),
    }
}
