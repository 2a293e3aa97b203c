//! Sequential / data-parallel dispatch.
//!
//! Every batch-level loop in the crate goes through [`Exec`] so results are
//! identical on both paths: work items are independent and outputs are
//! collected in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for batch-level loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Uses the current rayon pool. Without the `parallel` feature this is
    /// the same as [`Exec::Sequential`].
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Calls `f(index, chunk)` on consecutive `chunk_len`-sized pieces of `out`.
    pub fn for_each_chunk_mut<T, F>(self, out: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if chunk_len == 0 {
            return;
        }
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            out.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
            return;
        }
        out.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Runs `f` inside a pool capped at `threads` workers (0 = rayon default).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => return pool.install(f),
            Err(e) => log::warn!("falling back to the global pool: {e}"),
        }
    }
    let _ = threads;
    f()
}
