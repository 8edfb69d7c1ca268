//! Execution policy for the data-parallel loops.
//!
//! Every parallel loop in the crate goes through [`Execution`]. Work items are
//! independent and results are collected in index order, so a parallel run
//! produces the same bits as a sequential one. Without the `parallel` feature
//! both variants run on the calling thread.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

impl Execution {
    pub fn from_workers(workers: usize) -> Self {
        if workers > 1 {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    /// Sizes the global worker pool and returns the matching policy. Only the
    /// first call in a process can size the pool.
    pub fn init_workers(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        if workers > 1 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
        }
        Self::from_workers(workers)
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `0..n`, returning results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Applies `f(row_index, row)` to consecutive `width`-sized chunks of `data`.
    pub fn for_each_row<F>(self, data: &mut [f64], width: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        if width == 0 {
            return;
        }
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            data.par_chunks_mut(width)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
        data.chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}
