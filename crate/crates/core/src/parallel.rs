//! Worker-count control for the embarrassingly parallel sweeps.
//!
//! Work is always split into the same shards in the same order, and
//! results come back in shard order, so the worker count never changes an
//! answer. Without the `parallel` feature every plan runs on the calling
//! thread.

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel { jobs: usize },
}

impl Execution {
    /// `jobs == 1` means sequential; `0` means one worker per core.
    pub fn with_jobs(jobs: usize) -> Self {
        if jobs == 1 {
            Self::Sequential
        } else {
            Self::Parallel { jobs }
        }
    }

    /// Maps `f` over `0..n`, returning results in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        match *self {
            Self::Sequential => (0..n).map(f).collect(),
            Self::Parallel { jobs } => run_parallel(jobs, n, f),
        }
    }
}

impl Default for Execution {
    fn default() -> Self {
        Self::Parallel { jobs: 0 }
    }
}

#[cfg(feature = "parallel")]
fn run_parallel<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| crate::error::Error::config(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_parallel<T, F>(_jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..n).map(f).collect()
}
