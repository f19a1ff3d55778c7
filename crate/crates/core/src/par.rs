//! Order-preserving maps over independent jobs.
//!
//! With the `parallel` feature the jobs run on a bounded rayon pool; without
//! it every [`Parallelism`] value runs sequentially. Output order always
//! matches input order, so results do not depend on scheduling.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    /// At most this many worker threads (0 means rayon's default).
    Threads(usize),
}

impl Parallelism {
    /// `--jobs N` style constructor: 1 is sequential.
    pub fn from_jobs(jobs: usize) -> Self {
        if jobs == 1 {
            Self::Sequential
        } else {
            Self::Threads(jobs)
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && matches!(self, Self::Threads(_))
    }
}

impl Default for Parallelism {
    fn default() -> Self {
        Self::Sequential
    }
}

/// `items.iter().map(f)` under the requested parallelism.
pub fn map<T, R, F>(par: Parallelism, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match par {
        Parallelism::Sequential => items.iter().map(f).collect(),
        Parallelism::Threads(n) => threaded(n, items, f),
    }
}

#[cfg(feature = "parallel")]
fn threaded<T, R, F>(n: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn threaded<T, R, F>(_n: usize, items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Like [`map`], stopping at the first error in input order.
pub fn try_map<T, R, E, F>(par: Parallelism, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(par, items, f).into_iter().collect()
}
