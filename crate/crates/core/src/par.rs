//! Data-parallel helpers.
//!
//! Every batch loop in the crate (index builds, per-unit searches, per-user
//! evaluation) goes through these functions. With the `parallel` feature the
//! work is spread over the rayon pool when [`Parallelism::Rayon`] is selected;
//! without it, both variants run sequentially. Results are always returned in
//! input order, so output never depends on scheduling.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runtime choice of execution strategy for batch loops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    Sequential,
    #[default]
    Rayon,
}

impl Parallelism {
    /// True when work will actually fan out over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Rayon
    }
}

pub(crate) fn map<T, R, F>(parallelism: Parallelism, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallelism.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = parallelism;
    items.iter().map(f).collect()
}

pub(crate) fn map_range<R, F>(parallelism: Parallelism, len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallelism.is_parallel() {
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = parallelism;
    (0..len).map(f).collect()
}
