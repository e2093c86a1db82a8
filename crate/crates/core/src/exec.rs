//! Data-parallel helpers.
//!
//! Hot loops (batch steps, per-image metrics, Monte-Carlo sampling) are
//! expressed as indexed maps over independent items. With the `parallel`
//! feature the items run on the rayon pool; without it, or when a caller
//! asks for sequential execution, they run in index order on the current
//! thread. Results are always collected in index order, so both paths
//! produce bit-identical output.

/// Execution strategy for data-parallel sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    /// Run items in index order on the calling thread.
    Sequential,
    /// Run items on the rayon pool (falls back to sequential when the
    /// `parallel` feature is disabled).
    Parallel,
}

impl Exec {
    pub fn from_sequential_flag(sequential: bool) -> Self {
        if sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Exec::Sequential => (0..n).map(f).collect(),
        Exec::Parallel => map_parallel(n, f),
    }
}

#[cfg(feature = "parallel")]
fn map_parallel<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_parallel<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
