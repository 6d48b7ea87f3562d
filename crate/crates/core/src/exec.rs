//! Data-parallel map helpers.
//!
//! Independent work units (truncation restarts, Monte Carlo trajectories,
//! sweep rows, grid points) go through [`map_collect`], which fans out on
//! rayon when the `parallel` feature is enabled and degrades to a sequential
//! loop otherwise. Output order always matches input order, so results are
//! deterministic regardless of thread count. [`map_collect_seq`] is the
//! always-sequential variant, kept public for benchmark comparisons.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_iter().map(f).collect()
}

pub fn map_collect_seq<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Map over `0..n`, parallel when enabled.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    map_collect((0..n).collect(), f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let out = map_indexed(100, |i| i * i);
        let seq = map_collect_seq((0..100).collect::<Vec<_>>(), |i| i * i);
        assert_eq!(out, seq);
    }
}
