//! Data-parallel helpers. With the `parallel` feature (default) work is spread over a rayon
//! pool; without it, or with [`Parallelism::Sequential`], the same closures run in order.
//! Results are always returned in input order, so outputs never depend on the mode.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    /// Use the global rayon pool (or a pool of the given size, see [`with_workers`]).
    #[default]
    Parallel,
}

impl Parallelism {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// Map `f` over `0..n`, returning results in index order.
pub fn map_indexed<T, F>(mode: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Map `f` over a slice, returning results in slice order.
pub fn map_slice<I, T, F>(mode: Parallelism, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Send + Sync,
{
    map_indexed(mode, items.len(), |i| f(&items[i]))
}

/// Run `f` inside a pool bounded to `workers` threads (0 = rayon default).
pub fn with_workers<R, F>(workers: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 0 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(f);
        }
    }
    let _ = workers;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let seq = map_indexed(Parallelism::Sequential, 100, |i| i * i);
        let par = map_indexed(Parallelism::Parallel, 100, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
        let words = ["a", "bb", "ccc"];
        assert_eq!(map_slice(Parallelism::Parallel, &words, |w| w.len()), vec![1, 2, 3]);
        assert_eq!(with_workers(2, || 5), 5);
    }
}
