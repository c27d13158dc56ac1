//! Data-parallel helpers. With the `parallel` feature the maps run on the
//! rayon global pool; without it they run sequentially. Results are always
//! collected in input order, so every caller that reduces sequentially over
//! the output is bit-identical across both builds.

#[cfg(feature = "parallel")]
mod actual {
    use rayon::prelude::*;

    pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
    where
        F: Fn(usize) -> R + Sync + Send,
        R: Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }

    pub fn map_slice<T, R, F>(source: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        F: Fn(&T) -> R + Sync + Send,
        R: Send,
    {
        source.par_iter().map(f).collect()
    }

    pub fn is_parallel() -> bool {
        true
    }
}

#[cfg(not(feature = "parallel"))]
mod actual {
    pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
    where
        F: Fn(usize) -> R + Sync + Send,
        R: Send,
    {
        (0..n).map(f).collect()
    }

    pub fn map_slice<T, R, F>(source: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        F: Fn(&T) -> R + Sync + Send,
        R: Send,
    {
        source.iter().map(f).collect()
    }

    pub fn is_parallel() -> bool {
        false
    }
}

pub use actual::{is_parallel, map_range, map_slice};
