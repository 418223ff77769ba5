//! Thin dispatch layer over rayon.
//!
//! With the `parallel` feature off, or inside a single-threaded pool, every
//! helper runs a plain sequential iterator. Callers only use order-preserving
//! maps, so output never depends on which path ran.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runs `f` with at most `workers` threads. `None` uses the global pool.
pub fn with_workers<R, F>(workers: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = workers {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
                return pool.install(f);
            }
        }
        f()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}

/// Number of threads the current scope would use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Order-preserving map over `0..n`.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if current_threads() > 1 {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Order-preserving map over a slice.
pub fn map_slice<'a, T, U, F>(items: &'a [T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&'a T) -> U + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if current_threads() > 1 {
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Applies `f(chunk_index, chunk)` to consecutive `chunk`-sized pieces of `out`.
pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if current_threads() > 1 {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}
