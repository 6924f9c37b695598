//! Batch-axis data parallelism.
//!
//! With the `parallel` feature these helpers fan work out over rayon's pool;
//! without it they run the identical closures in index order. Callers only
//! ever reduce results in index order, so both paths produce bit-identical
//! numbers. A parallel build can also be switched to the sequential path at
//! run time with [`force_sequential`].

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Route every helper through the sequential path (process-wide).
pub fn force_sequential(on: bool) {
    SEQUENTIAL.store(on, Ordering::Relaxed);
}

/// Whether work currently fans out across threads.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !SEQUENTIAL.load(Ordering::Relaxed)
}

/// Evaluate `f(i)` for `i in 0..n` and collect in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Run `f(i, chunk)` over consecutive `chunk_len`-sized pieces of `data`.
pub fn for_each_chunk<F>(data: &mut [f64], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_agree() {
        let f = |i: usize| (i as f64).sin() * 1e3;
        let a = map_indexed(257, f);
        let mut x = vec![0.0; 64 * 5];
        for_each_chunk(&mut x, 5, |i, c| c.iter_mut().enumerate().for_each(|(k, v)| *v = (i * 5 + k) as f64));
        force_sequential(true);
        assert!(!is_parallel());
        let b = map_indexed(257, f);
        let mut y = vec![0.0; 64 * 5];
        for_each_chunk(&mut y, 5, |i, c| c.iter_mut().enumerate().for_each(|(k, v)| *v = (i * 5 + k) as f64));
        force_sequential(false);
        assert_eq!(a, b);
        assert_eq!(x, y);
        assert_eq!(is_parallel(), cfg!(feature = "parallel"));
    }
}
