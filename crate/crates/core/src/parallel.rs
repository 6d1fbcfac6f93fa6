//! Order-preserving map over a slice.
//!
//! With the `parallel` feature the work runs on rayon, either on the global
//! pool or on a dedicated pool of `workers` threads. Without it, or with
//! `workers == Some(1)`, items are processed sequentially. Output order is
//! always the input order.

use crate::{Error, Result};

#[cfg(feature = "parallel")]
pub fn map_indexed<T, R, F>(items: &[T], workers: Option<usize>, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;

    match workers {
        Some(0) => Err(Error::invalid("workers", "must be >= 1")),
        Some(1) => Ok(sequential(items, f)),
        _ if items.len() <= 1 => Ok(sequential(items, f)),
        None => Ok(items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid("workers", e.to_string()))?;
            Ok(pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()))
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, R, F>(items: &[T], workers: Option<usize>, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    if workers == Some(0) {
        return Err(Error::invalid("workers", "must be >= 1"));
    }
    Ok(sequential(items, f))
}

fn sequential<T, R, F: Fn(usize, &T) -> R>(items: &[T], f: F) -> Vec<R> {
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Worker count used when none is configured.
pub fn default_workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
