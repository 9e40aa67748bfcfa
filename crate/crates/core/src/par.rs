//! Internal dispatch between rayon and sequential execution.
//!
//! Call sites always have a sequential twin available (the benches compare
//! the two), and the parallel path preserves input order, so enabling the
//! `parallel` feature or changing the thread count never changes results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Order-preserving map, parallel when the `parallel` feature is on.
pub(crate) fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sequential twin of [`map`], always available for comparison.
pub(crate) fn map_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}
