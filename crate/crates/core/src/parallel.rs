//! Ordered data-parallel map helpers.
//!
//! With the `parallel` feature (default) the maps run on the rayon thread
//! pool; without it they run sequentially on the calling thread. Both paths
//! produce output in input order, and all floating-point reductions in this
//! crate are performed sequentially over that ordered output, so results do
//! not depend on scheduling or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub(crate) fn try_map_ordered<T, U, E, F>(items: &[T], f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(&T) -> Result<U, E> + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn try_map_ordered<T, U, E, F>(items: &[T], f: F) -> Result<Vec<U>, E>
where
    F: Fn(&T) -> Result<U, E>,
{
    items.iter().map(f).collect()
}
