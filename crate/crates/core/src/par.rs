//! Data-parallel map with a sequential fallback.
//!
//! Every parallel loop in the crate goes through [`map_indexed`]. Work items
//! are identified by index and seeded from that index, so the output is the
//! same for either execution mode and any thread schedule. Without the
//! `parallel` feature the mode switch is accepted but everything runs
//! sequentially.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

static MODE: AtomicU8 = AtomicU8::new(1);

/// Current process-wide execution mode.
pub fn execution() -> Execution {
    if cfg!(feature = "parallel") && MODE.load(Ordering::Relaxed) == 1 {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Switch the process-wide execution mode. Results never depend on it.
pub fn set_execution(mode: Execution) {
    MODE.store(
        match mode {
            Execution::Sequential => 0,
            Execution::Parallel => 1,
        },
        Ordering::Relaxed,
    );
}

/// Size the global worker pool. Must run before the first parallel loop;
/// returns false if the pool was already initialized. Without the `parallel`
/// feature this is a no-op that returns true.
pub fn set_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        true
    }
}

/// `(0..n).map(f).collect()`, in parallel when enabled. Output order is
/// always index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match execution() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Fallible variant of [`map_indexed`]; returns the error with the lowest index.
pub fn try_map_indexed<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let out = map_indexed(1000, |i| i * 3);
        assert!(out.iter().enumerate().all(|(i, &v)| v == 3 * i));
    }

    #[test]
    fn first_error_wins() {
        let r: Result<Vec<usize>, usize> =
            try_map_indexed(100, |i| if i % 10 == 7 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(7));
    }
}
