//! Scoped control over intra-op parallelism.
//!
//! Compute kernels parallelize over frames with a fixed, order-preserving
//! reduction, so results are bit-identical whether they run sequentially or
//! on a thread pool. Single-threaded mode exists for callers that must not
//! touch the shared rayon pool at all (e.g. two training runs compared for
//! determinism while executing concurrently in one process).
//!
//! The flag is thread-local: it is read once at op-dispatch time on the
//! calling thread, never inside worker closures.

use std::cell::Cell;

thread_local! {
    static SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Run `f` with all kernels on this thread forced to sequential execution.
pub fn scope_sequential<R>(f: impl FnOnce() -> R) -> R {
    SEQUENTIAL.with(|s| {
        let prev = s.get();
        s.set(true);
        let out = f();
        s.set(prev);
        out
    })
}

/// True when the current thread is inside [`scope_sequential`].
pub fn is_sequential() -> bool {
    SEQUENTIAL.with(|s| s.get())
}

/// Map `0..n` through `f` into a Vec, in parallel unless sequential mode is
/// active. Output order is always `0..n`, so any later fold is deterministic.
pub fn ordered_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if is_sequential() || n <= 1 {
        (0..n).map(f).collect()
    } else {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_scope_restores() {
        assert!(!is_sequential());
        scope_sequential(|| assert!(is_sequential()));
        assert!(!is_sequential());
    }

    #[test]
    fn ordered_map_preserves_order() {
        let v = ordered_map(100, |i| i * 2);
        assert_eq!(v[3], 6);
        assert_eq!(v.len(), 100);
    }
}
