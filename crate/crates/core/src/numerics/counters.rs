//! Thread-local operation counters used by the complexity checks.
//!
//! Matmul kernels report their scalar multiplies; bias construction paths
//! report data-dependent reads from learnable tables.

use std::cell::Cell;

thread_local! {
    static MULTIPLIES: Cell<u64> = const { Cell::new(0) };
    static GATHERS: Cell<u64> = const { Cell::new(0) };
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub multiplies: u64,
    pub gathers: u64,
}

pub(crate) fn record_multiplies(n: u64) {
    MULTIPLIES.with(|c| c.set(c.get() + n));
}

pub(crate) fn record_gathers(n: u64) {
    GATHERS.with(|c| c.set(c.get() + n));
}

pub fn snapshot() -> OpCounts {
    OpCounts {
        multiplies: MULTIPLIES.with(Cell::get),
        gathers: GATHERS.with(Cell::get),
    }
}

/// Runs `f` and returns the operations it performed on this thread.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, OpCounts) {
    let before = snapshot();
    let out = f();
    let after = snapshot();
    (
        out,
        OpCounts {
            multiplies: after.multiplies - before.multiplies,
            gathers: after.gathers - before.gathers,
        },
    )
}
