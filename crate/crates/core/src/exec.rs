//! Index-parallel execution abstraction.
//!
//! Numeric results must be bit-identical for any worker count, so all
//! parallelism in the pipeline is expressed as "run `f(i)` for every `i` in
//! `0..n`, exactly once each, in any order, on any thread" over work units
//! that never share mutable state and never race on reductions (reductions
//! happen afterwards, in fixed index order). The core crate provides the
//! serial executor; the CLI crate supplies a thread-pool implementation.

use alloc::boxed::Box;

/// Runs independent index-addressed work items.
///
/// # Safety
///
/// Implementations must call `f(i)` exactly once for every `i` in `0..n`
/// before returning, and never call it for any other index. Callers (see
/// [`for_each_mut`]) rely on this to hand each invocation a disjoint
/// `&mut` borrow.
pub unsafe trait Executor: Sync {
    fn run(&self, n: usize, f: &(dyn Fn(usize) + Sync));
}

/// Executes every index on the calling thread, in order.
#[derive(Debug, Clone, Copy, Default)]
pub struct SerialExec;

// SAFETY: the loop below visits each index in 0..n exactly once.
unsafe impl Executor for SerialExec {
    fn run(&self, n: usize, f: &(dyn Fn(usize) + Sync)) {
        for i in 0..n {
            f(i);
        }
    }
}

struct SendPtr<T>(*mut T);
// SAFETY: the pointer is only dereferenced at indices partitioned disjointly
// across invocations (see for_each_mut), so cross-thread access never
// aliases.
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

impl<T> SendPtr<T> {
    /// Accessor (rather than field access) so closures capture the whole
    /// wrapper, keeping its Send/Sync markers effective.
    fn get(&self) -> *mut T {
        self.0
    }
}

/// Applies `f(i, &mut out[i])` for every element, using the executor.
///
/// This is the single place the crate converts "exactly once per index" into
/// disjoint mutable access; everything batched (environment stepping, model
/// forwards, gradient chunks) goes through it.
pub fn for_each_mut<T: Send>(
    exec: &dyn Executor,
    out: &mut [T],
    f: &(dyn Fn(usize, &mut T) + Sync),
) {
    let ptr = SendPtr(out.as_mut_ptr());
    let n = out.len();
    exec.run(n, &move |i| {
        debug_assert!(i < n);
        // SAFETY: Executor guarantees each i in 0..n is passed exactly once,
        // so this &mut is unique; `out` outlives the call because `run`
        // returns only after all invocations complete.
        let item = unsafe { &mut *ptr.get().add(i) };
        f(i, item);
    });
}

/// Splits `0..n` into fixed-size chunks. Chunk boundaries depend only on
/// `n` and `chunk`, never on the worker count, so per-chunk reductions are
/// reproducible across executors.
pub fn chunk_ranges(n: usize, chunk: usize) -> Box<[(usize, usize)]> {
    debug_assert!(chunk > 0);
    let mut out = alloc::vec::Vec::with_capacity(n.div_ceil(chunk));
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        out.push((start, end));
        start = end;
    }
    out.into_boxed_slice()
}
