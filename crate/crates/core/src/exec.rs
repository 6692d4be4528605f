//! Ordered parallel execution of independent sample tasks.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Output of one task with its wall time.
#[derive(Debug, Clone, PartialEq)]
pub struct Timed<R> {
    pub value: R,
    pub seconds: f64,
}

fn run_one<T, R>(index: usize, task: &T, label: &(dyn Fn(usize, &T) -> String + Sync), f: &(dyn Fn(&T) -> Result<R> + Sync)) -> Result<Timed<R>> {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| f(task)));
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(Ok(value)) => Ok(Timed { value, seconds }),
        Ok(Err(e)) => Err(Error::TaskFailed { index, label: label(index, task), message: e.to_string() }),
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            Err(Error::TaskFailed { index, label: label(index, task), message: format!("panicked: {message}") })
        }
    }
}

/// Applies `f` to every task on `workers` threads and returns the results in
/// task order. The first failure in task order is reported, naming the task
/// through `label`.
pub fn parallel_map<T, R, F, L>(tasks: &[T], workers: usize, label: L, f: F) -> Result<Vec<Timed<R>>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
    L: Fn(usize, &T) -> String + Sync,
{
    if workers == 0 {
        return Err(Error::InvalidArgument("worker count must be at least 1".into()));
    }
    let outcomes: Vec<Result<Timed<R>>> = if workers == 1 {
        tasks.iter().enumerate().map(|(i, t)| run_one(i, t, &label, &f)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
        pool.install(|| tasks.par_iter().enumerate().map(|(i, t)| run_one(i, t, &label, &f)).collect())
    };
    outcomes.into_iter().collect()
}
