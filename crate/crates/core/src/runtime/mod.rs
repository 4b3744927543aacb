//! Task execution substrate.
//!
//! An [`Executor`] runs batches of pure tasks on a fixed number of worker
//! threads pulling from a shared queue. Results always come back in
//! submission order, so the output of a batch never depends on how tasks
//! were interleaved. Tasks must take everything they need from captured
//! immutable inputs and an explicit seed; the same contract would let a
//! multi-process backend replace the thread pool.

mod bench;

pub use bench::{benchmark, BenchReport, BenchRow, BENCH_CSV_HEADER};

use std::any::Any;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Default)]
struct Counters {
    submitted: AtomicU64,
    completed: AtomicU64,
    active: AtomicUsize,
    max_concurrent: AtomicUsize,
}

/// Point-in-time copy of an executor's counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub tasks_submitted: u64,
    pub tasks_completed: u64,
    pub max_concurrent: usize,
}

/// Fixed-size worker pool. Clones share counters.
#[derive(Debug, Clone)]
pub struct Executor {
    workers: usize,
    counters: Arc<Counters>,
}

impl Default for Executor {
    fn default() -> Self {
        Self::sequential()
    }
}

impl Executor {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Argument("executor needs at least one worker".into()));
        }
        Ok(Self { workers, counters: Arc::new(Counters::default()) })
    }

    /// Runs every task on the calling thread.
    pub fn sequential() -> Self {
        Self { workers: 1, counters: Arc::new(Counters::default()) }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn counters(&self) -> CounterSnapshot {
        CounterSnapshot {
            tasks_submitted: self.counters.submitted.load(Ordering::SeqCst),
            tasks_completed: self.counters.completed.load(Ordering::SeqCst),
            max_concurrent: self.counters.max_concurrent.load(Ordering::SeqCst),
        }
    }

    /// Runs a batch of closures and returns their outputs in submission order.
    ///
    /// If any task fails the batch fails with the error of the lowest-index
    /// failing task; tasks not yet started are skipped.
    pub fn submit_all<T, G>(&self, tasks: Vec<G>) -> Result<Vec<T>>
    where
        T: Send,
        G: FnOnce() -> Result<T> + Send,
    {
        let slots: Vec<Mutex<Option<G>>> = tasks.into_iter().map(|t| Mutex::new(Some(t))).collect();
        self.run_indexed(slots.len(), |i| {
            let task = slots[i].lock().unwrap_or_else(|p| p.into_inner()).take().expect("each task slot is taken once");
            task()
        })
    }

    /// Runs `task(0..count)` and returns the outputs in index order.
    pub fn run_indexed<T, G>(&self, count: usize, task: G) -> Result<Vec<T>>
    where
        T: Send,
        G: Fn(usize) -> Result<T> + Sync,
    {
        self.counters.submitted.fetch_add(count as u64, Ordering::SeqCst);
        let threads = self.workers.min(count);
        if threads <= 1 {
            let mut out = Vec::with_capacity(count);
            for i in 0..count {
                out.push(self.run_one(i, &task)?);
            }
            return Ok(out);
        }

        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let per_thread: Vec<Vec<(usize, Result<T>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|_| {
                    scope.spawn(|| {
                        let mut done = Vec::new();
                        while !abort.load(Ordering::SeqCst) {
                            let i = next.fetch_add(1, Ordering::SeqCst);
                            if i >= count {
                                break;
                            }
                            let r = self.run_one(i, &task);
                            if r.is_err() {
                                abort.store(true, Ordering::SeqCst);
                            }
                            done.push((i, r));
                        }
                        done
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker loop does not panic")).collect()
        });

        let mut slots: Vec<Option<T>> = (0..count).map(|_| None).collect();
        let mut first_err: Option<(usize, Error)> = None;
        for (i, r) in per_thread.into_iter().flatten() {
            match r {
                Ok(v) => slots[i] = Some(v),
                Err(e) => {
                    if first_err.as_ref().is_none_or(|(j, _)| i < *j) {
                        first_err = Some((i, e));
                    }
                }
            }
        }
        if let Some((_, e)) = first_err {
            return Err(e);
        }
        Ok(slots.into_iter().map(|s| s.expect("all tasks ran")).collect())
    }

    fn run_one<T, G>(&self, index: usize, task: &G) -> Result<T>
    where
        G: Fn(usize) -> Result<T> + Sync,
    {
        let c = &self.counters;
        let now = c.active.fetch_add(1, Ordering::SeqCst) + 1;
        c.max_concurrent.fetch_max(now, Ordering::SeqCst);
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| task(index)));
        c.active.fetch_sub(1, Ordering::SeqCst);
        c.completed.fetch_add(1, Ordering::SeqCst);
        match outcome {
            Ok(Ok(v)) => Ok(v),
            Ok(Err(e)) => Err(Error::Task { index, source: Box::new(e) }),
            Err(payload) => Err(Error::TaskPanic { index, message: panic_message(payload) }),
        }
    }
}

fn panic_message(payload: Box<dyn Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

/// Number of hardware threads the OS reports.
pub fn available_cores() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
