//! Data-parallel E-step execution on one machine.
//!
//! Rows are split into contiguous shards. Shards are mapped concurrently on a
//! rayon pool (feature `parallel`) and the per-shard statistics are folded
//! strictly in ascending shard order, so the result depends on the shard
//! boundaries but never on the worker count or scheduling.

use std::ops::Range;

use crate::error::{Error, Result};

/// Additive accumulators of posterior expectations.
pub trait SuffStats: Send {
    /// `self += other`. Must be associative, with freshly constructed
    /// statistics as the identity.
    fn combine(&mut self, other: &Self);
}

/// Contiguous row shards plus the number of workers that map them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardPlan {
    workers: usize,
    shards: Vec<Range<usize>>,
}

impl ShardPlan {
    /// `shards` contiguous ranges over `n` rows whose sizes differ by at most one.
    pub fn even(n: usize, shards: usize, workers: usize) -> Result<Self> {
        if shards == 0 {
            return Err(Error::config("shard count must be at least 1"));
        }
        if workers == 0 {
            return Err(Error::config("worker count must be at least 1"));
        }
        let base = n / shards;
        let extra = n % shards;
        let mut start = 0;
        let ranges = (0..shards)
            .map(|i| {
                let len = base + usize::from(i < extra);
                let r = start..start + len;
                start += len;
                r
            })
            .collect();
        Ok(Self {
            workers,
            shards: ranges,
        })
    }

    /// Explicit boundaries; must be ordered, disjoint and cover `0..n`.
    pub fn from_ranges(n: usize, shards: Vec<Range<usize>>, workers: usize) -> Result<Self> {
        if workers == 0 || shards.is_empty() {
            return Err(Error::config("need at least one worker and one shard"));
        }
        let mut expected = 0;
        for r in &shards {
            if r.start != expected || r.end < r.start {
                return Err(Error::config("shards must be contiguous, ordered and disjoint"));
            }
            expected = r.end;
        }
        if expected != n {
            return Err(Error::config(format!("shards cover {expected} rows, dataset has {n}")));
        }
        Ok(Self { workers, shards })
    }

    pub fn shards(&self) -> &[Range<usize>] {
        &self.shards
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }
}

/// Number of logical CPUs, falling back to 1.
pub fn available_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs per-shard work, either inline or on a dedicated thread pool.
pub struct Executor {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("workers", &self.workers).finish()
    }
}

impl Executor {
    /// One worker, no threads.
    pub fn sequential() -> Self {
        Self {
            workers: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// Pool with `workers` threads. Without the `parallel` feature this is
    /// always sequential.
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::config("worker count must be at least 1"));
        }
        if workers == 1 {
            return Ok(Self::sequential());
        }
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
            Ok(Self {
                workers,
                pool: Some(pool),
            })
        }
        #[cfg(not(feature = "parallel"))]
        {
            log::warn!("built without the `parallel` feature; running {workers} shards sequentially");
            Ok(Self { workers })
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Maps `f(shard_index, rows)` over every shard, returning results in
    /// shard order. The first failing shard (by index) is reported.
    pub fn map_shards<T, F>(&self, plan: &ShardPlan, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, Range<usize>) -> Result<T> + Sync,
    {
        let run = |(i, r): (usize, &Range<usize>)| {
            f(i, r.clone()).map_err(|e| Error::Worker {
                shard: i,
                source: Box::new(e),
            })
        };
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            let results: Vec<Result<T>> =
                pool.install(|| plan.shards().par_iter().enumerate().map(run).collect());
            return results.into_iter().collect();
        }
        plan.shards().iter().enumerate().map(run).collect()
    }
}

/// Computes per-shard statistics concurrently and folds them in ascending
/// shard order.
pub fn map_reduce<S, F>(exec: &Executor, plan: &ShardPlan, estep: F) -> Result<S>
where
    S: SuffStats,
    F: Fn(Range<usize>) -> Result<S> + Sync,
{
    let parts = exec.map_shards(plan, |_, rows| estep(rows))?;
    let mut iter = parts.into_iter();
    let mut acc = iter.next().expect("plan has at least one shard");
    for part in iter {
        acc.combine(&part);
    }
    Ok(acc)
}
