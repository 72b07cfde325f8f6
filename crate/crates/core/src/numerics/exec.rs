use std::sync::Arc;

use rayon::prelude::*;
use rayon::ThreadPool;

/// Where row-parallel kernels run.
///
/// Every kernel computes each output row with the same sequential code no
/// matter which worker runs it, so pooled results are bitwise equal to the
/// sequential ones.
#[derive(Clone, Default)]
pub struct Exec {
    pool: Option<Arc<ThreadPool>>,
}

impl std::fmt::Debug for Exec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Exec")
            .field("workers", &self.workers())
            .finish()
    }
}

impl Exec {
    pub fn sequential() -> Self {
        Self { pool: None }
    }

    /// A dedicated pool of `workers` threads; `workers <= 1` is sequential.
    pub fn with_workers(workers: usize) -> Self {
        if workers <= 1 {
            return Self::sequential();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("danli-worker-{i}"))
            .build()
            .expect("failed to start worker pool");
        Self {
            pool: Some(Arc::new(pool)),
        }
    }

    pub fn workers(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    /// Fills `out` (row-major, `cols` wide) by calling `f(row_index, row)`.
    pub(crate) fn for_each_row<F>(&self, out: &mut [f64], cols: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        if cols == 0 {
            return;
        }
        match &self.pool {
            Some(pool) if out.len() / cols > 1 => pool.install(|| {
                out.par_chunks_mut(cols)
                    .enumerate()
                    .for_each(|(i, row)| f(i, row))
            }),
            _ => out
                .chunks_mut(cols)
                .enumerate()
                .for_each(|(i, row)| f(i, row)),
        }
    }

    /// Runs two closures, concurrently when a pool is present.
    pub fn join<A, B, RA, RB>(&self, a: A, b: B) -> (RA, RB)
    where
        A: FnOnce() -> RA + Send,
        B: FnOnce() -> RB + Send,
        RA: Send,
        RB: Send,
    {
        match &self.pool {
            Some(pool) => pool.install(|| rayon::join(a, b)),
            None => (a(), b()),
        }
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match &self.pool {
            Some(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            None => items.iter().map(f).collect(),
        }
    }

    /// Calls `f(index, item)` on every element of `items`, preserving order
    /// in the results.
    pub fn map_mut<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(usize, &mut T) -> R + Sync + Send,
    {
        match &self.pool {
            Some(pool) => pool.install(|| {
                items
                    .par_iter_mut()
                    .enumerate()
                    .map(|(i, t)| f(i, t))
                    .collect()
            }),
            None => items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect(),
        }
    }
}
