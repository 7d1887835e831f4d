//! Data-parallel execution helpers.
//!
//! Every parallel kernel in the crate goes through these functions so the
//! sequential and parallel paths produce identical results. Maps preserve
//! input order, and reductions are evaluated over fixed-size chunks whose
//! partial results are combined in chunk order, so floating point sums do not
//! depend on the number of worker threads.
//!
//! With the `parallel` feature disabled, [`Execution::Parallel`] silently
//! runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of items per partial sum in [`Execution::chunked_sum`].
pub const REDUCTION_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    pub fn map_range<R, F>(self, len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..len).into_par_iter().map(f).collect(),
            _ => (0..len).map(f).collect(),
        }
    }

    /// Sums `f(i)` for `i in 0..len` into a vector accumulator of width
    /// `width`. Partial sums are formed over [`REDUCTION_CHUNK`]-sized ranges
    /// and added in order, so the result is independent of thread count.
    pub fn chunked_sum<F>(self, len: usize, width: usize, f: F) -> Vec<f64>
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        let chunks = len.div_ceil(REDUCTION_CHUNK);
        let partial = |chunk: usize| {
            let mut acc = vec![0.0; width];
            let start = chunk * REDUCTION_CHUNK;
            let end = (start + REDUCTION_CHUNK).min(len);
            for i in start..end {
                f(i, &mut acc);
            }
            acc
        };
        let partials = self.map_range(chunks, partial);
        let mut total = vec![0.0; width];
        for p in partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_parallel_agree() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64).sin()).collect();
        let a = Execution::Sequential.map(&xs, |x| x * 2.0);
        let b = Execution::Parallel.map(&xs, |x| x * 2.0);
        assert_eq!(a, b);

        let s = Execution::Sequential.chunked_sum(xs.len(), 2, |i, acc| {
            acc[0] += xs[i];
            acc[1] += xs[i] * xs[i];
        });
        let p = Execution::Parallel.chunked_sum(xs.len(), 2, |i, acc| {
            acc[0] += xs[i];
            acc[1] += xs[i] * xs[i];
        });
        assert_eq!(s, p);
    }

    #[test]
    fn empty_sum_is_zero() {
        let s = Execution::default().chunked_sum(0, 3, |_, _| unreachable!());
        assert_eq!(s, vec![0.0; 3]);
    }
}
