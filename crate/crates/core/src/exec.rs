//! Order-preserving map over a batch, parallel or sequential.

/// Executes data-parallel batch work.
///
/// Every method returns results in input order, so callers see identical
/// output whichever variant runs.
pub enum Executor {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel(rayon::ThreadPool),
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Executor::Sequential => write!(f, "Executor::Sequential"),
            #[cfg(feature = "parallel")]
            Executor::Parallel(pool) => write!(f, "Executor::Parallel({})", pool.current_num_threads()),
        }
    }
}

impl Default for Executor {
    fn default() -> Self {
        Executor::Sequential
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Executor::Sequential
    }

    /// A pool with `workers` threads. One worker, or a build without the
    /// `parallel` feature, yields the sequential executor.
    pub fn with_workers(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            if workers > 1 {
                match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                    Ok(pool) => return Executor::Parallel(pool),
                    Err(e) => log::warn!("falling back to sequential execution: {e}"),
                }
            }
        }
        let _ = workers;
        Executor::Sequential
    }

    pub fn workers(&self) -> usize {
        match self {
            Executor::Sequential => 1,
            #[cfg(feature = "parallel")]
            Executor::Parallel(pool) => pool.current_num_threads(),
        }
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Executor::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Executor::Parallel(pool) => {
                use rayon::prelude::*;
                pool.install(|| items.par_iter().map(f).collect())
            }
        }
    }

    pub fn map_range<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            Executor::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Executor::Parallel(pool) => {
                use rayon::prelude::*;
                pool.install(|| (0..n).into_par_iter().map(f).collect())
            }
        }
    }

    /// Fold-and-merge. `merge` must be associative and commutative for the
    /// result to be executor independent.
    pub fn fold<T, A, Id, F, M>(&self, items: &[T], identity: Id, fold: F, merge: M) -> A
    where
        T: Sync,
        A: Send,
        Id: Fn() -> A + Sync + Send,
        F: Fn(A, &T) -> A + Sync + Send,
        M: Fn(A, A) -> A + Sync + Send,
    {
        #[cfg(not(feature = "parallel"))]
        let _ = merge;
        match self {
            Executor::Sequential => items.iter().fold(identity(), fold),
            #[cfg(feature = "parallel")]
            Executor::Parallel(pool) => {
                use rayon::prelude::*;
                pool.install(|| items.par_iter().fold(&identity, &fold).reduce(&identity, &merge))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        for exec in [Executor::sequential(), Executor::with_workers(4)] {
            let out = exec.map(&items, |x| x * 2);
            assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
            assert_eq!(exec.map_range(5, |i| i), vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn fold_matches_sequential() {
        let items: Vec<u64> = (1..=500).collect();
        let seq = Executor::sequential().fold(&items, || 0u64, |a, x| a + x, |a, b| a + b);
        let par = Executor::with_workers(8).fold(&items, || 0u64, |a, x| a + x, |a, b| a + b);
        assert_eq!(seq, 125250);
        assert_eq!(seq, par);
    }
}
