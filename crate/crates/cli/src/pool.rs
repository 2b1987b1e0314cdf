//! Thread-pool executor.

use branchflow_core::Executor;
use rayon::prelude::*;

/// Rayon pool with a fixed worker count. Results come back in index order,
/// so output never depends on the number of workers.
pub struct Pool {
    inner: rayon::ThreadPool,
    threads: usize,
}

impl Pool {
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let threads = threads.max(1);
        let inner = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(Self { inner, threads })
    }

    pub fn threads(&self) -> usize {
        self.threads
    }
}

impl Executor for Pool {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.inner.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

/// `--threads`, then the config value, then the machine's parallelism.
pub fn resolve_threads(flag: Option<usize>, config: Option<usize>) -> usize {
    flag.or(config)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let pool = Pool::new(4).unwrap();
        assert_eq!(pool.map_indexed(1000, |i| i * 2), (0..1000).map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn flag_beats_config() {
        assert_eq!(resolve_threads(Some(3), Some(5)), 3);
        assert_eq!(resolve_threads(None, Some(5)), 5);
        assert!(resolve_threads(None, None) >= 1);
    }
}
