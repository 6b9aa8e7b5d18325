//! Thread-pool query runner. Results come back in job-index order and every
//! random decision is keyed by job indices, so metrics are bit-identical at
//! any thread count.

use qaspr_core::train::QueryRunner;

pub enum Runner {
    Serial,
    Pool(rayon::ThreadPool),
}

impl Runner {
    /// `threads <= 1` runs on the calling thread.
    pub fn new(threads: usize) -> anyhow::Result<Self> {
        if threads <= 1 {
            Ok(Runner::Serial)
        } else {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
            Ok(Runner::Pool(pool))
        }
    }
}

impl QueryRunner for Runner {
    fn run<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        match self {
            Runner::Serial => (0..n).map(f).collect(),
            Runner::Pool(pool) => pool.install(|| {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }),
        }
    }
}
