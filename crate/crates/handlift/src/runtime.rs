//! Worker-pool configuration.
//!
//! All parallel sections run inside a dedicated rayon pool whose size can be
//! pinned with the `HANDLIFT_THREADS` environment variable. Results are
//! designed to be independent of the worker count (parallel maps are
//! index-ordered and reductions run serially), so the pin exists for
//! benchmarking and for callers who want to bound CPU usage.

use rayon::{ThreadPool, ThreadPoolBuilder};
use std::sync::OnceLock;

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "HANDLIFT_THREADS";

static POOL: OnceLock<ThreadPool> = OnceLock::new();

/// The shared worker pool, built on first use.
pub fn pool() -> &'static ThreadPool {
    POOL.get_or_init(|| {
        let mut builder = ThreadPoolBuilder::new();
        if let Some(n) = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
        {
            builder = builder.num_threads(n);
        }
        builder.build().expect("failed to build worker pool")
    })
}

/// Run `f` inside the shared pool.
pub fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    pool().install(f)
}
