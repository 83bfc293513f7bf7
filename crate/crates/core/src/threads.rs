//! Worker pool sized by the `ADL_THREADS` environment variable.

use std::sync::OnceLock;

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Thread count from `ADL_THREADS`, or all available cores.
pub fn thread_count() -> usize {
    std::env::var("ADL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs `f` inside the shared pool.
pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(thread_count())
            .build()
            .expect("thread pool")
    })
    .install(f)
}
