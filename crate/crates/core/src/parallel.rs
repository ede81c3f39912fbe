//! Worker-pool configuration.

/// Environment variable capping worker parallelism.
pub const THREADS_ENV: &str = "TOKFORGE_THREADS";

/// Sizes the global worker pool from `TOKFORGE_THREADS`, if set.
///
/// Returns the number of threads the pool ends up with. Calling this after
/// the pool has been initialized is harmless; the existing pool is kept.
pub fn init_thread_pool() -> usize {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    rayon::current_num_threads()
}
