use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Default worker count: available parallelism, 1 on targets without threads.
pub fn default_threads() -> usize {
    if cfg!(target_family = "wasm") {
        1
    } else {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    }
}

/// Evaluates `f(0..n)` on at most `threads` workers and returns the results
/// in index order. Items are claimed from a shared counter.
pub fn map_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = threads.max(1).min(n);
    if workers <= 1 || cfg!(target_family = "wasm") {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = f(i);
                slots.lock().expect("worker slot lock")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker slot lock")
        .into_iter()
        .map(|v| v.expect("every item evaluated"))
        .collect()
}
