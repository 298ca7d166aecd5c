use rayon::prelude::*;

/// Evaluates `f(0..n)` on a pool of `workers` threads and returns the
/// results in index order. Output never depends on the worker count.
pub fn map_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        // no pool available: sequential evaluation gives the same answer
        Err(_) => (0..n).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_workers() {
        let a = map_indexed(100, 1, |i| i * i);
        let b = map_indexed(100, 4, |i| i * i);
        assert_eq!(a, b);
        assert_eq!(a[7], 49);
    }
}
