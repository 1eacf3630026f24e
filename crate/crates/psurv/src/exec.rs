//! Execution helpers: data-parallel map with a sequential fallback.
//!
//! All parallelism in this crate flows through [`map_indexed`] so that results
//! are always collected in task-index order. Outputs are therefore bitwise
//! identical whether the `parallel` feature is enabled or not, and regardless
//! of the rayon thread count.

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Chunked deterministic sum: the chunk boundaries and combination order are
/// fixed, so the result does not depend on the thread schedule.
pub fn sum_chunked<F>(n: usize, chunk: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    let partials = map_indexed(n_chunks, |c| {
        let lo = c * chunk;
        let hi = (lo + chunk).min(n);
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        acc
    });
    partials.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
    }

    #[test]
    fn sum_chunked_is_deterministic_and_accurate() {
        let seq: f64 = (0..1000).map(|i| (i as f64).sqrt()).sum();
        let a = sum_chunked(1000, 128, |i| (i as f64).sqrt());
        let b = sum_chunked(1000, 128, |i| (i as f64).sqrt());
        assert_eq!(a, b);
        assert!((a - seq).abs() < 1e-9 * seq.abs());
    }
}
