//! Data-parallel execution helpers behind the `parallel` feature.
//!
//! Each helper has identical output with the feature on or off: every item
//! is computed independently from its index, so thread scheduling can never
//! change a result. The `*_seq` variants are always available so benchmarks
//! can compare both paths in one build.

/// Threshold below which the auto helpers stay sequential; per-item work in
/// the hot loops (one conditioned DP solve) is far below rayon's dispatch
/// cost for small batches.
pub const AUTO_PAR_THRESHOLD: usize = 32;

/// Sequential map over `0..n`.
pub fn map_collect_seq<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Map over `0..n`, parallel when the batch is large enough to pay for it.
#[cfg(feature = "parallel")]
pub fn map_collect<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    if n >= AUTO_PAR_THRESHOLD {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Map over `0..n`, parallel when the batch is large enough to pay for it.
#[cfg(not(feature = "parallel"))]
pub fn map_collect<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    map_collect_seq(n, f)
}

/// Map for coarse work items (replica runs, instance sweeps): parallel for
/// any `n > 1` when the feature is on.
#[cfg(feature = "parallel")]
pub fn heavy_map_collect<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    if n > 1 {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Map for coarse work items (replica runs, instance sweeps).
#[cfg(not(feature = "parallel"))]
pub fn heavy_map_collect<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    map_collect_seq(n, f)
}

/// Explicitly parallel map, available only with the feature; benchmarks use
/// this against [`map_collect_seq`].
#[cfg(feature = "parallel")]
pub fn par_map_collect<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_agree() {
        let f = |i: usize| i * i + 1;
        let seq = map_collect_seq(100, f);
        assert_eq!(map_collect(100, f), seq);
        assert_eq!(heavy_map_collect(100, f), seq);
        #[cfg(feature = "parallel")]
        assert_eq!(par_map_collect(100, f), seq);
    }
}
