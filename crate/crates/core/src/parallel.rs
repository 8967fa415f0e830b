//! Deterministic data-parallel helpers.
//!
//! Every parallel reduction in this crate goes through [`map_reduce_chunks`]:
//! the index range is split into fixed-size chunks, each chunk is mapped to a
//! partial value, and the partials are combined left to right in chunk order.
//! Because the chunk boundaries and the combine order are independent of the
//! worker count, results are bit-identical whether the work runs on one
//! thread, on a rayon pool of any size, or with the `parallel` feature
//! disabled entirely.

/// Chunk length used by all deterministic reductions. Small enough to expose
/// parallelism on desk-scale workloads, large enough to amortise dispatch.
pub const CHUNK: usize = 4096;

/// Split `0..n` into `CHUNK`-sized pieces, map each piece to a partial result
/// and fold the partials in chunk order.
///
/// `map` receives the half-open index range of one chunk and must be a pure
/// function of that range. `fold` combines partials and is applied
/// left-to-right, so it need not be commutative.
pub fn map_reduce_chunks<T, M, F>(n: usize, map: M, fold: F) -> Option<T>
where
    T: Send,
    M: Fn(std::ops::Range<usize>) -> T + Sync + Send,
    F: Fn(T, T) -> T,
{
    let partials = map_chunks(n, map);
    partials.into_iter().reduce(fold)
}

/// Map every `CHUNK`-sized piece of `0..n` to a value and return the values in
/// chunk order. Parallel when the `parallel` feature is enabled, sequential
/// otherwise; the output is identical either way.
pub fn map_chunks<T, M>(n: usize, map: M) -> Vec<T>
where
    T: Send,
    M: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let ranges: Vec<_> = chunk_ranges(n).collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ranges.into_par_iter().map(map).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(map).collect()
    }
}

/// Sequential reference implementation of [`map_chunks`]; used by the bench
/// suite to compare the parallel lane against plain iteration.
pub fn map_chunks_seq<T, M>(n: usize, map: M) -> Vec<T>
where
    M: Fn(std::ops::Range<usize>) -> T,
{
    chunk_ranges(n).map(map).collect()
}

fn chunk_ranges(n: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n.div_ceil(CHUNK)).map(move |c| {
        let lo = c * CHUNK;
        lo..(lo + CHUNK).min(n)
    })
}

/// Pin the worker-pool size. With the `parallel` feature this builds the
/// global rayon pool, so it must run before any parallel work and at most
/// once per process. Without the feature, only `n = 1` is accepted. Results
/// never depend on the pool size either way.
pub fn set_thread_count(n: usize) -> Result<(), String> {
    if n == 0 {
        return Err("thread count must be at least 1".into());
    }
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        if n == 1 {
            Ok(())
        } else {
            Err("built without the `parallel` feature; only --threads 1 is available".into())
        }
    }
}

/// Streaming mean/variance accumulator that merges exactly like Chan's
/// parallel update, so chunked accumulation is deterministic and numerically
/// stable.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanVar {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanVar {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(self, other: MeanVar) -> MeanVar {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        MeanVar { n, mean, m2 }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (divides by n-1).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

/// Deterministic chunked mean/variance of `f(i)` over `0..n`.
pub fn mean_var_over<F>(n: usize, f: F) -> MeanVar
where
    F: Fn(usize) -> f64 + Sync,
{
    map_reduce_chunks(
        n,
        |range| {
            let mut acc = MeanVar::default();
            for i in range {
                acc.push(f(i));
            }
            acc
        },
        MeanVar::merge,
    )
    .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn chunked_and_sequential_reductions_agree_bitwise() {
        let n = 3 * CHUNK + 17;
        let f = |i: usize| ((i as f64) * 0.7).sin();
        let par = mean_var_over(n, f);
        let seq = map_chunks_seq(n, |range| {
            let mut acc = MeanVar::default();
            for i in range {
                acc.push(f(i));
            }
            acc
        })
        .into_iter()
        .reduce(MeanVar::merge)
        .unwrap();
        assert_eq!(par.mean().to_bits(), seq.mean().to_bits());
        assert_eq!(par.variance().to_bits(), seq.variance().to_bits());
        assert_eq!(par.count(), seq.count());
    }

    #[test]
    fn mean_var_matches_direct_formulas() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).cos()).collect();
        let mut acc = MeanVar::default();
        for &x in &xs {
            acc.push(x);
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert_relative_eq!(acc.mean(), mean, max_relative = 1e-12);
        assert_relative_eq!(acc.variance(), var, max_relative = 1e-12);
    }

    #[test]
    fn empty_input_is_well_defined() {
        let acc = mean_var_over(0, |_| 1.0);
        assert_eq!(acc.count(), 0);
        assert!(acc.variance().is_nan());
    }
}
