//! Data-parallel helpers with a sequential fallback.
//!
//! Work is split into fixed index ranges whose partial results are combined
//! in index order, so the output is bit-identical whichever mode runs and
//! however many worker threads rayon uses.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used when reducing over large index spaces.
pub const REDUCE_CHUNK: usize = 512;

/// Execution mode for the data-parallel loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise runs sequentially.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Evaluates `f(0..n)` and returns the results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Splits `0..n` into consecutive ranges of `chunk` indices and maps each one.
    pub fn map_chunks<T, F>(self, n: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync + Send,
    {
        let chunk = chunk.max(1);
        let count = n.div_ceil(chunk);
        self.map(count, |c| {
            let start = c * chunk;
            f(start..(start + chunk).min(n))
        })
    }
}

/// Pairwise (cascade) summation in fixed index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise reduction of equal-length vectors by coordinate-wise addition.
pub fn pairwise_vec_sum(parts: &[Vec<f64>], len: usize) -> Vec<f64> {
    match parts.len() {
        0 => vec![0.0; len],
        1 => parts[0].clone(),
        n => {
            let mut left = pairwise_vec_sum(&parts[..n / 2], len);
            let right = pairwise_vec_sum(&parts[n / 2..], len);
            for (l, r) in left.iter_mut().zip(&right) {
                *l += r;
            }
            left
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_bitwise() {
        let f = |i: usize| ((i as f64) * 0.37).sin();
        let seq = Exec::Sequential.map(10_000, f);
        let par = Exec::Parallel.map(10_000, f);
        assert_eq!(seq, par);

        let sums = |e: Exec| {
            let parts = e.map_chunks(10_000, REDUCE_CHUNK, |r| {
                let v: Vec<f64> = r.map(f).collect();
                pairwise_sum(&v)
            });
            pairwise_sum(&parts)
        };
        assert_eq!(sums(Exec::Sequential).to_bits(), sums(Exec::Parallel).to_bits());
    }

    #[test]
    fn chunk_ranges_cover_everything() {
        let ranges = Exec::Sequential.map_chunks(10, 4, |r| r);
        assert_eq!(ranges, vec![0..4, 4..8, 8..10]);
        assert!(Exec::Sequential.map_chunks(0, 4, |r| r).is_empty());
    }

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 5050.0);
        let parts = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        assert_eq!(pairwise_vec_sum(&parts, 2), vec![9.0, 12.0]);
    }
}
