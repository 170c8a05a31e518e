//! Batch jackknife error estimates.

use serde::Serialize;

use crate::error::{param, Result};

/// A value with its one-sigma statistical error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// `(value - target) / stderr`; infinite when the error vanishes but the
    /// value does not match.
    pub fn z_score(&self, target: f64) -> f64 {
        z_score(self.value - target, self.stderr)
    }
}

pub fn z_score(deviation: f64, stderr: f64) -> f64 {
    if deviation == 0.0 {
        0.0
    } else if stderr > 0.0 {
        deviation / stderr
    } else {
        f64::INFINITY.copysign(deviation)
    }
}

/// Contiguous batches of per-sample observable vectors.
///
/// Samples are split in index order, so the batch layout depends only on the
/// sample count, not on how the samples were computed.
#[derive(Debug, Clone)]
pub struct Batches {
    dims: usize,
    sums: Vec<Vec<f64>>,
    counts: Vec<usize>,
}

impl Batches {
    /// `data` holds `n` samples of `dims` observables, sample-major.
    pub fn from_flat(data: &[f64], dims: usize, batches: usize) -> Result<Self> {
        assert!(dims > 0 && data.len() % dims == 0);
        let n = data.len() / dims;
        if batches < 2 {
            return Err(param("jackknife needs at least two batches"));
        }
        if n < batches {
            return Err(param(format!("{n} samples cannot fill {batches} batches")));
        }
        let mut sums = vec![vec![0.0; dims]; batches];
        let mut counts = vec![0; batches];
        for k in 0..batches {
            let (lo, hi) = (k * n / batches, (k + 1) * n / batches);
            for s in lo..hi {
                for (acc, x) in sums[k].iter_mut().zip(&data[s * dims..(s + 1) * dims]) {
                    *acc += x;
                }
            }
            counts[k] = hi - lo;
        }
        Ok(Self { dims, sums, counts })
    }

    pub fn num_samples(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn means(&self) -> Vec<f64> {
        let n = self.num_samples() as f64;
        (0..self.dims).map(|d| self.sums.iter().map(|s| s[d]).sum::<f64>() / n).collect()
    }

    /// Jackknife over leave-one-batch-out means of a derived quantity.
    pub fn jackknife<F: Fn(&[f64]) -> f64>(&self, f: F) -> Estimate {
        let nb = self.counts.len();
        let n = self.num_samples();
        let total: Vec<f64> = (0..self.dims).map(|d| self.sums.iter().map(|s| s[d]).sum()).collect();
        let value = f(&total.iter().map(|t| t / n as f64).collect::<Vec<_>>());
        let loo: Vec<f64> = (0..nb)
            .map(|k| {
                let m = (n - self.counts[k]) as f64;
                let means: Vec<f64> = (0..self.dims).map(|d| (total[d] - self.sums[k][d]) / m).collect();
                f(&means)
            })
            .collect();
        let avg = loo.iter().sum::<f64>() / nb as f64;
        let var = loo.iter().map(|x| (x - avg).powi(2)).sum::<f64>() * (nb - 1) as f64 / nb as f64;
        Estimate { value, stderr: var.sqrt() }
    }

    /// Jackknife error of the plain mean of observable `d`.
    pub fn mean_estimate(&self, d: usize) -> Estimate {
        self.jackknife(|m| m[d])
    }
}
