//! Turning simulation output into checks of the limit theorems: regime
//! classification and timescales, goodness-of-fit helpers, and the
//! replicate-level experiments built on the dual and on single lineages.

mod experiments;
mod regime;
mod walker;

pub use experiments::{
    BlockCount, BlockCountPoint, BlockCountRow, BlockCountSide, BlockCountSummary, FirstMerger,
    FirstMergerRow, FirstMergerSummary, PairTime, PairTimeRow, PairTimeSide, PairTimeSummary,
    Status,
};
pub use regime::{predicted_timescale, Growth, LimitCase, Model, RegimeSpec};
pub use walker::{
    uniformization_check, HittingRow, HittingSide, HittingSummary, HittingTime, LineageWalker,
    ShortWindow, ShortWindowRow, ShortWindowSide, ShortWindowSummary, UniformizationReport,
};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::StatsError;
use crate::parallel::{map_indexed, Execution};
use crate::seed::SeedStream;

/// Significance level of every hypothesis test.
pub const SIGNIFICANCE: f64 = 0.001;

/// A replicate-level experiment: independent replicates grouped by torus
/// side, summarised once all rows are in. Rows are what gets persisted, so
/// an interrupted run can resume from the rows already written.
pub trait Experiment: Sync {
    type Row: Send + Clone;
    type Summary;

    /// Number of torus sides (or other groups) in the sweep.
    fn groups(&self) -> usize;
    fn replicate(&self, group: usize, index: usize, seeds: &SeedStream) -> Self::Row;
    /// `rows` are grouped by group and ordered by replicate index.
    fn summarize(&self, rows: &[Self::Row]) -> Self::Summary;

    /// Runs `replicates` replicates in every group.
    fn run(&self, replicates: usize, seeds: &SeedStream, exec: Execution) -> (Vec<Self::Row>, Self::Summary) {
        let total = self.groups() * replicates;
        let rows = map_indexed(exec, 0..total, |k| {
            self.replicate(k / replicates.max(1), k % replicates.max(1), seeds)
        });
        let summary = self.summarize(&rows);
        (rows, summary)
    }
}

/// Outcome of a chi-square goodness-of-fit test after pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Observed and expected counts of the pooled bins.
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
}

/// Pearson's test of `counts` against probabilities `probs`. Adjacent bins
/// are pooled from the right until every expected count is at least 5.
pub fn chi_square(counts: &[usize], probs: &[f64]) -> Result<ChiSquareTest, StatsError> {
    if counts.len() != probs.len() || counts.is_empty() {
        return Err(StatsError::InvalidSetup(
            "counts and probabilities must have the same non-zero length".into(),
        ));
    }
    let n: f64 = counts.iter().sum::<usize>() as f64;
    if n == 0.0 {
        return Err(StatsError::TooFewSamples { needed: 1, got: 0 });
    }
    let total_p: f64 = probs.iter().sum();
    let mut observed = Vec::new();
    let mut expected = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        o += c as f64;
        e += n * p / total_p;
        if e >= 5.0 {
            observed.push(o);
            expected.push(e);
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match (observed.last_mut(), expected.last_mut()) {
            (Some(lo), Some(le)) => {
                *lo += o;
                *le += e;
            }
            _ => {
                observed.push(o);
                expected.push(e);
            }
        }
    }
    let statistic: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(o, e)| if *e > 0.0 { (o - e).powi(2) / e } else { 0.0 })
        .sum();
    let dof = observed.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64)
            .map_err(|e| StatsError::InvalidSetup(e.to_string()))?
            .sf(statistic)
    };
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value,
        observed,
        expected,
    })
}

/// Two-sample Kolmogorov-Smirnov critical value at the 5% level, used as
/// the noise band when comparing KS statistics of independent samples.
pub fn ks_noise_band(n1: usize, n2: usize) -> f64 {
    if n1 == 0 || n2 == 0 {
        return f64::INFINITY;
    }
    1.358 * (1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt()
}

/// Whether `ks` (with sample sizes `n`) never increases by more than the
/// noise band from one entry to the next.
pub fn weakly_decreasing(ks: &[f64], n: &[usize]) -> bool {
    ks.windows(2)
        .zip(n.windows(2))
        .all(|(k, m)| k[1] <= k[0] + ks_noise_band(m[0], m[1]))
}

/// Empirical survival function `P[X > t]` at each `t`.
pub fn survival(samples: &[f64], at: &[f64]) -> Vec<f64> {
    let n = samples.len().max(1) as f64;
    at.iter()
        .map(|&t| samples.iter().filter(|&&x| x > t).count() as f64 / n)
        .collect()
}

/// `p` from `hits` out of `trials`, with the binomial standard deviation
/// evaluated at `reference`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub hits: usize,
    pub trials: usize,
    pub estimate: f64,
    pub reference: f64,
    pub sd: f64,
    /// `|estimate - reference| / sd`.
    pub z: f64,
}

impl Proportion {
    pub fn new(hits: usize, trials: usize, reference: f64) -> Self {
        let estimate = hits as f64 / trials.max(1) as f64;
        let sd = (reference * (1.0 - reference) / trials.max(1) as f64).sqrt();
        let diff = (estimate - reference).abs();
        let z = if sd > 0.0 {
            diff / sd
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Proportion {
            hits,
            trials,
            estimate,
            reference,
            sd,
            z,
        }
    }

    pub fn within(&self, sigmas: f64) -> bool {
        self.z <= sigmas
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_pools_small_bins() {
        let t = chi_square(&[50, 48, 2], &[0.5, 0.49, 0.01]).unwrap();
        assert_eq!(t.observed, vec![50.0, 50.0]);
        assert_eq!(t.dof, 1);
        assert!(t.p_value > 0.5);
        let t = chi_square(&[100, 0], &[0.5, 0.5]).unwrap();
        assert!(t.p_value < 1e-10);
    }

    #[test]
    fn trend_allows_noise() {
        assert!(weakly_decreasing(&[0.2, 0.21, 0.1], &[2000, 2000, 2000]));
        assert!(!weakly_decreasing(&[0.1, 0.3], &[2000, 2000]));
    }
}
