//! Direct samplers for the limiting coalescents: Kingman's coalescent, the
//! multiple-merger coalescent driven by large events on `T(1)`, and its
//! spatial version with Brownian labels.

use std::f64::consts::FRAC_1_SQRT_2;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::coalescent::record::Tracker;
use crate::coalescent::{GenealogyRecord, LabelledPartition, MergeEvent};
use crate::error::{LawError, SimError, StatsError};
use crate::event::{binomial, lambda_beta_c_rate, ClassLaw, EventClass};
use crate::sampling::RadiusSampler;
use crate::torus::{Point, Torus};

/// One event of an unlabelled coalescent path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEvent {
    pub time: f64,
    /// Blocks marked by the event, before it. Fewer than two sets means the
    /// partition did not change.
    pub merged: Vec<Vec<usize>>,
}

/// A path of an unlabelled partition-valued coalescent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPath {
    pub n: usize,
    pub events: Vec<PathEvent>,
    pub end_time: f64,
}

impl PartitionPath {
    /// Partition just after time `t`.
    pub fn partition_at(&self, t: f64) -> Vec<Vec<usize>> {
        let mut blocks: Vec<Vec<usize>> = (0..self.n).map(|i| vec![i]).collect();
        for e in self.events.iter().take_while(|e| e.time <= t) {
            if e.merged.len() >= 2 {
                apply_merge(&mut blocks, &e.merged);
            }
        }
        blocks
    }

    pub fn block_count_at(&self, t: f64) -> usize {
        self.n + 1
            - self
                .events
                .iter()
                .take_while(|e| e.time <= t)
                .filter(|e| e.merged.len() >= 2)
                .map(|e| e.merged.len())
                .fold(1, |acc, k| acc + k - 1)
    }

    /// The first event that merged blocks.
    pub fn first_merger(&self) -> Option<&PathEvent> {
        self.events.iter().find(|e| e.merged.len() >= 2)
    }

    /// Time at which one block remained.
    pub fn mrca_time(&self) -> Option<f64> {
        if self.n == 1 {
            return Some(0.0);
        }
        let mut k = self.n;
        for e in &self.events {
            if e.merged.len() >= 2 {
                k -= e.merged.len() - 1;
                if k == 1 {
                    return Some(e.time);
                }
            }
        }
        None
    }
}

fn apply_merge(blocks: &mut Vec<Vec<usize>>, merged: &[Vec<usize>]) {
    let mut union: Vec<usize> = merged.iter().flatten().copied().collect();
    union.sort_unstable();
    blocks.retain(|b| !merged.contains(b));
    let at = blocks.partition_point(|b| b[0] < union[0]);
    blocks.insert(at, union);
}

fn merge_positions(blocks: &mut Vec<Vec<usize>>, positions: &[usize]) -> Vec<Vec<usize>> {
    let merged: Vec<Vec<usize>> = positions.iter().map(|&p| blocks[p].clone()).collect();
    apply_merge(blocks, &merged);
    merged
}

/// Kingman's coalescent with pair rate `rate`, run to `horizon` or to a
/// single block.
pub fn sample_kingman<R: Rng + ?Sized>(
    n: usize,
    rate: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<PartitionPath, SimError> {
    if n == 0 {
        return Err(SimError::Sample("sample size must be at least 1".into()));
    }
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(SimError::InvalidOption(format!("pair rate must be non-negative, got {rate}")));
    }
    let mut blocks: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut events = Vec::new();
    let mut t = 0.0;
    while blocks.len() >= 2 {
        let k = blocks.len() as f64;
        let total = rate * k * (k - 1.0) / 2.0;
        if total == 0.0 {
            if horizon.is_finite() {
                t = horizon;
                break;
            }
            return Err(SimError::NonCoalescing);
        }
        let e: f64 = Exp1.sample(rng);
        if t + e / total > horizon {
            t = horizon;
            break;
        }
        t += e / total;
        let mut pair = sample_indices(rng, blocks.len(), 2).into_vec();
        pair.sort_unstable();
        let merged = merge_positions(&mut blocks, &pair);
        events.push(PathEvent { time: t, merged });
    }
    Ok(PartitionPath {
        n,
        events,
        end_time: t,
    })
}

/// Ball volume `V_{cr}` on `T(1)`.
fn unit_volume(c: f64, r: f64) -> f64 {
    let unit = Torus::new(1.0).expect("unit side");
    unit.ball_volume((c * r).min(FRAC_1_SQRT_2)).expect("capped radius")
}

fn check_large(c: f64, large: &ClassLaw) -> Result<f64, LawError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(LawError::InvalidPsi(c));
    }
    let mass = large.total_mass();
    if !mass.is_finite() {
        return Err(LawError::InvalidRadiusMeasure(
            "large-event radius measure must have finite mass".into(),
        ));
    }
    if c * large.sup_radius() > FRAC_1_SQRT_2 * (1.0 + 1e-12) {
        return Err(LawError::UnsupportedLimitRadius {
            radius: large.sup_radius(),
            c,
        });
    }
    Ok(mass)
}

/// The coalescent in which pairs merge at rate `beta` and, at total rate
/// `c^{-2} μ^B`-mass, a large event marks every block with probability
/// `V_{cr} u` and merges the marked blocks.
pub fn sample_lambda_beta_c<R: Rng + ?Sized>(
    n: usize,
    c: f64,
    beta: f64,
    large: &ClassLaw,
    horizon: f64,
    rng: &mut R,
) -> Result<PartitionPath, SimError> {
    if n == 0 {
        return Err(SimError::Sample("sample size must be at least 1".into()));
    }
    let mass = check_large(c, large)?;
    let event_rate = mass / (c * c);
    let sampler = RadiusSampler::new(&large.radii, |_| 1.0, &[]);
    let can_merge = beta > 0.0 || large.lambda_mass() > 0.0;
    let mut blocks: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut events = Vec::new();
    let mut t = 0.0;
    loop {
        if blocks.len() < 2 && !horizon.is_finite() {
            break;
        }
        if !can_merge && !horizon.is_finite() {
            return Err(SimError::NonCoalescing);
        }
        let k = blocks.len() as f64;
        let kingman = beta * k * (k - 1.0) / 2.0;
        let total = event_rate + kingman;
        if total == 0.0 {
            t = horizon;
            break;
        }
        let e: f64 = Exp1.sample(rng);
        if t + e / total > horizon {
            t = horizon;
            break;
        }
        t += e / total;
        if rng.random::<f64>() * total < kingman {
            let mut pair = sample_indices(rng, blocks.len(), 2).into_vec();
            pair.sort_unstable();
            let merged = merge_positions(&mut blocks, &pair);
            events.push(PathEvent { time: t, merged });
        } else {
            let r = sampler.sample(rng);
            let u = large.impact.at(r).sample(rng);
            let p = unit_volume(c, r) * u;
            let marked: Vec<usize> = (0..blocks.len())
                .filter(|_| rng.random::<f64>() < p)
                .collect();
            let merged = if marked.len() >= 2 {
                merge_positions(&mut blocks, &marked)
            } else {
                marked.iter().map(|&i| blocks[i].clone()).collect()
            };
            events.push(PathEvent { time: t, merged });
        }
    }
    Ok(PartitionPath {
        n,
        events,
        end_time: t,
    })
}

/// Labelled limit on `T(1)`: labels follow independent Brownian motions with
/// per-coordinate variance `b σ_s²` per unit time, and large events at
/// total rate `c^{-2}` mass affect each covered label with probability `u`;
/// affected blocks, even a single one, merge at a uniform point of the ball.
#[allow(clippy::too_many_arguments)]
pub fn sample_spatial_limit<R: Rng + ?Sized>(
    x: &[Point],
    b: f64,
    c: f64,
    large: &ClassLaw,
    sigma_s2: f64,
    horizon: f64,
    record_events: bool,
    rng: &mut R,
) -> Result<GenealogyRecord, SimError> {
    if x.is_empty() {
        return Err(SimError::Sample("sample size must be at least 1".into()));
    }
    let unit = Torus::new(1.0)?;
    if let Some(p) = x.iter().find(|p| !unit.is_canonical(**p)) {
        return Err(SimError::Sample(format!("label ({}, {}) is not on T(1)", p.x, p.y)));
    }
    if !(b >= 0.0 && sigma_s2 >= 0.0) {
        return Err(SimError::InvalidOption("b and σ_s² must be non-negative".into()));
    }
    let mass = check_large(c, large)?;
    let event_rate = mass / (c * c);
    if !horizon.is_finite() && large.lambda_mass() == 0.0 && x.len() > 1 {
        return Err(SimError::NonCoalescing);
    }
    let sampler = RadiusSampler::new(&large.radii, |_| 1.0, &[]);
    let sd_rate = (b * sigma_s2).sqrt();

    let initial = LabelledPartition::singletons(x);
    let mut state = initial.clone();
    let mut tracker = Tracker::new(&unit, &state, true, &[]);
    let mut events = record_events.then(Vec::new);
    let mut t = 0.0;

    let diffuse = |state: &mut LabelledPartition, dt: f64, rng: &mut R| {
        if sd_rate == 0.0 || dt == 0.0 {
            return;
        }
        let s = sd_rate * dt.sqrt();
        for i in 0..state.len() {
            let p = state.blocks()[i].label;
            let dx: f64 = StandardNormal.sample(rng);
            let dy: f64 = StandardNormal.sample(rng);
            state.set_label(i, unit.canonical(p.x + s * dx, p.y + s * dy));
        }
    };

    loop {
        if state.len() == 1 && !horizon.is_finite() {
            break;
        }
        let dt = if event_rate > 0.0 {
            let e: f64 = Exp1.sample(rng);
            e / event_rate
        } else {
            f64::INFINITY
        };
        if t + dt > horizon {
            diffuse(&mut state, horizon - t, rng);
            t = horizon;
            break;
        }
        diffuse(&mut state, dt, rng);
        t += dt;
        let r = sampler.sample(rng);
        let radius = (c * r).min(FRAC_1_SQRT_2);
        let u = large.impact.at(r).sample(rng);
        let center = unit.uniform_point(rng);
        let r2 = radius * radius;
        let affected: Vec<usize> = state
            .blocks()
            .iter()
            .enumerate()
            .filter(|(_, blk)| unit.distance_sq(center, blk.label) <= r2)
            .filter(|_| rng.random::<f64>() < u)
            .map(|(i, _)| i)
            .collect();
        if affected.is_empty() {
            continue;
        }
        let label = unit.uniform_in_ball(center, radius, rng)?;
        let merged: Vec<Vec<usize>> = affected
            .iter()
            .map(|&i| state.blocks()[i].members.clone())
            .collect();
        state.merge(&affected, label);
        let ev = MergeEvent {
            time: t,
            class: EventClass::Large,
            radius,
            center,
            merged,
            label,
        };
        tracker.observe(&unit, &state, &ev);
        if let Some(list) = &mut events {
            list.push(ev);
        }
    }
    Ok(tracker.finish(1.0, initial, events, state, t))
}

/// Kolmogorov-Smirnov distance between the empirical law of `samples` and
/// Exp(1).
pub fn ks_exponential(samples: &[f64]) -> Result<f64, StatsError> {
    ks_statistic(samples, |x| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() })
}

/// Kolmogorov-Smirnov distance to a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::TooFewSamples { needed: 1, got: 0 });
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max))
}

/// The block-counting chain of an exchangeable coalescent: from `m` blocks,
/// a given set of `k` blocks merges at rate `rate(m, k)`.
#[derive(Debug, Clone)]
pub struct BlockCountChain {
    n: usize,
    /// `out[m][k]`: rate of going from `m` to `m - k + 1` blocks.
    out: Vec<Vec<f64>>,
}

impl BlockCountChain {
    pub fn new<F: FnMut(usize, usize) -> f64>(n: usize, mut rate: F) -> Self {
        let mut out = vec![Vec::new(); n + 1];
        for (m, row) in out.iter_mut().enumerate().skip(2) {
            *row = (0..=m)
                .map(|k| if k < 2 { 0.0 } else { binomial(m, k) * rate(m, k) })
                .collect();
        }
        BlockCountChain { n, out }
    }

    /// Kingman's coalescent, pair rate 1.
    pub fn kingman(n: usize) -> Self {
        Self::new(n, |_, k| if k == 2 { 1.0 } else { 0.0 })
    }

    /// The coalescent with rates `λ^{(β,c)}_{m,k}`.
    pub fn lambda_beta_c(n: usize, c: f64, beta: f64, large: &ClassLaw) -> Result<Self, LawError> {
        let mut err = None;
        let chain = Self::new(n, |m, k| {
            lambda_beta_c_rate(m, k, c, beta, large).unwrap_or_else(|e| {
                err = Some(e);
                0.0
            })
        });
        err.map_or(Ok(chain), Err)
    }

    /// Total rate of leaving state `m`.
    pub fn exit_rate(&self, m: usize) -> f64 {
        self.out.get(m).map_or(0.0, |r| r.iter().sum())
    }

    /// `P[#blocks = j at time t]` for `j = 0..=n`, starting from `n` blocks,
    /// by uniformisation.
    pub fn distribution(&self, t: f64) -> Vec<f64> {
        let n = self.n;
        let mut p = vec![0.0; n + 1];
        p[n] = 1.0;
        let lam = (2..=n).map(|m| self.exit_rate(m)).fold(0.0, f64::max);
        if t <= 0.0 || lam == 0.0 {
            return p;
        }
        let x = lam * t;
        let mut acc = vec![0.0; n + 1];
        // Poisson weights in logs so that large λt does not underflow
        let mut log_weight = -x;
        let last = (x + 12.0 * x.sqrt() + 30.0).ceil() as u64;
        for j in 0..=last {
            let weight = log_weight.exp();
            for (a, v) in acc.iter_mut().zip(&p) {
                *a += weight * v;
            }
            let mut next = vec![0.0; n + 1];
            for m in 1..=n {
                if p[m] == 0.0 {
                    continue;
                }
                let mut stay = 1.0;
                for k in 2..=m {
                    let q = self.out[m][k] / lam;
                    next[m - k + 1] += p[m] * q;
                    stay -= q;
                }
                next[m] += p[m] * stay;
            }
            p = next;
            log_weight += x.ln() - ((j + 1) as f64).ln();
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_zeros_is_one() {
        assert_eq!(ks_exponential(&[0.0; 20]).unwrap(), 1.0);
        assert!(ks_exponential(&[]).is_err());
    }

    #[test]
    fn kingman_chain_matches_closed_form() {
        let d = BlockCountChain::kingman(4).distribution(0.3);
        assert!((d[4] - (-1.8f64).exp()).abs() < 1e-12);
        let two = BlockCountChain::kingman(2).distribution(0.7);
        assert!((two[2] - (-0.7f64).exp()).abs() < 1e-12);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
