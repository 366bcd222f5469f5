use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::experiments::Status;
use super::regime::{Growth, Model};
use super::{weakly_decreasing, Experiment, Proportion};
use crate::error::{SimError, StatsError};
use crate::event::{dispersal_variance, EventClass, EventLaw};
use crate::limit::ks_exponential;
use crate::parallel::{map_indexed, Execution};
use crate::sampling::RadiusSampler;
use crate::seed::{experiment_id, SeedStream, SimRng};
use crate::torus::{Point, Torus};

/// The compound Poisson motion of a single lineage.
#[derive(Debug)]
pub struct LineageWalker {
    torus: Torus,
    /// `(rate, radius scale, radius sampler)` per active class.
    parts: Vec<(f64, f64, RadiusSampler)>,
    rate: f64,
    variance: f64,
}

impl LineageWalker {
    pub fn new(law: &EventLaw, torus: Torus) -> Result<Self, SimError> {
        let cap = torus.max_radius();
        if law.max_event_radius() > cap * (1.0 + 1e-12) {
            return Err(SimError::InvalidOption(format!(
                "event radius {} exceeds the torus maximum {cap}",
                law.max_event_radius()
            )));
        }
        let mut parts = Vec::new();
        let mut variance = 0.0;
        for class in EventClass::ALL {
            let Some(cl) = law.class(class) else { continue };
            let scale = law.radius_scale(class);
            let kernel = cl.impact.clone();
            let breaks: Vec<f64> = kernel.breakpoints().collect();
            let sampler = RadiusSampler::new(
                &cl.radii,
                move |r| torus.ball_volume_unchecked((scale * r).min(cap)) * kernel.at(r).mean(),
                &breaks,
            );
            let rate = sampler.total() / law.rate_divisor(class);
            variance += match class {
                EventClass::Small => dispersal_variance(law, class),
                EventClass::Large => dispersal_variance(law, class) * law.psi * law.psi / law.rho,
            };
            if rate > 0.0 {
                parts.push((rate, scale, sampler));
            }
        }
        let rate = parts.iter().map(|p| p.0).sum();
        Ok(LineageWalker {
            torus,
            parts,
            rate,
            variance,
        })
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    /// Total jump rate.
    pub fn jump_rate(&self) -> f64 {
        self.rate
    }

    /// Per-coordinate displacement variance per unit time, `σ_s² + σ_B² ψ²/ρ`.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Position after one jump from `at`.
    pub fn jump<R: Rng + ?Sized>(&self, at: Point, rng: &mut R) -> Point {
        let mut x = rng.random::<f64>() * self.rate;
        let mut pick = &self.parts[self.parts.len() - 1];
        for p in &self.parts {
            if x < p.0 {
                pick = p;
                break;
            }
            x -= p.0;
        }
        let (_, scale, sampler) = pick;
        let radius = (scale * sampler.sample(rng)).min(self.torus.max_radius());
        let center = self.torus.uniform_in_ball_unchecked(at, radius, rng);
        self.torus.uniform_in_ball_unchecked(center, radius, rng)
    }

    /// First time the walker from `start` is strictly within `radius` of the
    /// origin, if that happens by `until`. `Err` when `max_jumps` is hit.
    pub fn entrance_time<R: Rng + ?Sized>(
        &self,
        start: Point,
        radius: f64,
        until: f64,
        max_jumps: u64,
        rng: &mut R,
    ) -> Result<Option<f64>, SimError> {
        let r2 = radius * radius;
        let inside = |p: Point| self.torus.distance_sq(p, Point::ORIGIN) < r2;
        if inside(start) {
            return Ok(Some(0.0));
        }
        if self.rate == 0.0 {
            return if until.is_finite() {
                Ok(None)
            } else {
                Err(SimError::NonCoalescing)
            };
        }
        let mut t = 0.0;
        let mut p = start;
        for _ in 0..max_jumps {
            let e: f64 = Exp1.sample(rng);
            t += e / self.rate;
            if t > until {
                return Ok(None);
            }
            p = self.jump(p, rng);
            if inside(p) {
                return Ok(Some(t));
            }
        }
        Err(SimError::Timeout {
            time: t,
            events: max_jumps,
            blocks: 1,
        })
    }

    /// Position at time `t`.
    pub fn position_at<R: Rng + ?Sized>(&self, start: Point, t: f64, rng: &mut R) -> Point {
        let mut p = start;
        if self.rate == 0.0 {
            return p;
        }
        let mut s = 0.0;
        loop {
            let e: f64 = Exp1.sample(rng);
            s += e / self.rate;
            if s > t {
                return p;
            }
            p = self.jump(p, rng);
        }
    }
}

/// `|x| ≥ L / ln L`.
fn in_far_region(torus: &Torus, p: Point) -> bool {
    let d = torus.side() / torus.side().ln();
    torus.distance_sq(p, Point::ORIGIN) >= d * d
}

/// Uniform point of `{x : |x| ≥ L / ln L}`.
fn far_start<R: Rng + ?Sized>(torus: &Torus, rng: &mut R) -> Point {
    loop {
        let p = torus.uniform_point(rng);
        if in_far_region(torus, p) {
            return p;
        }
    }
}

fn walker_rng(seeds: &SeedStream, side: f64, index: usize) -> SimRng {
    seeds
        .child(side.to_bits())
        .rng(experiment_id("lineage"), index as u64)
}

fn check_sides(sides: &[f64]) -> Result<(), StatsError> {
    if sides.is_empty() {
        return Err(StatsError::InvalidSetup("no torus sides given".into()));
    }
    if let Some(s) = sides.iter().find(|s| !(**s > 1.0 && s.is_finite())) {
        return Err(StatsError::InvalidSetup(format!("torus side must exceed 1, got {s}")));
    }
    Ok(())
}

fn start_for(torus: &Torus, start: Option<Point>) -> Result<(), StatsError> {
    if let Some(p) = start {
        if !torus.is_canonical(p) || !in_far_region(torus, p) {
            return Err(StatsError::InvalidSetup(format!(
                "start ({}, {}) must satisfy |x| >= L / ln L",
                p.x, p.y
            )));
        }
    }
    Ok(())
}

struct WalkerSide {
    side: f64,
    walker: LineageWalker,
    radius: f64,
    timescale: f64,
}

/// Entrance time of one lineage into `B(0, d_L)`, rescaled by
/// `(1-γ) L² log L / (π σ²)`.
pub struct HittingTime {
    gamma: f64,
    start: Option<Point>,
    max_jumps: u64,
    runs: Vec<WalkerSide>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingRow {
    pub side: f64,
    pub replicate: usize,
    pub status: Status,
    pub start_x: f64,
    pub start_y: f64,
    pub time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingSide {
    pub side: f64,
    pub radius: f64,
    pub sigma2: f64,
    pub timescale: f64,
    pub completed: usize,
    pub ks: Option<f64>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingSummary {
    pub gamma: f64,
    pub sides: Vec<HittingSide>,
    pub trend: bool,
}

impl HittingTime {
    /// `target` is `d_L`; `γ = lim log⁺ d_L / log L` must be below 1.
    pub fn new(
        model: &Model,
        sides: &[f64],
        target: Growth,
        start: Option<Point>,
        max_jumps: u64,
    ) -> Result<Self, StatsError> {
        check_sides(sides)?;
        let gamma = target.power.max(0.0);
        if gamma >= 1.0 || target.scale <= 0.0 {
            return Err(StatsError::InvalidSetup(
                "target radius must be positive with log d_L / log L below 1".into(),
            ));
        }
        let runs = sides
            .iter()
            .map(|&side| {
                let torus = Torus::new(side)?;
                start_for(&torus, start)?;
                let walker = LineageWalker::new(&model.law_at(side)?, torus)?;
                let radius = target.at(side);
                if radius >= side / side.ln() {
                    return Err(StatsError::InvalidSetup(format!(
                        "target radius {radius} reaches the start region on side {side}"
                    )));
                }
                let sigma2 = walker.variance();
                if sigma2 <= 0.0 {
                    return Err(SimError::NonCoalescing.into());
                }
                let timescale = (1.0 - gamma) * side * side * side.ln() / (PI * sigma2);
                Ok(WalkerSide {
                    side,
                    walker,
                    radius,
                    timescale,
                })
            })
            .collect::<Result<_, StatsError>>()?;
        Ok(HittingTime {
            gamma,
            start,
            max_jumps,
            runs,
        })
    }
}

impl Experiment for HittingTime {
    type Row = HittingRow;
    type Summary = HittingSummary;

    fn groups(&self) -> usize {
        self.runs.len()
    }

    fn replicate(&self, group: usize, index: usize, seeds: &SeedStream) -> HittingRow {
        let run = &self.runs[group];
        let mut rng = walker_rng(seeds, run.side, index);
        let torus = run.walker.torus();
        let start = self.start.unwrap_or_else(|| far_start(&torus, &mut rng));
        let r = run
            .walker
            .entrance_time(start, run.radius, f64::INFINITY, self.max_jumps, &mut rng);
        let (status, time) = match r {
            Ok(t) => (Status::Ok, t),
            Err(SimError::Timeout { .. }) => (Status::Timeout, None),
            Err(_) => (Status::Failed, None),
        };
        HittingRow {
            side: run.side,
            replicate: index,
            status,
            start_x: start.x,
            start_y: start.y,
            time,
        }
    }

    fn summarize(&self, rows: &[HittingRow]) -> HittingSummary {
        let sides: Vec<HittingSide> = self
            .runs
            .iter()
            .map(|run| {
                let xs: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.side == run.side && r.status == Status::Ok)
                    .filter_map(|r| r.time)
                    .map(|t| t / run.timescale)
                    .collect();
                HittingSide {
                    side: run.side,
                    radius: run.radius,
                    sigma2: run.walker.variance(),
                    timescale: run.timescale,
                    completed: xs.len(),
                    ks: ks_exponential(&xs).ok(),
                    mean: (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64),
                }
            })
            .collect();
        let ks: Vec<f64> = sides.iter().filter_map(|s| s.ks).collect();
        let n: Vec<usize> = sides.iter().filter(|s| s.ks.is_some()).map(|s| s.completed).collect();
        HittingSummary {
            gamma: self.gamma,
            trend: weakly_decreasing(&ks, &n),
            sides,
        }
    }
}

/// Probability that the entrance time into `B(0, R)` falls in
/// `[U'_L - u_L, U'_L]`, compared with `u_L / L²`.
pub struct ShortWindow {
    radius: f64,
    max_jumps: u64,
    runs: Vec<(f64, LineageWalker, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortWindowRow {
    pub side: f64,
    pub replicate: usize,
    pub status: Status,
    /// Entrance time, if it happened by the end of the window.
    pub time: Option<f64>,
    pub in_window: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortWindowSide {
    pub side: f64,
    pub window_end: f64,
    pub window_width: f64,
    pub completed: usize,
    pub hits: usize,
    pub probability: f64,
    /// `u_L / L²`.
    pub bound_scale: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortWindowSummary {
    pub radius: f64,
    pub sides: Vec<ShortWindowSide>,
    /// Largest over smallest ratio across sides.
    pub spread: f64,
    pub bounded_within_3: bool,
}

impl ShortWindow {
    pub fn new(
        model: &Model,
        sides: &[f64],
        radius: f64,
        window_end: Growth,
        window_width: Growth,
        max_jumps: u64,
    ) -> Result<Self, StatsError> {
        check_sides(sides)?;
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(StatsError::InvalidSetup(format!("target radius must be non-negative, got {radius}")));
        }
        let grows = window_end.power > 2.0
            || window_end.power == 2.0 && (window_end.log_power > 0.0 || window_end.log_power == 0.0 && window_end.loglog_power > 0.0);
        if !grows {
            return Err(StatsError::InvalidSetup("the window end must grow faster than L²".into()));
        }
        let runs = sides
            .iter()
            .map(|&side| {
                let torus = Torus::new(side)?;
                let walker = LineageWalker::new(&model.law_at(side)?, torus)?;
                let end = window_end.at(side);
                let width = window_width.at(side);
                if !(width >= 0.0 && width <= end) {
                    return Err(StatsError::InvalidSetup(format!("window width {width} outside [0, {end}]")));
                }
                if 2.0 * width > side * side / side.ln().sqrt() {
                    return Err(StatsError::InvalidSetup(format!(
                        "window width {width} exceeds L² / (2 sqrt(log L)) on side {side}"
                    )));
                }
                Ok((side, walker, end, width))
            })
            .collect::<Result<_, StatsError>>()?;
        Ok(ShortWindow {
            radius,
            max_jumps,
            runs,
        })
    }
}

impl Experiment for ShortWindow {
    type Row = ShortWindowRow;
    type Summary = ShortWindowSummary;

    fn groups(&self) -> usize {
        self.runs.len()
    }

    fn replicate(&self, group: usize, index: usize, seeds: &SeedStream) -> ShortWindowRow {
        let (side, walker, end, width) = &self.runs[group];
        let mut rng = walker_rng(seeds, *side, index);
        let start = far_start(&walker.torus(), &mut rng);
        let (status, time) = match walker.entrance_time(start, self.radius, *end, self.max_jumps, &mut rng) {
            Ok(t) => (Status::Ok, t),
            Err(SimError::Timeout { .. }) => (Status::Timeout, None),
            Err(_) => (Status::Failed, None),
        };
        ShortWindowRow {
            side: *side,
            replicate: index,
            status,
            time,
            in_window: *width > 0.0 && time.is_some_and(|t| t >= end - width && t <= *end),
        }
    }

    fn summarize(&self, rows: &[ShortWindowRow]) -> ShortWindowSummary {
        let sides: Vec<ShortWindowSide> = self
            .runs
            .iter()
            .map(|(side, _, end, width)| {
                let mine: Vec<&ShortWindowRow> = rows
                    .iter()
                    .filter(|r| r.side == *side && r.status == Status::Ok)
                    .collect();
                let hits = mine.iter().filter(|r| r.in_window).count();
                let probability = hits as f64 / mine.len().max(1) as f64;
                let bound_scale = width / (side * side);
                ShortWindowSide {
                    side: *side,
                    window_end: *end,
                    window_width: *width,
                    completed: mine.len(),
                    hits,
                    probability,
                    bound_scale,
                    ratio: if bound_scale > 0.0 { probability / bound_scale } else { 0.0 },
                }
            })
            .collect();
        let ratios: Vec<f64> = sides.iter().map(|s| s.ratio).collect();
        let hi = ratios.iter().copied().fold(0.0, f64::max);
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = if lo > 0.0 { hi / lo } else if hi == 0.0 { 1.0 } else { f64::INFINITY };
        ShortWindowSummary {
            radius: self.radius,
            bounded_within_3: spread <= 3.0,
            spread,
            sides,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformizationReport {
    pub side: f64,
    pub radius: f64,
    pub time: f64,
    pub proportion: Proportion,
    pub within_3_sigma: bool,
}

/// `P[ℓ(t) ∈ B(0, d)]` at `t = time_factor · L²` against `π d² / L²`.
pub fn uniformization_check(
    model: &Model,
    side: f64,
    radius: f64,
    time_factor: f64,
    replicates: usize,
    seeds: &SeedStream,
    exec: Execution,
) -> Result<UniformizationReport, StatsError> {
    let torus = Torus::new(side)?;
    if !(radius > 0.0 && radius <= side / 2.0) {
        return Err(StatsError::InvalidSetup(format!("radius must lie in (0, L/2], got {radius}")));
    }
    let walker = LineageWalker::new(&model.law_at(side)?, torus)?;
    let time = time_factor * side * side;
    let hits: usize = map_indexed(exec, 0..replicates, |i| {
        let mut rng = seeds.child(side.to_bits()).rng(experiment_id("uniformization"), i as u64);
        let start = far_start(&torus, &mut rng);
        let p = walker.position_at(start, time, &mut rng);
        (torus.distance_sq(p, Point::ORIGIN) < radius * radius) as usize
    })
    .into_iter()
    .sum();
    let proportion = Proportion::new(hits, replicates, PI * radius * radius / torus.area());
    Ok(UniformizationReport {
        side,
        radius,
        time,
        within_3_sigma: proportion.within(3.0),
        proportion,
    })
}
