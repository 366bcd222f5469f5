//! Event sources for the dual: exact thinning of the Poisson drive, and
//! replay of a fixed whole-torus event stream.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::event::{ClassLaw, EventClass, EventLaw};
use crate::sampling::RadiusSampler;
use crate::seed::splitmix64;
use crate::torus::{Point, Torus};

use super::partition::LabelledPartition;

/// How candidate events are proposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Thinning {
    /// Propose events covering at least one label, then draw which covered
    /// blocks are affected.
    #[default]
    Coverage,
    /// Propose events that affect at least one block. Much cheaper when
    /// impacts are small, but accepted events that cover blocks without
    /// affecting any are never seen.
    Affected,
}

/// One event that covers at least one block.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Firing {
    pub time: f64,
    pub class: EventClass,
    /// Radius of the event ball.
    pub radius: f64,
    pub center: Point,
    /// Positions (sorted) of affected blocks; may be empty.
    pub affected: Vec<usize>,
    /// Location of the parent.
    pub label: Point,
}

/// Counters kept apart from the genealogy itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub candidates: u64,
    /// Candidates that survived thinning (events covering a lineage, or in
    /// `Affected` mode events affecting one).
    pub accepted: u64,
}

pub(crate) trait EventSource {
    /// The next event strictly before `until`, or `None` if there is none.
    fn next<R: Rng + ?Sized>(
        &mut self,
        state: &LabelledPartition,
        now: f64,
        until: f64,
        rng: &mut R,
    ) -> Result<Option<Firing>, SimError>;

    fn stats(&self) -> RunStats;
}

struct ClassProposal {
    class: EventClass,
    law: ClassLaw,
    scale: f64,
    sampler: RadiusSampler,
    /// Candidate rate contributed by each block.
    per_block_rate: f64,
}

/// Exact thinning sampler for the restriction of the Poisson drive to
/// events touching the current sample. Clones share the precomputed
/// samplers and carry their own counters.
#[derive(Clone)]
pub struct ThinningDriver {
    torus: Torus,
    mode: Thinning,
    classes: Arc<Vec<ClassProposal>>,
    per_block_rate: f64,
    max_candidates: u64,
    stats: RunStats,
    covered: Vec<usize>,
}

impl std::fmt::Debug for ThinningDriver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ThinningDriver")
            .field("mode", &self.mode)
            .field("per_block_rate", &self.per_block_rate)
            .field("stats", &self.stats)
            .finish()
    }
}

impl ThinningDriver {
    pub fn new(
        law: &EventLaw,
        torus: Torus,
        mode: Thinning,
        max_candidates: u64,
    ) -> Result<Self, SimError> {
        let max_r = law.max_event_radius();
        if max_r > torus.max_radius() * (1.0 + 1e-12) {
            return Err(crate::error::GeometryError::RadiusOutOfRange {
                radius: max_r,
                max: torus.max_radius(),
            }
            .into());
        }
        let mut classes = Vec::new();
        for class in EventClass::ALL {
            let Some(cl) = law.class(class) else { continue };
            let scale = law.radius_scale(class);
            let div = law.rate_divisor(class);
            let cap = torus.max_radius();
            let sampler = match mode {
                Thinning::Coverage => RadiusSampler::new(
                    &cl.radii,
                    move |r| torus.ball_volume_unchecked((scale * r).min(cap)),
                    &[],
                ),
                Thinning::Affected => {
                    let kernel = cl.impact.clone();
                    let breaks: Vec<f64> = kernel.breakpoints().collect();
                    RadiusSampler::new(
                        &cl.radii,
                        move |r| {
                            torus.ball_volume_unchecked((scale * r).min(cap)) * kernel.at(r).mean()
                        },
                        &breaks,
                    )
                }
            };
            let per_block_rate = sampler.total() / div;
            if per_block_rate > 0.0 && per_block_rate.is_finite() {
                classes.push(ClassProposal {
                    class,
                    law: cl.clone(),
                    scale,
                    sampler,
                    per_block_rate,
                });
            }
        }
        let per_block_rate = classes.iter().map(|c| c.per_block_rate).sum();
        Ok(ThinningDriver {
            torus,
            mode,
            classes: Arc::new(classes),
            per_block_rate,
            max_candidates,
            stats: RunStats::default(),
            covered: Vec::new(),
        })
    }

    /// Candidate rate contributed by each block.
    pub fn per_block_rate(&self) -> f64 {
        self.per_block_rate
    }

    /// Draws one candidate and decides whether to keep it. Returns the
    /// candidate when accepted.
    fn candidate<R: Rng + ?Sized>(
        &mut self,
        state: &LabelledPartition,
        time: f64,
        rng: &mut R,
    ) -> Option<Firing> {
        let cp = if self.classes.len() == 1 {
            &self.classes[0]
        } else {
            let x = rng.random::<f64>() * self.per_block_rate;
            if x < self.classes[0].per_block_rate {
                &self.classes[0]
            } else {
                &self.classes[1]
            }
        };
        let r = cp.sampler.sample(rng);
        let radius = (cp.scale * r).min(self.torus.max_radius());
        let nu = cp.law.impact.at(r);
        let blocks = state.blocks();
        let chosen = rng.random_range(0..blocks.len());
        let center = self.torus.uniform_in_ball_unchecked(blocks[chosen].label, radius, rng);
        let r2 = radius * radius;
        self.covered.clear();
        for (i, b) in blocks.iter().enumerate() {
            if self.torus.distance_sq(center, b.label) <= r2 {
                self.covered.push(i);
            }
        }
        // floating-point guard: the proposing block is covered by construction
        if !self.covered.contains(&chosen) {
            self.covered.push(chosen);
            self.covered.sort_unstable();
        }
        let affected = match self.mode {
            Thinning::Coverage => {
                if self.covered.len() > 1 && rng.random_range(0..self.covered.len()) != 0 {
                    return None;
                }
                let u = nu.sample(rng);
                self.covered
                    .iter()
                    .copied()
                    .filter(|_| u > 0.0 && rng.random::<f64>() < u)
                    .collect::<Vec<_>>()
            }
            Thinning::Affected => {
                let u = nu.sample_size_biased(rng);
                let affected: Vec<usize> = self
                    .covered
                    .iter()
                    .copied()
                    .filter(|&i| i == chosen || rng.random::<f64>() < u)
                    .collect();
                if affected.len() > 1 && rng.random_range(0..affected.len()) != 0 {
                    return None;
                }
                affected
            }
        };
        let label = self.torus.uniform_in_ball_unchecked(center, radius, rng);
        Some(Firing {
            time,
            class: cp.class,
            radius,
            center,
            affected,
            label,
        })
    }
}

impl EventSource for ThinningDriver {
    fn next<R: Rng + ?Sized>(
        &mut self,
        state: &LabelledPartition,
        now: f64,
        until: f64,
        rng: &mut R,
    ) -> Result<Option<Firing>, SimError> {
        let rate = self.per_block_rate * state.len() as f64;
        if rate <= 0.0 {
            return Ok(None);
        }
        let mut t = now;
        loop {
            let e: f64 = Exp1.sample(rng);
            t += e / rate;
            if t >= until {
                return Ok(None);
            }
            if self.stats.candidates >= self.max_candidates {
                return Err(SimError::Timeout {
                    time: t,
                    events: self.stats.candidates,
                    blocks: state.len(),
                });
            }
            self.stats.candidates += 1;
            if let Some(f) = self.candidate(state, t, rng) {
                self.stats.accepted += 1;
                return Ok(Some(f));
            }
        }
    }

    fn stats(&self) -> RunStats {
        self.stats
    }
}

/// A whole-torus event with all of its randomness fixed in advance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEvent {
    pub time: f64,
    pub class: EventClass,
    pub center: Point,
    /// Radius of the event ball.
    pub radius: f64,
    pub u: f64,
    /// Seeds the per-label coins that decide which covered blocks are
    /// affected.
    pub coin_key: u64,
    pub label: Point,
}

impl ReplayEvent {
    /// Whether a block sitting at `at` is affected, given that it is
    /// covered. Depends only on the event and the label, so every sample
    /// sharing this stream sees the same coins.
    pub fn affects(&self, at: Point) -> bool {
        let h = splitmix64(
            self.coin_key ^ splitmix64(at.x.to_bits() ^ splitmix64(at.y.to_bits())),
        );
        ((h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)) < self.u
    }
}

/// A fixed stream of events over the whole torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStream {
    pub torus_side: f64,
    pub events: Vec<ReplayEvent>,
}

impl ReplayStream {
    /// Draws every event of the Poisson drive on `[0, t_end)`.
    pub fn generate<R: Rng + ?Sized>(
        law: &EventLaw,
        torus: Torus,
        t_end: f64,
        rng: &mut R,
    ) -> Result<Self, SimError> {
        let max_r = law.max_event_radius();
        if max_r > torus.max_radius() * (1.0 + 1e-12) {
            return Err(crate::error::GeometryError::RadiusOutOfRange {
                radius: max_r,
                max: torus.max_radius(),
            }
            .into());
        }
        let mut parts = Vec::new();
        for class in EventClass::ALL {
            let Some(cl) = law.class(class) else { continue };
            let rate = torus.area() * cl.total_mass() / law.rate_divisor(class);
            if rate > 0.0 {
                let sampler = RadiusSampler::new(&cl.radii, |_| 1.0, &[]);
                parts.push((class, cl, law.radius_scale(class), sampler, rate));
            }
        }
        let total: f64 = parts.iter().map(|p| p.4).sum();
        let mut events = Vec::new();
        if total <= 0.0 {
            return Ok(ReplayStream {
                torus_side: torus.side(),
                events,
            });
        }
        let mut t = 0.0;
        loop {
            let e: f64 = Exp1.sample(rng);
            t += e / total;
            if t >= t_end {
                break;
            }
            let mut x = rng.random::<f64>() * total;
            let mut pick = &parts[parts.len() - 1];
            for p in &parts {
                if x < p.4 {
                    pick = p;
                    break;
                }
                x -= p.4;
            }
            let (class, cl, scale, sampler, _) = pick;
            let r = sampler.sample(rng);
            let radius = (scale * r).min(torus.max_radius());
            let u = cl.impact.at(r).sample(rng);
            let center = torus.uniform_point(rng);
            let label = torus.uniform_in_ball_unchecked(center, radius, rng);
            events.push(ReplayEvent {
                time: t,
                class: *class,
                center,
                radius,
                u,
                coin_key: rng.random(),
                label,
            });
        }
        Ok(ReplayStream {
            torus_side: torus.side(),
            events,
        })
    }
}

/// Feeds a [`ReplayStream`] to the dual, skipping events that touch no
/// block.
#[derive(Debug)]
pub struct ReplayDriver<'a> {
    torus: Torus,
    events: &'a [ReplayEvent],
    pos: usize,
    stats: RunStats,
}

impl<'a> ReplayDriver<'a> {
    pub fn new(stream: &'a ReplayStream) -> Result<Self, SimError> {
        Ok(ReplayDriver {
            torus: Torus::new(stream.torus_side)?,
            events: &stream.events,
            pos: 0,
            stats: RunStats::default(),
        })
    }
}

impl EventSource for ReplayDriver<'_> {
    fn next<R: Rng + ?Sized>(
        &mut self,
        state: &LabelledPartition,
        _now: f64,
        until: f64,
        _rng: &mut R,
    ) -> Result<Option<Firing>, SimError> {
        while let Some(ev) = self.events.get(self.pos) {
            if ev.time >= until {
                return Ok(None);
            }
            self.pos += 1;
            self.stats.candidates += 1;
            let r2 = ev.radius * ev.radius;
            let mut any_covered = false;
            let mut affected = Vec::new();
            for (i, b) in state.blocks().iter().enumerate() {
                if self.torus.distance_sq(ev.center, b.label) <= r2 {
                    any_covered = true;
                    if ev.affects(b.label) {
                        affected.push(i);
                    }
                }
            }
            if any_covered {
                self.stats.accepted += 1;
                return Ok(Some(Firing {
                    time: ev.time,
                    class: ev.class,
                    radius: ev.radius,
                    center: ev.center,
                    affected,
                    label: ev.label,
                }));
            }
        }
        Ok(None)
    }

    fn stats(&self) -> RunStats {
        self.stats
    }
}
