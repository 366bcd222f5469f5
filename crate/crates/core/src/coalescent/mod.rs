//! The dual spatial Λ-coalescent: lineages carry torus labels, and every
//! reproduction event merges the blocks it affects into one block placed at
//! the parent's location.

mod driver;
mod partition;
pub(crate) mod record;
mod sample;

pub use driver::{ReplayEvent, ReplayStream, RunStats, Thinning, ThinningDriver};
pub use partition::{Block, LabelledPartition};
pub use record::{
    pair_index, pairs, FirstMerger, Gathering, GenealogyRecord, MergeEvent, Simulated,
};
pub use sample::{is_well_separated, separation_threshold, Placement, SampleConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::event::EventLaw;
use crate::torus::{Grid, Point, Torus};

use driver::{EventSource, ReplayDriver};
use record::Tracker;

/// When a run ends, besides the time limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopAt {
    /// Run to `max_time`, which must be finite.
    Horizon,
    /// Stop when a single block remains.
    #[default]
    Mrca,
    FirstMerger,
    /// Stop once every pair has been gathered at every threshold.
    Gathered,
    /// Stop at a single block or at `max_time`, whichever comes first.
    MrcaWithin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub max_time: f64,
    pub stop: StopAt,
    /// Cap on candidate events; exceeding it is a timeout.
    pub max_events: u64,
    pub thinning: Thinning,
    pub thresholds: Vec<f64>,
    pub track_pairs: bool,
    pub record_events: bool,
    /// Keep labels fixed: merged blocks keep the smallest block's label and
    /// lone affected blocks do not move.
    pub frozen: bool,
    /// Snap every label to the centre of its cell in a `G × G` grid.
    pub grid: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            max_time: f64::INFINITY,
            stop: StopAt::Mrca,
            max_events: 1_000_000_000,
            thinning: Thinning::Coverage,
            thresholds: Vec::new(),
            track_pairs: true,
            record_events: false,
            frozen: false,
            grid: None,
        }
    }
}

impl SimOptions {
    /// Runs to time `t` and stops there.
    pub fn horizon(t: f64) -> Self {
        SimOptions {
            max_time: t,
            stop: StopAt::Horizon,
            ..Default::default()
        }
    }

    pub fn until(stop: StopAt) -> Self {
        SimOptions {
            stop,
            ..Default::default()
        }
    }

    pub fn recording(mut self) -> Self {
        self.record_events = true;
        self
    }
}

/// A reusable simulator for one law on one torus.
#[derive(Debug, Clone)]
pub struct DualSimulator {
    law: EventLaw,
    torus: Torus,
    opts: SimOptions,
    grid: Option<Grid>,
    driver: ThinningDriver,
}

impl DualSimulator {
    pub fn new(law: &EventLaw, torus: Torus, opts: SimOptions) -> Result<Self, SimError> {
        let bounded = matches!(opts.stop, StopAt::Horizon | StopAt::MrcaWithin);
        if bounded && !opts.max_time.is_finite() {
            return Err(SimError::InvalidOption(
                "a bounded run needs a finite max_time".into(),
            ));
        }
        if !(opts.max_time > 0.0 || opts.max_time == 0.0 && bounded) {
            return Err(SimError::InvalidOption(format!(
                "max_time must be non-negative, got {}",
                opts.max_time
            )));
        }
        if opts.stop == StopAt::Gathered && opts.thresholds.is_empty() {
            return Err(SimError::InvalidOption(
                "stopping at gathering needs at least one threshold".into(),
            ));
        }
        if opts.thresholds.iter().any(|t| !(*t >= 0.0)) {
            return Err(SimError::InvalidOption(
                "gathering thresholds must be non-negative".into(),
            ));
        }
        let grid = opts.grid.map(|g| Grid::new(torus, g)).transpose()?;
        let driver = ThinningDriver::new(law, torus, opts.thinning, opts.max_events)?;
        Ok(DualSimulator {
            law: law.clone(),
            torus,
            opts,
            grid,
            driver,
        })
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    pub fn options(&self) -> &SimOptions {
        &self.opts
    }

    /// Candidate rate per block of the thinning sampler.
    pub fn per_block_rate(&self) -> f64 {
        self.driver.per_block_rate()
    }

    /// Simulates from singletons at `labels`.
    pub fn run<R: Rng + ?Sized>(&self, labels: &[Point], rng: &mut R) -> Result<Simulated, SimError> {
        let mut driver = self.driver.clone();
        self.run_with(labels, &mut driver, rng)
    }

    /// Runs the dual against a fixed event stream. Deterministic.
    pub fn run_replay(&self, labels: &[Point], stream: &ReplayStream) -> Result<Simulated, SimError> {
        if stream.torus_side != self.torus.side() {
            return Err(SimError::InvalidOption(
                "replay stream was drawn on another torus".into(),
            ));
        }
        let mut driver = ReplayDriver::new(stream)?;
        // the replay source never draws, so any generator will do
        let mut rng = <crate::seed::SimRng as rand::SeedableRng>::seed_from_u64(0);
        self.run_with(labels, &mut driver, &mut rng)
    }

    fn check_can_finish(&self, state: &LabelledPartition, tracker: &Tracker) -> Result<(), SimError> {
        let law = &self.law;
        let active = |f: &dyn Fn(&crate::event::ClassLaw) -> bool| {
            crate::event::EventClass::ALL
                .iter()
                .filter_map(|&c| law.class(c))
                .any(f)
        };
        let needs_merger = matches!(self.opts.stop, StopAt::Mrca | StopAt::FirstMerger)
            && !self.opts.max_time.is_finite();
        if needs_merger && state.len() > 1 {
            if !active(&|cl| cl.lambda_mass() > 0.0) {
                return Err(SimError::NonCoalescing);
            }
            if self.opts.frozen {
                let reach = 2.0 * law.max_event_radius();
                let b = state.blocks();
                let close = (0..b.len()).any(|i| {
                    (i + 1..b.len()).any(|j| self.torus.distance(b[i].label, b[j].label) <= reach)
                });
                if !close {
                    return Err(SimError::NonCoalescing);
                }
            }
        }
        if self.opts.stop == StopAt::Gathered
            && !tracker.all_gathered()
            && (self.opts.frozen || !active(&|cl| cl.tilde_mass() > 0.0))
        {
            return Err(SimError::NonCoalescing);
        }
        Ok(())
    }

    fn run_with<S: EventSource, R: Rng + ?Sized>(
        &self,
        labels: &[Point],
        source: &mut S,
        rng: &mut R,
    ) -> Result<Simulated, SimError> {
        if labels.is_empty() {
            return Err(SimError::Sample("sample size must be at least 1".into()));
        }
        let torus = self.torus;
        let snap = |p: Point| self.grid.map_or(p, |g| g.snap(p));
        let start: Vec<Point> = labels
            .iter()
            .map(|&p| snap(torus.canonical(p.x, p.y)))
            .collect();
        let initial = LabelledPartition::singletons(&start);
        let mut state = initial.clone();
        let mut tracker = Tracker::new(&torus, &state, self.opts.track_pairs, &self.opts.thresholds);
        let mut events = self.opts.record_events.then(Vec::new);

        let done = |state: &LabelledPartition, tracker: &Tracker, last_merger: bool| match self
            .opts
            .stop
        {
            StopAt::Horizon => false,
            StopAt::Mrca | StopAt::MrcaWithin => state.len() == 1,
            StopAt::FirstMerger => last_merger || state.len() == 1,
            StopAt::Gathered => tracker.all_gathered(),
        };

        let mut now = 0.0;
        if !done(&state, &tracker, false) {
            self.check_can_finish(&state, &tracker)?;
            loop {
                let Some(f) = source.next(&state, now, self.opts.max_time, rng)? else {
                    if matches!(self.opts.stop, StopAt::Horizon | StopAt::MrcaWithin) {
                        now = self.opts.max_time;
                        break;
                    }
                    return Err(SimError::Timeout {
                        time: self.opts.max_time.min(f64::MAX),
                        events: source.stats().candidates,
                        blocks: state.len(),
                    });
                };
                now = f.time;
                if f.affected.is_empty() {
                    continue;
                }
                let label = if self.opts.frozen {
                    if f.affected.len() == 1 {
                        continue;
                    }
                    state.blocks()[f.affected[0]].label
                } else {
                    snap(f.label)
                };
                let merged: Vec<Vec<usize>> = f
                    .affected
                    .iter()
                    .map(|&p| state.blocks()[p].members.clone())
                    .collect();
                state.merge(&f.affected, label);
                debug_assert!(state.is_valid_on(&torus));
                let ev = MergeEvent {
                    time: f.time,
                    class: f.class,
                    radius: f.radius,
                    center: f.center,
                    merged,
                    label,
                };
                tracker.observe(&torus, &state, &ev);
                let merger = ev.is_merger();
                if let Some(list) = &mut events {
                    list.push(ev);
                }
                if done(&state, &tracker, merger) {
                    break;
                }
            }
        }
        Ok(Simulated {
            record: tracker.finish(torus.side(), initial, events, state, now),
            stats: source.stats(),
        })
    }
}

/// Draws a sample and simulates its genealogy.
pub fn simulate_genealogy<R: Rng + ?Sized>(
    sample: &SampleConfig,
    law: &EventLaw,
    torus: Torus,
    opts: SimOptions,
    rng: &mut R,
) -> Result<Simulated, SimError> {
    let labels = sample.draw(&torus, rng)?;
    DualSimulator::new(law, torus, opts)?.run(&labels, rng)
}
