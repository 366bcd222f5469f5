use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::event::EventClass;
use crate::torus::{Point, Torus};

use super::driver::RunStats;
use super::partition::{Block, LabelledPartition};

/// One event that affected at least one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub time: f64,
    pub class: EventClass,
    /// Radius of the event ball.
    pub radius: f64,
    pub center: Point,
    /// Member sets of the affected blocks, before the event. A single set
    /// means the block only moved.
    pub merged: Vec<Vec<usize>>,
    /// Label of the resulting block.
    pub label: Point,
}

impl MergeEvent {
    #[inline]
    pub fn is_merger(&self) -> bool {
        self.merged.len() >= 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstMerger {
    pub time: f64,
    pub class: EventClass,
    /// Number of blocks merged.
    pub size: usize,
}

/// First time each pair of samples was within `threshold` of each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gathering {
    pub threshold: f64,
    /// Indexed like [`pair_index`].
    pub times: Vec<Option<f64>>,
}

/// Position of the pair `(i, j)`, `i < j`, in the lexicographic list of pairs
/// of `{0, …, n-1}`.
#[inline]
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// Every pair `(i, j)` with `i < j < n`, in [`pair_index`] order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenealogyRecord {
    pub torus_side: f64,
    pub initial: LabelledPartition,
    pub events_recorded: bool,
    /// Empty unless events were recorded.
    pub events: Vec<MergeEvent>,
    pub final_state: LabelledPartition,
    pub end_time: f64,
    /// `(time, block count)` at time 0 and after every merger.
    pub block_counts: Vec<(f64, usize)>,
    /// Coalescence time of every pair, empty unless pairs were tracked.
    pub pair_coalescence: Vec<Option<f64>>,
    pub gathering: Vec<Gathering>,
    pub first_merger: Option<FirstMerger>,
}

impl GenealogyRecord {
    #[inline]
    pub fn n(&self) -> usize {
        self.initial.n()
    }

    /// Number of blocks at time `t` (right-continuous).
    pub fn block_count_at(&self, t: f64) -> usize {
        let i = self.block_counts.partition_point(|&(s, _)| s <= t);
        self.block_counts[i.saturating_sub(1)].1
    }

    /// Time at which a single block remained, if it did.
    pub fn mrca_time(&self) -> Option<f64> {
        self.block_counts
            .iter()
            .find(|&&(_, k)| k == 1)
            .map(|&(t, _)| t)
    }

    /// Coalescence time of samples `i` and `j`.
    pub fn pair_time(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.pair_coalescence
            .get(pair_index(self.n(), a, b))
            .copied()
            .flatten()
    }

    /// The record induced on the samples in `subsample`, renumbered in
    /// increasing order. Needs recorded events.
    pub fn restrict(&self, subsample: &[usize]) -> Result<GenealogyRecord, SimError> {
        let mut keep = subsample.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if keep.is_empty() || keep.len() != subsample.len() || keep[keep.len() - 1] >= self.n() {
            return Err(SimError::InvalidSubsample);
        }
        if !self.events_recorded {
            return Err(SimError::InvalidOption(
                "restriction needs a record with events".into(),
            ));
        }
        let torus = Torus::new(self.torus_side)?;
        let initial = self.initial.restrict(&keep);
        let thresholds: Vec<f64> = self.gathering.iter().map(|g| g.threshold).collect();
        let mut tracker = Tracker::new(
            &torus,
            &initial,
            !self.pair_coalescence.is_empty(),
            &thresholds,
        );
        let mut state = initial.clone();
        let mut events = Vec::new();
        for ev in &self.events {
            let touched: Vec<usize> = ev
                .merged
                .iter()
                .flatten()
                .filter_map(|i| keep.binary_search(i).ok())
                .collect();
            if touched.is_empty() {
                continue;
            }
            let mut positions: Vec<usize> = touched
                .iter()
                .map(|&i| state.block_of(i).expect("index in partition"))
                .collect();
            positions.sort_unstable();
            positions.dedup();
            let merged: Vec<Vec<usize>> = positions
                .iter()
                .map(|&p| state.blocks()[p].members.clone())
                .collect();
            state.merge(&positions, ev.label);
            let event = MergeEvent {
                time: ev.time,
                class: ev.class,
                radius: ev.radius,
                center: ev.center,
                merged,
                label: ev.label,
            };
            tracker.observe(&torus, &state, &event);
            events.push(event);
        }
        Ok(tracker.finish(self.torus_side, initial, Some(events), state, self.end_time))
    }

    /// Times divided by `time_factor`, lengths multiplied by `space_factor`.
    pub fn rescale_time_and_space(
        &self,
        time_factor: f64,
        space_factor: f64,
    ) -> Result<GenealogyRecord, SimError> {
        if !(time_factor > 0.0 && time_factor.is_finite())
            || !(space_factor > 0.0 && space_factor.is_finite())
        {
            return Err(SimError::InvalidOption(format!(
                "rescaling factors must be positive, got ({time_factor}, {space_factor})"
            )));
        }
        let torus = Torus::new(self.torus_side * space_factor)?;
        let p = |q: Point| torus.canonical(q.x * space_factor, q.y * space_factor);
        let t = |s: f64| s / time_factor;
        let part = |x: &LabelledPartition| {
            LabelledPartition::from_blocks(
                x.n(),
                x.blocks()
                    .iter()
                    .map(|b| Block {
                        members: b.members.clone(),
                        label: p(b.label),
                    })
                    .collect(),
            )
            .expect("same structure")
        };
        Ok(GenealogyRecord {
            torus_side: torus.side(),
            initial: part(&self.initial),
            events_recorded: self.events_recorded,
            events: self
                .events
                .iter()
                .map(|e| MergeEvent {
                    time: t(e.time),
                    class: e.class,
                    radius: e.radius * space_factor,
                    center: p(e.center),
                    merged: e.merged.clone(),
                    label: p(e.label),
                })
                .collect(),
            final_state: part(&self.final_state),
            end_time: t(self.end_time),
            block_counts: self.block_counts.iter().map(|&(s, k)| (t(s), k)).collect(),
            pair_coalescence: self
                .pair_coalescence
                .iter()
                .map(|x| x.map(t))
                .collect(),
            gathering: self
                .gathering
                .iter()
                .map(|g| Gathering {
                    threshold: g.threshold * space_factor,
                    times: g.times.iter().map(|x| x.map(t)).collect(),
                })
                .collect(),
            first_merger: self.first_merger.map(|f| FirstMerger {
                time: t(f.time),
                ..f
            }),
        })
    }

    /// Writes the record as JSON lines: a header, one line per event, and a
    /// closing summary.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = LogLine::Header {
            torus_side: self.torus_side,
            initial: self.initial.clone(),
            events_recorded: self.events_recorded,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, &LogLine::Event(e.clone()))?;
            w.write_all(b"\n")?;
        }
        let end = LogLine::End {
            end_time: self.end_time,
            final_state: self.final_state.clone(),
            block_counts: self.block_counts.clone(),
            pair_coalescence: self.pair_coalescence.clone(),
            gathering: self.gathering.clone(),
            first_merger: self.first_merger,
        };
        serde_json::to_writer(&mut w, &end)?;
        w.write_all(b"\n")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<GenealogyRecord, SimError> {
        let bad = |m: String| SimError::InvalidOption(format!("event log: {m}"));
        let mut header = None;
        let mut events = Vec::new();
        for (no, line) in r.lines().enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine =
                serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", no + 1)))?;
            match parsed {
                LogLine::Header {
                    torus_side,
                    initial,
                    events_recorded,
                } => header = Some((torus_side, initial, events_recorded)),
                LogLine::Event(e) => events.push(e),
                LogLine::End {
                    end_time,
                    final_state,
                    block_counts,
                    pair_coalescence,
                    gathering,
                    first_merger,
                } => {
                    let (torus_side, initial, events_recorded) =
                        header.ok_or_else(|| bad("missing header".into()))?;
                    return Ok(GenealogyRecord {
                        torus_side,
                        initial,
                        events_recorded,
                        events,
                        final_state,
                        end_time,
                        block_counts,
                        pair_coalescence,
                        gathering,
                        first_merger,
                    });
                }
            }
        }
        Err(bad("missing end line".into()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LogLine {
    Header {
        torus_side: f64,
        initial: LabelledPartition,
        events_recorded: bool,
    },
    Event(MergeEvent),
    End {
        end_time: f64,
        final_state: LabelledPartition,
        block_counts: Vec<(f64, usize)>,
        pair_coalescence: Vec<Option<f64>>,
        gathering: Vec<Gathering>,
        first_merger: Option<FirstMerger>,
    },
}

/// Pair, gathering and block-count bookkeeping shared by simulation and
/// restriction so both produce identical records.
#[derive(Debug, Clone)]
pub(crate) struct Tracker {
    n: usize,
    pair: Option<Vec<Option<f64>>>,
    gathering: Vec<Gathering>,
    pending_gather: usize,
    first_merger: Option<FirstMerger>,
    block_counts: Vec<(f64, usize)>,
    owner: Vec<usize>,
}

impl Tracker {
    pub fn new(
        torus: &Torus,
        initial: &LabelledPartition,
        track_pairs: bool,
        thresholds: &[f64],
    ) -> Self {
        let n = initial.n();
        let npairs = n * n.saturating_sub(1) / 2;
        let mut t = Tracker {
            n,
            pair: track_pairs.then(|| vec![None; npairs]),
            gathering: thresholds
                .iter()
                .map(|&threshold| Gathering {
                    threshold,
                    times: vec![None; npairs],
                })
                .collect(),
            pending_gather: thresholds.len() * npairs,
            first_merger: None,
            block_counts: vec![(0.0, initial.len())],
            owner: vec![0; n],
        };
        // samples that start in one block coalesced at time 0
        for b in initial.blocks() {
            t.mark_pairs(&b.members, 0.0);
        }
        t.update_gathering(torus, initial, 0.0);
        t
    }

    fn mark_pairs(&mut self, members: &[usize], time: f64) {
        if let Some(p) = &mut self.pair {
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    let slot = &mut p[pair_index(self.n, i, j)];
                    if slot.is_none() {
                        *slot = Some(time);
                    }
                }
            }
        }
    }

    fn update_gathering(&mut self, torus: &Torus, state: &LabelledPartition, time: f64) {
        if self.pending_gather == 0 {
            return;
        }
        for (bi, b) in state.blocks().iter().enumerate() {
            for &i in &b.members {
                self.owner[i] = bi;
            }
        }
        let blocks = state.blocks();
        for g in &mut self.gathering {
            let t2 = g.threshold * g.threshold;
            for (i, j) in pairs(self.n) {
                let slot = &mut g.times[pair_index(self.n, i, j)];
                if slot.is_some() {
                    continue;
                }
                let (bi, bj) = (self.owner[i], self.owner[j]);
                if bi == bj || torus.distance_sq(blocks[bi].label, blocks[bj].label) <= t2 {
                    *slot = Some(time);
                    self.pending_gather -= 1;
                }
            }
        }
    }

    pub fn observe(&mut self, torus: &Torus, state: &LabelledPartition, ev: &MergeEvent) {
        if ev.is_merger() {
            if self.first_merger.is_none() {
                self.first_merger = Some(FirstMerger {
                    time: ev.time,
                    class: ev.class,
                    size: ev.merged.len(),
                });
            }
            self.block_counts.push((ev.time, state.len()));
            if self.pair.is_some() {
                let min = ev.merged.iter().map(|m| m[0]).min().expect("non-empty");
                let pos = state.block_of(min).expect("merged block");
                let members = state.blocks()[pos].members.clone();
                self.mark_pairs(&members, ev.time);
            }
        }
        self.update_gathering(torus, state, ev.time);
    }

    pub fn all_gathered(&self) -> bool {
        self.pending_gather == 0
    }

    pub fn finish(
        self,
        torus_side: f64,
        initial: LabelledPartition,
        events: Option<Vec<MergeEvent>>,
        final_state: LabelledPartition,
        end_time: f64,
    ) -> GenealogyRecord {
        GenealogyRecord {
            torus_side,
            initial,
            events_recorded: events.is_some(),
            events: events.unwrap_or_default(),
            final_state,
            end_time,
            block_counts: self.block_counts,
            pair_coalescence: self.pair.unwrap_or_default(),
            gathering: self.gathering,
            first_merger: self.first_merger,
        }
    }
}

/// A simulated record together with its run counters.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub record: GenealogyRecord,
    pub stats: RunStats,
}
