use serde::{Deserialize, Serialize};

use super::regime::{LimitCase, Model};
use super::{chi_square, weakly_decreasing, ChiSquareTest, Experiment, Proportion, SIGNIFICANCE};
use crate::coalescent::{is_well_separated, DualSimulator, SampleConfig, SimOptions, Simulated, StopAt, Thinning};
use crate::error::{SimError, StatsError};
use crate::event::{merger_size_distribution, EventClass};
use crate::limit::{ks_exponential, BlockCountChain};
use crate::seed::{experiment_id, SeedStream, SimRng};
use crate::torus::{Point, Torus};

/// How a replicate ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    /// The event cap was hit first.
    Timeout,
    Failed,
}

fn genealogy_rng(seeds: &SeedStream, side: f64, index: usize) -> SimRng {
    seeds
        .child(side.to_bits())
        .rng(experiment_id("genealogy"), index as u64)
}

fn outcome(r: &Result<Simulated, SimError>) -> (Status, Option<String>) {
    match r {
        Ok(_) => (Status::Ok, None),
        Err(SimError::Timeout { .. }) => (Status::Timeout, None),
        Err(e) => (Status::Failed, Some(e.to_string())),
    }
}

/// One torus side of a genealogy sweep.
#[derive(Debug, Clone)]
struct SideRun {
    side: f64,
    torus: Torus,
    sim: DualSimulator,
    /// Predicted timescale, if the regime is covered.
    timescale: Option<f64>,
}

/// Timescales for every side, or `None` for all of them when the regime is
/// outside the known theorems.
fn timescales(model: &Model, sides: &[f64]) -> Result<(Option<LimitCase>, Vec<Option<f64>>), StatsError> {
    match model.case() {
        Ok(case) => {
            let ts = sides
                .iter()
                .map(|&s| model.timescale(s).map(Some))
                .collect::<Result<_, _>>()?;
            Ok((Some(case), ts))
        }
        Err(StatsError::UncoveredRegime(_)) => Ok((None, vec![None; sides.len()])),
        Err(e) => Err(e),
    }
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

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Gathering and coalescence times of two well-separated lineages.
#[derive(Debug, Clone)]
pub struct PairTime {
    model: Model,
    case: Option<LimitCase>,
    runs: Vec<SideRun>,
    start: Option<[Point; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTimeRow {
    pub side: f64,
    pub replicate: usize,
    pub status: Status,
    /// First time within `2R^s`.
    pub gathering_small: Option<f64>,
    /// First time within `2R^B ψ_L`.
    pub gathering_large: Option<f64>,
    pub coalescence: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTimeSide {
    pub side: f64,
    /// Divisor applied to raw times: the predicted timescale, or the sample
    /// mean of the coalescence times when the regime is not covered.
    pub timescale: f64,
    pub replicates: usize,
    pub completed: usize,
    pub timeouts: usize,
    pub failures: usize,
    pub ks_coalescence: Option<f64>,
    pub mean_coalescence: Option<f64>,
    pub ks_gathering_small: Option<f64>,
    pub mean_gathering_small: Option<f64>,
    pub ks_gathering_large: Option<f64>,
    pub mean_gathering_large: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTimeSummary {
    pub case: Option<LimitCase>,
    /// No limit theorem covers the regime; statistics are descriptive only.
    pub exploratory: bool,
    pub sides: Vec<PairTimeSide>,
    /// KS of the coalescence times never rises beyond the noise band.
    pub coalescence_trend: bool,
    pub gathering_small_trend: bool,
    pub gathering_large_trend: bool,
}

impl PairTimeSummary {
    pub fn side(&self, side: f64) -> Option<&PairTimeSide> {
        self.sides.iter().find(|s| s.side == side)
    }
}

impl PairTime {
    pub fn new(model: &Model, sides: &[f64], max_events: u64, thinning: Thinning) -> Result<Self, StatsError> {
        check_sides(sides)?;
        if !model.can_coalesce() {
            return Err(SimError::NonCoalescing.into());
        }
        let (case, ts) = timescales(model, sides)?;
        let runs = sides
            .iter()
            .zip(ts)
            .map(|(&side, timescale)| {
                let torus = Torus::new(side)?;
                SampleConfig::well_separated(2).validate(&torus)?;
                let thresholds = model.gathering_thresholds(side);
                let opts = SimOptions {
                    max_events,
                    thinning,
                    thresholds,
                    ..SimOptions::until(StopAt::Mrca)
                };
                let sim = DualSimulator::new(&model.law_at(side)?, torus, opts)?;
                Ok(SideRun {
                    side,
                    torus,
                    sim,
                    timescale,
                })
            })
            .collect::<Result<_, StatsError>>()?;
        Ok(PairTime {
            model: model.clone(),
            case,
            runs,
            start: None,
        })
    }

    /// Starts every replicate from `points` instead of a random
    /// well-separated pair. The pair must be well separated on every side.
    pub fn with_start(mut self, points: [Point; 2]) -> Result<Self, StatsError> {
        for run in &self.runs {
            SampleConfig::explicit(points.to_vec()).validate(&run.torus)?;
            if !is_well_separated(&points, &run.torus) {
                return Err(StatsError::InvalidSetup(format!(
                    "start points are closer than L / ln L on side {}",
                    run.side
                )));
            }
        }
        self.start = Some(points);
        Ok(self)
    }

    pub fn case(&self) -> Option<LimitCase> {
        self.case
    }
}

impl Experiment for PairTime {
    type Row = PairTimeRow;
    type Summary = PairTimeSummary;

    fn groups(&self) -> usize {
        self.runs.len()
    }

    fn replicate(&self, group: usize, index: usize, seeds: &SeedStream) -> PairTimeRow {
        let run = &self.runs[group];
        let mut rng = genealogy_rng(seeds, run.side, index);
        let sample = match self.start {
            Some(p) => SampleConfig::explicit(p.to_vec()),
            None => SampleConfig::well_separated(2),
        };
        let result = sample
            .draw(&run.torus, &mut rng)
            .and_then(|x| run.sim.run(&x, &mut rng));
        let (status, error) = outcome(&result);
        let mut row = PairTimeRow {
            side: run.side,
            replicate: index,
            status,
            gathering_small: None,
            gathering_large: None,
            coalescence: None,
            error,
        };
        if let Ok(sim) = result {
            let rec = sim.record;
            row.coalescence = rec.pair_time(0, 1);
            for (k, g) in rec.gathering.iter().enumerate() {
                let t = g.times[0];
                match self.model.class_of_threshold(k) {
                    EventClass::Small => row.gathering_small = t,
                    EventClass::Large => row.gathering_large = t,
                }
            }
        }
        row
    }

    fn summarize(&self, rows: &[PairTimeRow]) -> PairTimeSummary {
        let sides: Vec<PairTimeSide> = self
            .runs
            .iter()
            .map(|run| {
                let mine: Vec<&PairTimeRow> = rows.iter().filter(|r| r.side == run.side).collect();
                let ok: Vec<&PairTimeRow> = mine.iter().copied().filter(|r| r.status == Status::Ok).collect();
                let raw: Vec<f64> = ok.iter().filter_map(|r| r.coalescence).collect();
                let scale = run.timescale.or_else(|| mean(&raw)).unwrap_or(1.0);
                let norm = |xs: Vec<f64>| -> Vec<f64> { xs.into_iter().map(|x| x / scale).collect() };
                let coal = norm(raw);
                let gs = norm(ok.iter().filter_map(|r| r.gathering_small).collect());
                let gl = norm(ok.iter().filter_map(|r| r.gathering_large).collect());
                PairTimeSide {
                    side: run.side,
                    timescale: scale,
                    replicates: mine.len(),
                    completed: ok.len(),
                    timeouts: mine.iter().filter(|r| r.status == Status::Timeout).count(),
                    failures: mine.iter().filter(|r| r.status == Status::Failed).count(),
                    ks_coalescence: ks_exponential(&coal).ok(),
                    mean_coalescence: mean(&coal),
                    ks_gathering_small: ks_exponential(&gs).ok(),
                    mean_gathering_small: mean(&gs),
                    ks_gathering_large: ks_exponential(&gl).ok(),
                    mean_gathering_large: mean(&gl),
                }
            })
            .collect();
        let trend = |f: &dyn Fn(&PairTimeSide) -> Option<f64>| {
            let pts: Vec<(f64, usize)> = sides.iter().filter_map(|s| f(s).map(|k| (k, s.completed))).collect();
            let ks: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let n: Vec<usize> = pts.iter().map(|p| p.1).collect();
            weakly_decreasing(&ks, &n)
        };
        PairTimeSummary {
            case: self.case,
            exploratory: self.case.is_none(),
            coalescence_trend: trend(&|s| s.ks_coalescence),
            gathering_small_trend: trend(&|s| s.ks_gathering_small),
            gathering_large_trend: trend(&|s| s.ks_gathering_large),
            sides,
        }
    }
}

mod semicolon {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[usize], s: S) -> Result<S::Ok, S::Error> {
        let text: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        s.serialize_str(&text.join(";"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
        let text = String::deserialize(d)?;
        if text.is_empty() {
            return Ok(Vec::new());
        }
        text.split(';')
            .map(|x| x.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Distribution of the number of blocks at given (rescaled) times.
#[derive(Debug, Clone)]
pub struct BlockCount {
    n: usize,
    times: Vec<f64>,
    case: Option<LimitCase>,
    chain: Option<BlockCountChain>,
    runs: Vec<SideRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCountRow {
    pub side: f64,
    pub replicate: usize,
    pub status: Status,
    /// Block count at each requested time, `;`-separated.
    #[serde(with = "semicolon")]
    pub counts: Vec<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCountPoint {
    pub t: f64,
    pub blocks: usize,
    pub empirical: Proportion,
    /// Probability under the limiting coalescent, when known.
    pub theory: Option<f64>,
    pub within_3_sigma: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCountSide {
    pub side: f64,
    pub timescale: Option<f64>,
    pub completed: usize,
    pub points: Vec<BlockCountPoint>,
}

impl BlockCountSide {
    pub fn point(&self, t: f64, blocks: usize) -> Option<&BlockCountPoint> {
        self.points.iter().find(|p| p.t == t && p.blocks == blocks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCountSummary {
    pub case: Option<LimitCase>,
    pub exploratory: bool,
    pub n: usize,
    pub times: Vec<f64>,
    pub sides: Vec<BlockCountSide>,
}

impl BlockCount {
    /// `times` are in units of the predicted timescale.
    pub fn new(
        model: &Model,
        n: usize,
        times: &[f64],
        sides: &[f64],
        max_events: u64,
        thinning: Thinning,
    ) -> Result<Self, StatsError> {
        check_sides(sides)?;
        if !(1..=8).contains(&n) {
            return Err(StatsError::InvalidSetup(format!(
                "block counts are checked for 1 <= n <= 8, got {n}"
            )));
        }
        if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(StatsError::InvalidSetup("times must be finite and non-negative".into()));
        }
        let (case, ts) = timescales(model, sides)?;
        if case.is_none() {
            return Err(StatsError::UncoveredRegime(
                "block counts need a predicted timescale".into(),
            ));
        }
        let chain = match case {
            Some(c) if c.is_kingman() => Some(BlockCountChain::kingman(n)),
            Some(LimitCase::LambdaCoalescent { beta, c }) => {
                let large = model.large.as_ref().ok_or_else(|| {
                    StatsError::InvalidSetup("the multiple-merger limit needs large events".into())
                })?;
                Some(BlockCountChain::lambda_beta_c(n, c, beta, large)?)
            }
            _ => None,
        };
        let t_max = times.iter().copied().fold(0.0, f64::max);
        let runs = sides
            .iter()
            .zip(ts)
            .map(|(&side, timescale)| {
                let torus = Torus::new(side)?;
                SampleConfig::well_separated(n).validate(&torus)?;
                let phi = timescale.expect("covered regime");
                let opts = SimOptions {
                    max_time: t_max * phi,
                    stop: StopAt::MrcaWithin,
                    max_events,
                    thinning,
                    track_pairs: false,
                    ..SimOptions::default()
                };
                let sim = DualSimulator::new(&model.law_at(side)?, torus, opts)?;
                Ok(SideRun {
                    side,
                    torus,
                    sim,
                    timescale,
                })
            })
            .collect::<Result<_, StatsError>>()?;
        Ok(BlockCount {
            n,
            times: times.to_vec(),
            case,
            chain,
            runs,
        })
    }
}

impl Experiment for BlockCount {
    type Row = BlockCountRow;
    type Summary = BlockCountSummary;

    fn groups(&self) -> usize {
        self.runs.len()
    }

    fn replicate(&self, group: usize, index: usize, seeds: &SeedStream) -> BlockCountRow {
        let run = &self.runs[group];
        let mut rng = genealogy_rng(seeds, run.side, index);
        let result = SampleConfig::well_separated(self.n)
            .draw(&run.torus, &mut rng)
            .and_then(|x| run.sim.run(&x, &mut rng));
        let (status, error) = outcome(&result);
        let phi = run.timescale.expect("covered regime");
        let counts = match result {
            Ok(sim) => self
                .times
                .iter()
                .map(|&t| sim.record.block_count_at(t * phi))
                .collect(),
            Err(_) => Vec::new(),
        };
        BlockCountRow {
            side: run.side,
            replicate: index,
            status,
            counts,
            error,
        }
    }

    fn summarize(&self, rows: &[BlockCountRow]) -> BlockCountSummary {
        let sides = self
            .runs
            .iter()
            .map(|run| {
                let ok: Vec<&BlockCountRow> = rows
                    .iter()
                    .filter(|r| r.side == run.side && r.status == Status::Ok)
                    .collect();
                let mut points = Vec::new();
                for (i, &t) in self.times.iter().enumerate() {
                    let dist = self.chain.as_ref().map(|c| c.distribution(t));
                    for blocks in 1..=self.n {
                        let hits = ok.iter().filter(|r| r.counts[i] == blocks).count();
                        let theory = dist.as_ref().map(|d| d[blocks]);
                        let reference = theory.unwrap_or(hits as f64 / ok.len().max(1) as f64);
                        let empirical = Proportion::new(hits, ok.len(), reference);
                        points.push(BlockCountPoint {
                            t,
                            blocks,
                            empirical,
                            theory,
                            within_3_sigma: theory.map(|_| empirical.within(3.0)),
                        });
                    }
                }
                BlockCountSide {
                    side: run.side,
                    timescale: run.timescale,
                    completed: ok.len(),
                    points,
                }
            })
            .collect();
        BlockCountSummary {
            case: self.case,
            exploratory: self.case.is_none(),
            n: self.n,
            times: self.times.clone(),
            sides,
        }
    }
}

/// Size of the first multiple merger, against the binomial mixture of the
/// multiple-merger limit.
#[derive(Debug, Clone)]
pub struct FirstMerger {
    n: usize,
    expected: Vec<f64>,
    runs: Vec<SideRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstMergerRow {
    pub side: f64,
    pub replicate: usize,
    pub status: Status,
    pub time: Option<f64>,
    pub class: Option<EventClass>,
    /// Number of blocks merged.
    pub size: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstMergerSummary {
    pub side: f64,
    pub n: usize,
    /// Large-event first mergers by size `2..=n`.
    pub large_counts: Vec<usize>,
    /// First mergers caused by small events; left out of the test.
    pub small_mergers: usize,
    pub expected: Vec<f64>,
    pub test: Option<ChiSquareTest>,
    /// Fewer than 100 large-event mergers were observed.
    pub inconclusive: bool,
    pub pass: Option<bool>,
}

const MIN_MERGERS: usize = 100;

impl FirstMerger {
    pub fn new(
        model: &Model,
        n: usize,
        sides: &[f64],
        max_events: u64,
        thinning: Thinning,
    ) -> Result<Self, StatsError> {
        check_sides(sides)?;
        if n < 2 {
            return Err(StatsError::InvalidSetup("a merger needs n >= 2".into()));
        }
        let large = model
            .large
            .as_ref()
            .ok_or_else(|| StatsError::InvalidSetup("first-merger law needs large events".into()))?;
        let psi = model.regime.psi;
        let Some(rho) = model.regime.rho else {
            return Err(StatsError::InvalidSetup("large events are switched off (rho = inf)".into()));
        };
        if (psi.power - 1.0).abs() > 1e-12 || psi.log_power != 0.0 || psi.loglog_power != 0.0 {
            return Err(StatsError::InvalidSetup("first-merger law needs psi = c L".into()));
        }
        if !(rho.power > 2.0 || rho.power == 2.0 && (rho.log_power > 0.0 || rho.log_power == 0.0 && rho.loglog_power > 0.0)) {
            return Err(StatsError::InvalidSetup("first-merger law needs rho / L² -> infinity".into()));
        }
        if !large.total_mass().is_finite() {
            return Err(StatsError::InvalidSetup("large events need finite total mass".into()));
        }
        let expected = merger_size_distribution(n, psi.scale, large)?;
        let runs = sides
            .iter()
            .map(|&side| {
                let torus = Torus::new(side)?;
                SampleConfig::well_separated(n).validate(&torus)?;
                let opts = SimOptions {
                    max_events,
                    thinning,
                    track_pairs: false,
                    ..SimOptions::until(StopAt::FirstMerger)
                };
                let sim = DualSimulator::new(&model.law_at(side)?, torus, opts)?;
                Ok(SideRun {
                    side,
                    torus,
                    sim,
                    timescale: None,
                })
            })
            .collect::<Result<_, StatsError>>()?;
        Ok(FirstMerger { n, expected, runs })
    }

    pub fn expected(&self) -> &[f64] {
        &self.expected
    }
}

impl Experiment for FirstMerger {
    type Row = FirstMergerRow;
    type Summary = Vec<FirstMergerSummary>;

    fn groups(&self) -> usize {
        self.runs.len()
    }

    fn replicate(&self, group: usize, index: usize, seeds: &SeedStream) -> FirstMergerRow {
        let run = &self.runs[group];
        let mut rng = genealogy_rng(seeds, run.side, index);
        let result = SampleConfig::well_separated(self.n)
            .draw(&run.torus, &mut rng)
            .and_then(|x| run.sim.run(&x, &mut rng));
        let (status, error) = outcome(&result);
        let first = result.ok().and_then(|s| s.record.first_merger);
        FirstMergerRow {
            side: run.side,
            replicate: index,
            status,
            time: first.map(|f| f.time),
            class: first.map(|f| f.class),
            size: first.map(|f| f.size),
            error,
        }
    }

    fn summarize(&self, rows: &[FirstMergerRow]) -> Vec<FirstMergerSummary> {
        self.runs
            .iter()
            .map(|run| {
                let mut large_counts = vec![0usize; self.n - 1];
                let mut small_mergers = 0;
                for r in rows.iter().filter(|r| r.side == run.side && r.status == Status::Ok) {
                    match (r.class, r.size) {
                        (Some(EventClass::Large), Some(k)) => large_counts[k - 2] += 1,
                        (Some(EventClass::Small), Some(_)) => small_mergers += 1,
                        _ => {}
                    }
                }
                let total: usize = large_counts.iter().sum();
                let inconclusive = total < MIN_MERGERS;
                let test = (total > 0).then(|| chi_square(&large_counts, &self.expected).ok()).flatten();
                let pass = if inconclusive {
                    None
                } else {
                    test.as_ref().map(|t| t.p_value > SIGNIFICANCE)
                };
                FirstMergerSummary {
                    side: run.side,
                    n: self.n,
                    large_counts,
                    small_mergers,
                    expected: self.expected.clone(),
                    test,
                    inconclusive,
                    pass,
                }
            })
            .collect()
    }
}
