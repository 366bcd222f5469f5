//! Replicate-level jobs that have no experiment type in the core crate:
//! raw genealogies, forward runs and samples of the limit processes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slfv::coalescent::{SampleConfig, SimOptions};
use slfv::forward::{run_forward, TypeField};
use slfv::limit::{sample_kingman, sample_lambda_beta_c, sample_spatial_limit};
use slfv::seed::experiment_id;
use slfv::stats::{Experiment, Status};
use slfv::{ClassLaw, DualSimulator, EventLaw, Point, SeedStream, SimError, Torus};

use crate::config::{ExperimentConfig, ForwardRunSpec, GenealogySpec, LimitProcess, LimitSampleSpec, Placement};
use crate::run::{build_field, write_csv, Artifact, RunError};

fn status_of(e: &SimError) -> Status {
    match e {
        SimError::Timeout { .. } => Status::Timeout,
        _ => Status::Failed,
    }
}

mod semicolon {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[usize], s: S) -> Result<S::Ok, S::Error> {
        let text: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        s.serialize_str(&text.join(";"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
        let s = String::deserialize(d)?;
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(';')
            .map(|x| x.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Dual genealogies of a fixed sample design on every side.
pub struct GenealogyJob {
    sample: SampleConfig,
    runs: Vec<(f64, Torus, DualSimulator)>,
    record_events: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenealogyRow {
    pub side: f64,
    pub replicate: usize,
    pub status: Status,
    pub end_time: Option<f64>,
    pub mrca_time: Option<f64>,
    pub events: Option<usize>,
    pub final_blocks: Option<usize>,
    pub error: Option<String>,
    /// The event log, when events are recorded.
    pub log: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenealogySummary {
    pub side: f64,
    pub completed: usize,
    pub timeouts: usize,
    pub failures: usize,
    pub mean_mrca_time: Option<f64>,
}

impl GenealogyJob {
    pub fn new(cfg: &ExperimentConfig, spec: &GenealogySpec) -> Result<Self, SimError> {
        let sample = match (&spec.points, spec.n) {
            (Some(p), _) => SampleConfig::explicit(p.iter().map(|q| Point::new(q[0], q[1])).collect()),
            (None, Some(n)) => match spec.placement.unwrap_or(Placement::WellSeparated) {
                Placement::WellSeparated => SampleConfig::well_separated(n),
                Placement::Uniform => SampleConfig::uniform(n),
            },
            (None, None) => {
                return Err(SimError::Sample("[genealogy] needs n or points".into()));
            }
        };
        let opts = SimOptions {
            max_time: spec.horizon.unwrap_or(f64::INFINITY),
            stop: spec.stop,
            max_events: cfg.max_events,
            thinning: cfg.thinning,
            thresholds: spec.thresholds.clone(),
            record_events: spec.record_events,
            ..SimOptions::default()
        };
        let runs = cfg
            .sides
            .iter()
            .map(|&side| {
                let torus = Torus::new(side)?;
                sample.validate(&torus)?;
                let law = cfg.model.law_at(side)?;
                Ok((side, torus, DualSimulator::new(&law, torus, opts.clone())?))
            })
            .collect::<Result<_, SimError>>()?;
        Ok(GenealogyJob {
            sample,
            runs,
            record_events: spec.record_events,
        })
    }
}

impl Experiment for GenealogyJob {
    type Row = GenealogyRow;
    type Summary = Vec<GenealogySummary>;

    fn groups(&self) -> usize {
        self.runs.len()
    }

    fn replicate(&self, group: usize, index: usize, seeds: &SeedStream) -> GenealogyRow {
        let (side, torus, sim) = &self.runs[group];
        let mut rng = seeds.child(side.to_bits()).rng(experiment_id("genealogy"), index as u64);
        let result = self.sample.draw(torus, &mut rng).and_then(|x| sim.run(&x, &mut rng));
        let mut row = GenealogyRow {
            side: *side,
            replicate: index,
            status: Status::Ok,
            end_time: None,
            mrca_time: None,
            events: None,
            final_blocks: None,
            error: None,
            log: None,
        };
        match result {
            Ok(s) => {
                let rec = s.record;
                row.end_time = Some(rec.end_time);
                row.mrca_time = rec.mrca_time();
                row.events = Some(rec.events.len());
                row.final_blocks = Some(rec.final_state.len());
                if self.record_events {
                    let mut buf = Vec::new();
                    rec.write_jsonl(&mut buf).expect("writing to memory");
                    row.log = Some(String::from_utf8(buf).expect("json is utf-8"));
                }
            }
            Err(e) => {
                row.status = status_of(&e);
                row.error = Some(e.to_string());
            }
        }
        row
    }

    fn summarize(&self, rows: &[GenealogyRow]) -> Vec<GenealogySummary> {
        self.runs
            .iter()
            .map(|(side, _, _)| {
                let mine: Vec<&GenealogyRow> = rows.iter().filter(|r| r.side == *side).collect();
                let t: Vec<f64> = mine.iter().filter_map(|r| r.mrca_time).collect();
                GenealogySummary {
                    side: *side,
                    completed: mine.iter().filter(|r| r.status == Status::Ok).count(),
                    timeouts: mine.iter().filter(|r| r.status == Status::Timeout).count(),
                    failures: mine.iter().filter(|r| r.status == Status::Failed).count(),
                    mean_mrca_time: (!t.is_empty()).then(|| t.iter().sum::<f64>() / t.len() as f64),
                }
            })
            .collect()
    }
}

impl Artifact for GenealogyJob {
    fn write_rows(&self, rows: &[GenealogyRow], path: &Path) -> Result<(), RunError> {
        #[derive(Serialize)]
        struct Flat<'a> {
            side: f64,
            replicate: usize,
            status: Status,
            end_time: Option<f64>,
            mrca_time: Option<f64>,
            events: Option<usize>,
            final_blocks: Option<usize>,
            error: Option<&'a str>,
        }
        let flat: Vec<Flat> = rows
            .iter()
            .map(|r| Flat {
                side: r.side,
                replicate: r.replicate,
                status: r.status,
                end_time: r.end_time,
                mrca_time: r.mrca_time,
                events: r.events,
                final_blocks: r.final_blocks,
                error: r.error.as_deref(),
            })
            .collect();
        write_csv(
            &flat,
            &["side", "replicate", "status", "end_time", "mrca_time", "events", "final_blocks", "error"],
            path,
        )
    }

    fn write_extra(&self, rows: &[GenealogyRow], out: &Path) -> Result<Vec<PathBuf>, RunError> {
        let mut files = Vec::new();
        if !self.record_events {
            return Ok(files);
        }
        let dir = out.join("events");
        fs::create_dir_all(&dir).map_err(|source| RunError::Io { path: dir.clone(), source })?;
        for r in rows {
            if let Some(log) = &r.log {
                let rel = PathBuf::from("events").join(format!("L{}-r{:06}.jsonl", r.side, r.replicate));
                let path = out.join(&rel);
                fs::write(&path, log).map_err(|source| RunError::Io { path, source })?;
                files.push(rel);
            }
        }
        Ok(files)
    }
}

/// Independent forward runs from one initial field.
pub struct ForwardJob {
    field0: TypeField,
    law: EventLaw,
    time: f64,
    max_events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardRow {
    pub replicate: usize,
    pub events: Option<u64>,
    pub skipped: Option<u64>,
    pub error: Option<String>,
    /// Final field, row-major by cell then type.
    pub field: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardSummary {
    pub completed: usize,
    pub mean_events: Option<f64>,
    /// Mean frequency of each type over the torus and the replicates.
    pub mean_frequency: Vec<f64>,
}

impl ForwardJob {
    pub fn new(cfg: &ExperimentConfig, spec: &ForwardRunSpec) -> Result<Self, slfv::StatsError> {
        if !(spec.time >= 0.0 && spec.time.is_finite()) {
            return Err(slfv::StatsError::InvalidSetup(format!("time must be finite and non-negative, got {}", spec.time)));
        }
        let torus = Torus::new(cfg.sides[0])?;
        let field0 = build_field(&spec.field, torus, spec.cells)?;
        let law = cfg.model.law_at(cfg.sides[0])?;
        Ok(ForwardJob {
            field0,
            law,
            time: spec.time,
            max_events: cfg.max_events,
        })
    }

    fn field_from(&self, data: &[f64]) -> TypeField {
        let (g, k) = (self.field0.grid().cells(), self.field0.types());
        TypeField::from_fn(self.field0.grid().torus(), g, k, |c, r| {
            let o = (r * g + c) * k;
            data[o..o + k].to_vec()
        })
        .expect("a field produced by a run is valid")
    }
}

impl Experiment for ForwardJob {
    type Row = ForwardRow;
    type Summary = ForwardSummary;

    fn groups(&self) -> usize {
        1
    }

    fn replicate(&self, _group: usize, index: usize, seeds: &SeedStream) -> ForwardRow {
        let mut rng = seeds.rng(experiment_id("forward-run"), index as u64);
        match run_forward(&self.field0, &self.law, self.time, self.max_events, &mut rng) {
            Ok(out) => {
                let g = out.field.grid().cells();
                let mut field = Vec::with_capacity(g * g * out.field.types());
                for r in 0..g {
                    for c in 0..g {
                        field.extend_from_slice(out.field.cell(c, r));
                    }
                }
                ForwardRow {
                    replicate: index,
                    events: Some(out.events),
                    skipped: Some(out.skipped),
                    error: None,
                    field,
                }
            }
            Err(e) => ForwardRow {
                replicate: index,
                events: None,
                skipped: None,
                error: Some(e.to_string()),
                field: Vec::new(),
            },
        }
    }

    fn summarize(&self, rows: &[ForwardRow]) -> ForwardSummary {
        let ok: Vec<&ForwardRow> = rows.iter().filter(|r| r.error.is_none()).collect();
        let k = self.field0.types();
        let cells = self.field0.grid().cells().pow(2);
        let mut freq = vec![0.0; k];
        for r in &ok {
            for (i, v) in r.field.iter().enumerate() {
                freq[i % k] += v;
            }
        }
        let denom = (ok.len() * cells).max(1) as f64;
        ForwardSummary {
            completed: ok.len(),
            mean_events: (!ok.is_empty())
                .then(|| ok.iter().filter_map(|r| r.events).sum::<u64>() as f64 / ok.len() as f64),
            mean_frequency: freq.into_iter().map(|f| f / denom).collect(),
        }
    }
}

impl Artifact for ForwardJob {
    fn write_rows(&self, rows: &[ForwardRow], path: &Path) -> Result<(), RunError> {
        #[derive(Serialize)]
        struct Flat<'a> {
            replicate: usize,
            events: Option<u64>,
            skipped: Option<u64>,
            error: Option<&'a str>,
        }
        let flat: Vec<Flat> = rows
            .iter()
            .map(|r| Flat {
                replicate: r.replicate,
                events: r.events,
                skipped: r.skipped,
                error: r.error.as_deref(),
            })
            .collect();
        write_csv(&flat, &["replicate", "events", "skipped", "error"], path)
    }

    fn write_extra(&self, rows: &[ForwardRow], out: &Path) -> Result<Vec<PathBuf>, RunError> {
        let dir = out.join("fields");
        fs::create_dir_all(&dir).map_err(|source| RunError::Io { path: dir.clone(), source })?;
        let mut files = Vec::new();
        for r in rows.iter().filter(|r| r.error.is_none()) {
            let field = self.field_from(&r.field);
            let stem = format!("r{:06}", r.replicate);
            let bin = PathBuf::from("fields").join(format!("{stem}.bin"));
            let path = out.join(&bin);
            let file = fs::File::create(&path).map_err(|source| RunError::Io { path: path.clone(), source })?;
            field
                .write_binary(std::io::BufWriter::new(file))
                .map_err(|source| RunError::Io { path, source })?;
            let csv = PathBuf::from("fields").join(format!("{stem}.csv"));
            let path = out.join(&csv);
            let file = fs::File::create(&path).map_err(|source| RunError::Io { path: path.clone(), source })?;
            field.write_csv(std::io::BufWriter::new(file)).map_err(|e| RunError::Format {
                path,
                message: e.to_string(),
            })?;
            files.push(bin);
            files.push(csv);
        }
        Ok(files)
    }
}

/// Paths of one of the limit processes.
pub struct LimitJob {
    spec: LimitSampleSpec,
    large: Option<ClassLaw>,
    sigma_s2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub replicate: usize,
    pub status: Status,
    pub mrca_time: Option<f64>,
    pub first_merger_time: Option<f64>,
    pub first_merger_size: Option<usize>,
    /// Block counts at the configured times.
    #[serde(with = "semicolon")]
    pub counts: Vec<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitSummary {
    pub process: LimitProcess,
    pub completed: usize,
    pub mean_mrca_time: Option<f64>,
    /// First-merger counts by size `2..=n`.
    pub first_merger_sizes: Vec<usize>,
    /// Mean block count at each configured time.
    pub mean_counts: Vec<f64>,
}

impl LimitJob {
    pub fn new(cfg: &ExperimentConfig, spec: &LimitSampleSpec) -> Result<Self, slfv::StatsError> {
        let bad = |m: String| slfv::StatsError::InvalidSetup(m);
        if spec.n == 0 {
            return Err(bad("n must be at least 1".into()));
        }
        if spec.times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(bad("times must be finite and non-negative".into()));
        }
        let horizon = spec.horizon.unwrap_or(f64::INFINITY);
        if !(horizon >= 0.0) {
            return Err(bad(format!("horizon must be non-negative, got {horizon}")));
        }
        if spec.process == LimitProcess::Kingman && !(spec.rate > 0.0 && spec.rate.is_finite()) {
            return Err(bad(format!("kingman rate must be positive, got {}", spec.rate)));
        }
        let sigma_s2 = spec.sigma_s2.unwrap_or_else(|| cfg.model.sigma_small2());
        let job = LimitJob {
            spec: spec.clone(),
            large: cfg.model.large.clone(),
            sigma_s2,
        };
        // one path up front surfaces parameter errors at validation time
        let mut rng = SeedStream::new(0).rng(experiment_id("limit-check"), 0);
        job.sample(0.0, &mut rng)?;
        Ok(job)
    }

    fn sample(&self, horizon: f64, rng: &mut slfv::SimRng) -> Result<(Option<f64>, Option<(f64, usize)>, Vec<usize>), SimError> {
        let s = &self.spec;
        let large = || self.large.as_ref().ok_or(SimError::InvalidOption("no large events".into()));
        match s.process {
            LimitProcess::Kingman | LimitProcess::Lambda => {
                let path = if s.process == LimitProcess::Kingman {
                    sample_kingman(s.n, s.rate, horizon, rng)?
                } else {
                    sample_lambda_beta_c(s.n, s.c, s.beta, large()?, horizon, rng)?
                };
                let first = path.first_merger().map(|e| (e.time, e.merged.len()));
                let counts = s.times.iter().map(|&t| path.block_count_at(t)).collect();
                Ok((path.mrca_time(), first, counts))
            }
            LimitProcess::Spatial => {
                let unit = Torus::new(1.0)?;
                let x: Vec<Point> = (0..s.n).map(|_| unit.uniform_point(rng)).collect();
                let rec = sample_spatial_limit(&x, s.b, s.c, large()?, self.sigma_s2, horizon, true, rng)?;
                let first = rec.first_merger.map(|f| (f.time, f.size));
                let counts = s.times.iter().map(|&t| rec.block_count_at(t)).collect();
                Ok((rec.mrca_time(), first, counts))
            }
        }
    }
}

impl Experiment for LimitJob {
    type Row = LimitRow;
    type Summary = LimitSummary;

    fn groups(&self) -> usize {
        1
    }

    fn replicate(&self, _group: usize, index: usize, seeds: &SeedStream) -> LimitRow {
        let mut rng = seeds.rng(experiment_id("limit-sample"), index as u64);
        let t_max = self.spec.times.iter().copied().fold(0.0, f64::max);
        let horizon = self.spec.horizon.unwrap_or(f64::INFINITY).max(t_max);
        match self.sample(horizon, &mut rng) {
            Ok((mrca, first, counts)) => LimitRow {
                replicate: index,
                status: Status::Ok,
                mrca_time: mrca,
                first_merger_time: first.map(|f| f.0),
                first_merger_size: first.map(|f| f.1),
                counts,
                error: None,
            },
            Err(e) => LimitRow {
                replicate: index,
                status: status_of(&e),
                mrca_time: None,
                first_merger_time: None,
                first_merger_size: None,
                counts: Vec::new(),
                error: Some(e.to_string()),
            },
        }
    }

    fn summarize(&self, rows: &[LimitRow]) -> LimitSummary {
        let ok: Vec<&LimitRow> = rows.iter().filter(|r| r.status == Status::Ok).collect();
        let t: Vec<f64> = ok.iter().filter_map(|r| r.mrca_time).collect();
        let mut sizes = vec![0; self.spec.n.saturating_sub(1)];
        for s in ok.iter().filter_map(|r| r.first_merger_size) {
            sizes[s - 2] += 1;
        }
        let mean_counts = (0..self.spec.times.len())
            .map(|i| ok.iter().map(|r| r.counts[i] as f64).sum::<f64>() / ok.len().max(1) as f64)
            .collect();
        LimitSummary {
            process: self.spec.process,
            completed: ok.len(),
            mean_mrca_time: (!t.is_empty()).then(|| t.iter().sum::<f64>() / t.len() as f64),
            first_merger_sizes: sizes,
            mean_counts,
        }
    }
}

impl Artifact for LimitJob {
    fn write_rows(&self, rows: &[LimitRow], path: &Path) -> Result<(), RunError> {
        write_csv(
            rows,
            &["replicate", "status", "mrca_time", "first_merger_time", "first_merger_size", "counts", "error"],
            path,
        )
    }
}
