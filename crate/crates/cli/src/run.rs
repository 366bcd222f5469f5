//! Runs a validated config and writes its artifact directory.
//!
//! Replicates are computed in index order, a chunk at a time. Each finished
//! chunk is appended to `progress.jsonl`, so an interrupted run resumes from
//! the last complete chunk. Once every replicate is in, the tables, summary
//! and manifest are written and the progress files are removed.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use slfv::coalescent::SampleConfig;
use slfv::forward::{Duality, DualityRow, DualitySetup, TypeField};
use slfv::stats::{BlockCount, Experiment, FirstMerger, HittingTime, PairTime, ShortWindow};
use slfv::{Execution, Point, SeedStream, Torus};

use crate::config::{case_name, ConfigError, ConfigErrors, ExperimentConfig, FieldSpec, KindSpec};
use crate::jobs::{ForwardJob, GenealogyJob, LimitJob};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("writing {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{0}")]
    Resume(String),
    #[error("{0}")]
    Threads(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    pub resume: bool,
    /// Stop after this many new replicates, leaving a resumable directory.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub kind: String,
    pub seed: u64,
    pub config_sha256: String,
    pub replicates: usize,
    pub sides: Vec<f64>,
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub files: Vec<FileEntry>,
}

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";
pub const ROWS: &str = "rows.csv";
const PROGRESS: &str = "progress.jsonl";
const STATE: &str = "run-state.json";

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Complete(Manifest),
    Interrupted { done: usize, total: usize },
}

/// A config turned into something runnable.
pub enum Job {
    Genealogy(GenealogyJob),
    PairTime(PairTime),
    BlockCount(BlockCount),
    FirstMerger(FirstMerger),
    HittingTime(HittingTime),
    ShortWindow(ShortWindow),
    Duality(Duality),
    ForwardRun(ForwardJob),
    LimitSample(LimitJob),
}

fn setup_error(e: impl std::fmt::Display) -> ConfigErrors {
    ConfigErrors(vec![ConfigError {
        line: None,
        message: e.to_string(),
    }])
}

pub(crate) fn build_field(spec: &FieldSpec, torus: Torus, cells: usize) -> Result<TypeField, slfv::ForwardError> {
    match spec {
        FieldSpec::Checkerboard { block } => TypeField::checkerboard(torus, cells, *block),
        FieldSpec::Constant { types, a } => TypeField::constant(torus, cells, *types, *a),
    }
}

fn point(p: [f64; 2]) -> Point {
    Point::new(p[0], p[1])
}

/// Builds the experiment objects, which checks everything that depends on
/// the kind: sample feasibility, regime requirements, grid resolution.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Job, ConfigErrors> {
    let m = &cfg.model;
    let s = &cfg.sides;
    Ok(match &cfg.spec {
        KindSpec::Genealogy(g) => Job::Genealogy(GenealogyJob::new(cfg, g).map_err(setup_error)?),
        KindSpec::PairTime(p) => {
            let exp = PairTime::new(m, s, cfg.max_events, cfg.thinning).map_err(setup_error)?;
            Job::PairTime(match p.start {
                Some([a, b]) => exp.with_start([point(a), point(b)]).map_err(setup_error)?,
                None => exp,
            })
        }
        KindSpec::BlockCount(b) => Job::BlockCount(
            BlockCount::new(m, b.n, &b.times, s, cfg.max_events, cfg.thinning).map_err(setup_error)?,
        ),
        KindSpec::FirstMerger(f) => {
            Job::FirstMerger(FirstMerger::new(m, f.n, s, cfg.max_events, cfg.thinning).map_err(setup_error)?)
        }
        KindSpec::HittingTime(h) => Job::HittingTime(
            HittingTime::new(m, s, h.target, h.start.map(point), cfg.max_events).map_err(setup_error)?,
        ),
        KindSpec::ShortWindow(w) => Job::ShortWindow(
            ShortWindow::new(m, s, w.radius, w.window_end, w.window_width, cfg.max_events).map_err(setup_error)?,
        ),
        KindSpec::Duality(d) => {
            let torus = Torus::new(s[0]).map_err(setup_error)?;
            let field0 = build_field(&d.field, torus, d.cells).map_err(setup_error)?;
            let law = m.law_at(s[0]).map_err(setup_error)?;
            let points: Vec<Point> = d.points.iter().copied().map(point).collect();
            SampleConfig::explicit(points.clone()).validate(&torus).map_err(setup_error)?;
            let setup = DualitySetup {
                field0: &field0,
                points: &points,
                patterns: &d.patterns,
                time: d.time,
                law: &law,
                replicates: cfg.replicates,
                max_events: cfg.max_events,
            };
            Job::Duality(Duality::new(&setup).map_err(setup_error)?)
        }
        KindSpec::ForwardRun(f) => Job::ForwardRun(ForwardJob::new(cfg, f).map_err(setup_error)?),
        KindSpec::LimitSample(l) => Job::LimitSample(LimitJob::new(cfg, l).map_err(setup_error)?),
    })
}

/// What the runner needs beyond [`Experiment`]: how rows become files.
pub(crate) trait Artifact: Experiment<Row: Serialize + DeserializeOwned, Summary: Serialize> {
    fn write_rows(&self, rows: &[Self::Row], path: &Path) -> Result<(), RunError>;

    /// Extra files, relative to `out`.
    fn write_extra(&self, _rows: &[Self::Row], _out: &Path) -> Result<Vec<PathBuf>, RunError> {
        Ok(Vec::new())
    }
}

pub(crate) fn write_csv<T: Serialize>(rows: &[T], header: &[&str], path: &Path) -> Result<(), RunError> {
    let fmt = |e: csv::Error| RunError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    w.write_record(header).map_err(fmt)?;
    for r in rows {
        w.serialize(r).map_err(fmt)?;
    }
    w.flush().map_err(io_err(path))
}

macro_rules! flat_rows {
    ($($ty:ty => [$($col:literal),*]),* $(,)?) => {$(
        impl Artifact for $ty {
            fn write_rows(&self, rows: &[Self::Row], path: &Path) -> Result<(), RunError> {
                write_csv(rows, &[$($col),*], path)
            }
        }
    )*};
}

flat_rows!(
    PairTime => ["side", "replicate", "status", "gathering_small", "gathering_large", "coalescence", "error"],
    BlockCount => ["side", "replicate", "status", "counts", "error"],
    FirstMerger => ["side", "replicate", "status", "time", "class", "size", "error"],
    HittingTime => ["side", "replicate", "status", "start_x", "start_y", "time"],
    ShortWindow => ["side", "replicate", "status", "time", "in_window"],
);

impl Artifact for Duality {
    fn write_rows(&self, rows: &[DualityRow], path: &Path) -> Result<(), RunError> {
        #[derive(Serialize)]
        struct Long<'a> {
            replicate: usize,
            pattern: usize,
            forward: Option<f64>,
            dual: Option<f64>,
            error: Option<&'a str>,
        }
        let long: Vec<Long> = rows
            .iter()
            .flat_map(|r| {
                let k = r.forward.len().max(1);
                (0..k).map(move |j| Long {
                    replicate: r.replicate,
                    pattern: j,
                    forward: r.forward.get(j).copied(),
                    dual: r.dual.get(j).copied(),
                    error: r.error.as_deref(),
                })
            })
            .collect();
        write_csv(&long, &["replicate", "pattern", "forward", "dual", "error"], path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunState {
    version: String,
    kind: String,
    config_sha256: String,
    seed: u64,
    total: usize,
}

#[derive(Serialize, Deserialize)]
struct ProgressLine<R> {
    k: usize,
    row: R,
}

fn sha256_file(path: &Path) -> Result<(String, u64), RunError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, RunError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| RunError::Format {
        path,
        message: e.to_string(),
    })
}

fn manifest(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    threads: usize,
    started: Instant,
    files: &[PathBuf],
) -> Result<Manifest, RunError> {
    let mut entries = Vec::new();
    for rel in files {
        let (sha256, bytes) = sha256_file(&opts.out.join(rel))?;
        entries.push(FileEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256,
            bytes,
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let m = Manifest {
        tool: "slfv".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        kind: cfg.kind.name().into(),
        seed: opts.seed,
        config_sha256: cfg.source_sha256.clone(),
        replicates: cfg.replicates,
        sides: cfg.sides.clone(),
        threads,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        files: entries,
    };
    write_json(&m, &opts.out.join(MANIFEST))?;
    Ok(m)
}

fn read_progress<R: DeserializeOwned>(path: &Path, total: usize) -> Result<BTreeMap<usize, R>, RunError> {
    let mut done = BTreeMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(done),
        Err(e) => return Err(io_err(path)(e)),
    };
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        // a line cut short by an interruption is simply recomputed
        if let Ok(p) = serde_json::from_str::<ProgressLine<R>>(&line) {
            if p.k < total {
                done.entry(p.k).or_insert(p.row);
            }
        }
    }
    Ok(done)
}

fn execute<A: Artifact>(a: &A, cfg: &ExperimentConfig, opts: &RunOptions, exec: Execution, threads: usize) -> Result<RunStatus, RunError> {
    let started = Instant::now();
    let out = &opts.out;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let (manifest_path, progress_path, state_path) = (out.join(MANIFEST), out.join(PROGRESS), out.join(STATE));
    if manifest_path.exists() {
        if opts.resume {
            return read_manifest(out).map(RunStatus::Complete);
        }
        return Err(RunError::Resume(format!(
            "{} already holds a finished run; choose another --out",
            out.display()
        )));
    }
    let reps = cfg.replicates;
    let total = a.groups() * reps;
    if total == 0 {
        return manifest(cfg, opts, threads, started, &[]).map(RunStatus::Complete);
    }
    let state = RunState {
        version: env!("CARGO_PKG_VERSION").into(),
        kind: cfg.kind.name().into(),
        config_sha256: cfg.source_sha256.clone(),
        seed: opts.seed,
        total,
    };
    let mut done: BTreeMap<usize, A::Row> = if state_path.exists() {
        if !opts.resume {
            return Err(RunError::Resume(format!(
                "{} holds an unfinished run; pass --resume to continue it",
                out.display()
            )));
        }
        let text = fs::read_to_string(&state_path).map_err(io_err(&state_path))?;
        let old: RunState = serde_json::from_str(&text).map_err(|e| RunError::Resume(format!("{}: {e}", state_path.display())))?;
        if old != state {
            return Err(RunError::Resume(format!(
                "{} was started with a different config or seed",
                out.display()
            )));
        }
        read_progress(&progress_path, total)?
    } else {
        write_json(&state, &state_path)?;
        File::create(&progress_path).map_err(io_err(&progress_path))?;
        BTreeMap::new()
    };

    let seeds = SeedStream::new(opts.seed);
    let pending: Vec<usize> = (0..total).filter(|k| !done.contains_key(k)).collect();
    let budget = opts.stop_after.unwrap_or(usize::MAX).min(pending.len());
    let chunk = (threads * 8).max(16);
    let mut progress = BufWriter::new(
        OpenOptions::new()
            .append(true)
            .open(&progress_path)
            .map_err(io_err(&progress_path))?,
    );
    for block in pending[..budget].chunks(chunk) {
        let rows = slfv::parallel::map_indexed(exec, 0..block.len(), |i| {
            let k = block[i];
            a.replicate(k / reps, k % reps, &seeds)
        });
        for (&k, row) in block.iter().zip(rows) {
            serde_json::to_writer(&mut progress, &ProgressLine { k, row: &row }).map_err(|e| RunError::Format {
                path: progress_path.clone(),
                message: e.to_string(),
            })?;
            progress.write_all(b"\n").map_err(io_err(&progress_path))?;
            done.insert(k, row);
        }
        progress.flush().map_err(io_err(&progress_path))?;
    }
    drop(progress);
    if done.len() < total {
        return Ok(RunStatus::Interrupted {
            done: done.len(),
            total,
        });
    }

    let rows: Vec<A::Row> = done.into_values().collect();
    let summary = a.summarize(&rows);
    let mut files = vec![PathBuf::from(ROWS), PathBuf::from(SUMMARY), PathBuf::from("config.toml")];
    a.write_rows(&rows, &out.join(ROWS))?;
    files.extend(a.write_extra(&rows, out)?);
    #[derive(Serialize)]
    struct Summary<'a, S> {
        kind: &'a str,
        seed: u64,
        replicates: usize,
        sides: &'a [f64],
        regime: String,
        exploratory: bool,
        summary: S,
    }
    write_json(
        &Summary {
            kind: cfg.kind.name(),
            seed: opts.seed,
            replicates: reps,
            sides: &cfg.sides,
            regime: case_name(cfg.case.as_ref()),
            exploratory: cfg.case.is_none(),
            summary,
        },
        &out.join(SUMMARY),
    )?;
    fs::write(out.join("config.toml"), &cfg.source).map_err(io_err(&out.join("config.toml")))?;
    let m = manifest(cfg, opts, threads, started, &files)?;
    fs::remove_file(&progress_path).map_err(io_err(&progress_path))?;
    fs::remove_file(&state_path).map_err(io_err(&state_path))?;
    Ok(RunStatus::Complete(m))
}

fn dispatch(job: &Job, cfg: &ExperimentConfig, opts: &RunOptions, exec: Execution, threads: usize) -> Result<RunStatus, RunError> {
    match job {
        Job::Genealogy(j) => execute(j, cfg, opts, exec, threads),
        Job::PairTime(j) => execute(j, cfg, opts, exec, threads),
        Job::BlockCount(j) => execute(j, cfg, opts, exec, threads),
        Job::FirstMerger(j) => execute(j, cfg, opts, exec, threads),
        Job::HittingTime(j) => execute(j, cfg, opts, exec, threads),
        Job::ShortWindow(j) => execute(j, cfg, opts, exec, threads),
        Job::Duality(j) => execute(j, cfg, opts, exec, threads),
        Job::ForwardRun(j) => execute(j, cfg, opts, exec, threads),
        Job::LimitSample(j) => execute(j, cfg, opts, exec, threads),
    }
}

/// Runs `job` with the requested number of threads.
pub fn run(job: &Job, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunStatus, RunError> {
    if opts.threads == Some(0) {
        return Err(RunError::Threads("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    {
        let threads = opts.threads.unwrap_or_else(rayon::current_num_threads);
        if threads == 1 {
            return dispatch(job, cfg, opts, Execution::Sequential, 1);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| RunError::Threads(e.to_string()))?;
        pool.install(|| dispatch(job, cfg, opts, Execution::Parallel, threads))
    }
    #[cfg(not(feature = "parallel"))]
    {
        dispatch(job, cfg, opts, Execution::Sequential, 1)
    }
}
