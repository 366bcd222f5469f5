//! Tidy long-format CSV views of a finished artifact directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::config::Kind;
use crate::run::{read_manifest, RunError, ROWS, SUMMARY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum View {
    Survival,
    KsTrend,
    BlockCount,
    MergerHist,
}

impl View {
    pub fn name(self) -> &'static str {
        match self {
            View::Survival => "survival",
            View::KsTrend => "ks-trend",
            View::BlockCount => "block-count",
            View::MergerHist => "merger-hist",
        }
    }

    pub fn header(self) -> &'static [&'static str] {
        match self {
            View::Survival => &["L", "t_normalized", "empirical_survival", "exp_minus_t"],
            View::KsTrend => &["L", "ks_stat", "n_replicates"],
            View::BlockCount => &["L", "t", "blocks", "empirical", "sd", "theory"],
            View::MergerHist => &["L", "size", "observed", "expected"],
        }
    }

    fn accepts(self, kind: Kind) -> bool {
        match self {
            View::Survival | View::KsTrend => matches!(kind, Kind::PairTime | Kind::HittingTime),
            View::BlockCount => kind == Kind::BlockCount,
            View::MergerHist => kind == Kind::FirstMerger,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("view {view} needs a {wanted} artifact, but this one is {kind}")]
    WrongKind {
        view: &'static str,
        wanted: String,
        kind: String,
    },
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

fn malformed(path: &Path, message: impl Into<String>) -> PlotError {
    PlotError::Malformed {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_summary(dir: &Path) -> Result<Option<Value>, PlotError> {
    let path = dir.join(SUMMARY);
    match fs::read_to_string(&path) {
        Ok(t) => serde_json::from_str(&t).map(Some).map_err(|e| malformed(&path, e.to_string())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(RunError::Io { path, source }.into()),
    }
}

/// `(side, value)` pairs from a numeric column of `rows.csv`, skipping blanks.
fn column(dir: &Path, name: &str) -> Result<Vec<(f64, f64)>, PlotError> {
    let path = dir.join(ROWS);
    let mut r = csv::Reader::from_path(&path).map_err(|e| malformed(&path, e.to_string()))?;
    let headers = r.headers().map_err(|e| malformed(&path, e.to_string()))?.clone();
    let find = |c: &str| {
        headers
            .iter()
            .position(|h| h == c)
            .ok_or_else(|| malformed(&path, format!("no column {c}")))
    };
    let (is, iv) = (find("side")?, find(name)?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| malformed(&path, e.to_string()))?;
        if rec[iv].is_empty() {
            continue;
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| malformed(&path, e.to_string()));
        out.push((parse(&rec[is])?, parse(&rec[iv])?));
    }
    Ok(out)
}

fn num(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn sides(summary: &Value, path: &Path) -> Result<Vec<Value>, PlotError> {
    let s = &summary["summary"];
    let list = if s.is_array() { s } else { &s["sides"] };
    list.as_array()
        .cloned()
        .ok_or_else(|| malformed(path, "summary has no per-side entries"))
}

/// Rows of `view` for the artifact in `dir`.
pub fn plot_rows(dir: &Path, view: View) -> Result<Vec<Vec<String>>, PlotError> {
    let manifest = read_manifest(dir)?;
    let kind = Kind::from_name(&manifest.kind).ok_or_else(|| malformed(&dir.join("manifest.json"), "unknown kind"))?;
    if !view.accepts(kind) {
        let wanted: Vec<&str> = crate::config::Kind::ALL
            .iter()
            .filter(|k| view.accepts(**k))
            .map(|k| k.name())
            .collect();
        return Err(PlotError::WrongKind {
            view: view.name(),
            wanted: wanted.join(" or "),
            kind: manifest.kind,
        });
    }
    let Some(summary) = read_summary(dir)? else {
        return Ok(Vec::new());
    };
    let spath = dir.join(SUMMARY);
    let per_side = sides(&summary, &spath)?;
    let mut rows = Vec::new();
    match view {
        View::Survival => {
            let col = if kind == Kind::PairTime { "coalescence" } else { "time" };
            let data = column(dir, col)?;
            for s in &per_side {
                let side = s["side"].as_f64().ok_or_else(|| malformed(&spath, "side"))?;
                let scale = s["timescale"].as_f64().ok_or_else(|| malformed(&spath, "timescale"))?;
                let mut t: Vec<f64> = data.iter().filter(|d| d.0 == side).map(|d| d.1 / scale).collect();
                t.sort_by(f64::total_cmp);
                let n = t.len() as f64;
                for (i, x) in t.iter().enumerate() {
                    rows.push(vec![
                        num(&s["side"]),
                        x.to_string(),
                        ((n - i as f64 - 1.0) / n).to_string(),
                        (-x).exp().to_string(),
                    ]);
                }
            }
        }
        View::KsTrend => {
            let key = if kind == Kind::PairTime { "ks_coalescence" } else { "ks" };
            for s in &per_side {
                rows.push(vec![num(&s["side"]), num(&s[key]), num(&s["completed"])]);
            }
        }
        View::BlockCount => {
            for s in &per_side {
                for p in s["points"].as_array().into_iter().flatten() {
                    rows.push(vec![
                        num(&s["side"]),
                        num(&p["t"]),
                        num(&p["blocks"]),
                        num(&p["empirical"]["estimate"]),
                        num(&p["empirical"]["sd"]),
                        num(&p["theory"]),
                    ]);
                }
            }
        }
        View::MergerHist => {
            for s in &per_side {
                let counts = s["large_counts"].as_array().cloned().unwrap_or_default();
                let expected = s["expected"].as_array().cloned().unwrap_or_default();
                let total: f64 = counts.iter().filter_map(Value::as_f64).sum();
                for (i, c) in counts.iter().enumerate() {
                    let e = expected.get(i).and_then(Value::as_f64).map(|p| p * total);
                    rows.push(vec![
                        num(&s["side"]),
                        (i + 2).to_string(),
                        num(c),
                        e.map(|x| x.to_string()).unwrap_or_default(),
                    ]);
                }
            }
        }
    }
    Ok(rows)
}

/// Writes the view as CSV to `w`.
pub fn emit_plotdata<W: Write>(dir: &Path, view: View, w: W) -> Result<(), PlotError> {
    let rows = plot_rows(dir, view)?;
    let mut out = csv::Writer::from_writer(w);
    let bad = |e: csv::Error| malformed(Path::new("<output>"), e.to_string());
    out.write_record(view.header()).map_err(bad)?;
    for r in rows {
        out.write_record(&r).map_err(bad)?;
    }
    out.flush().map_err(|e| malformed(Path::new("<output>"), e.to_string()))
}
