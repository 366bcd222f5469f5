//! Experiment configuration files.
//!
//! A config is a TOML document. Top-level keys describe the sweep, the
//! `[small]`, `[large]` and `[regime]` tables the event law, and one table
//! named after the experiment kind holds the kind's own parameters. See
//! the README for the full grammar.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use slfv::event::{ImpactBand, ImpactDistribution, RadiusMeasure, TabulatedDensity};
use slfv::stats::{Growth, LimitCase, Model, RegimeSpec};
use slfv::{ClassLaw, ImpactKernel, StopAt, Thinning};
use toml::Spanned;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Genealogy,
    PairTime,
    BlockCount,
    FirstMerger,
    HittingTime,
    ShortWindow,
    Duality,
    ForwardRun,
    LimitSample,
}

impl Kind {
    pub const ALL: [Kind; 9] = [
        Kind::Genealogy,
        Kind::PairTime,
        Kind::BlockCount,
        Kind::FirstMerger,
        Kind::HittingTime,
        Kind::ShortWindow,
        Kind::Duality,
        Kind::ForwardRun,
        Kind::LimitSample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Genealogy => "genealogy",
            Kind::PairTime => "pair-time",
            Kind::BlockCount => "block-count",
            Kind::FirstMerger => "first-merger",
            Kind::HittingTime => "hitting-time",
            Kind::ShortWindow => "short-window",
            Kind::Duality => "duality",
            Kind::ForwardRun => "forward-run",
            Kind::LimitSample => "limit-sample",
        }
    }

    pub fn from_name(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One problem found in a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Every problem found in a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BandSpec {
    up_to: f64,
    #[serde(flatten)]
    dist: ImpactDistribution,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ImpactSpec {
    One(ImpactDistribution),
    Bands(Vec<BandSpec>),
}

/// One event class: `(radius, weight)` atoms, an optional piecewise-linear
/// density, and the impact law.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassSpec {
    #[serde(default)]
    atoms: Vec<(f64, f64)>,
    density: Option<TabulatedDensity>,
    impact: ImpactSpec,
}

impl ClassSpec {
    fn build(&self) -> Result<ClassLaw, String> {
        let mut radii = RadiusMeasure::from_atoms(&self.atoms).map_err(|e| e.to_string())?;
        if let Some(d) = &self.density {
            let d = TabulatedDensity::new(d.radii.clone(), d.values.clone()).map_err(|e| e.to_string())?;
            radii = radii.with_density(d).map_err(|e| e.to_string())?;
        }
        let impact = match &self.impact {
            ImpactSpec::One(d) => {
                d.validate().map_err(|e| e.to_string())?;
                ImpactKernel::constant(d.clone())
            }
            ImpactSpec::Bands(b) => ImpactKernel::banded(
                b.iter()
                    .map(|b| ImpactBand {
                        up_to: b.up_to,
                        dist: b.dist.clone(),
                    })
                    .collect(),
            )
            .map_err(|e| e.to_string())?,
        };
        ClassLaw::new(radii, impact).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    WellSeparated,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GenealogySpec {
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub placement: Option<Placement>,
    /// Explicit sample positions; overrides `n` and `placement`.
    #[serde(default)]
    pub points: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub stop: StopAt,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "yes")]
    pub record_events: bool,
    #[serde(default)]
    pub thresholds: Vec<f64>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PairTimeSpec {
    #[serde(default)]
    pub start: Option<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BlockCountSpec {
    pub n: usize,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FirstMergerSpec {
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HittingTimeSpec {
    pub target: Growth,
    #[serde(default)]
    pub start: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ShortWindowSpec {
    pub radius: f64,
    pub window_end: Growth,
    pub window_width: Growth,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    /// Two types in squares of `block × block` cells.
    Checkerboard { block: usize },
    /// Every cell holds type `a` out of `types`.
    Constant { types: usize, a: usize },
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DualitySpec {
    pub cells: usize,
    pub field: FieldSpec,
    pub points: Vec<[f64; 2]>,
    pub patterns: Vec<Vec<usize>>,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardRunSpec {
    pub cells: usize,
    pub field: FieldSpec,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitProcess {
    Kingman,
    Lambda,
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSampleSpec {
    pub process: LimitProcess,
    pub n: usize,
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Pair merger rate of the Kingman coalescent.
    #[serde(default = "unit")]
    pub rate: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "unit")]
    pub c: f64,
    #[serde(default)]
    pub b: f64,
    /// Defaults to the small-event dispersal variance.
    #[serde(default)]
    pub sigma_s2: Option<f64>,
    /// Block counts are reported at these times.
    #[serde(default)]
    pub times: Vec<f64>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum KindSpec {
    Genealogy(GenealogySpec),
    PairTime(PairTimeSpec),
    BlockCount(BlockCountSpec),
    FirstMerger(FirstMergerSpec),
    HittingTime(HittingTimeSpec),
    ShortWindow(ShortWindowSpec),
    Duality(DualitySpec),
    ForwardRun(ForwardRunSpec),
    LimitSample(LimitSampleSpec),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct RawConfig {
    kind: Spanned<String>,
    #[serde(default)]
    seed: Option<u64>,
    replicates: Spanned<i64>,
    sides: Spanned<Vec<f64>>,
    #[serde(default)]
    max_events: Option<Spanned<i64>>,
    #[serde(default)]
    thinning: Thinning,
    #[serde(default)]
    small: Option<Spanned<ClassSpec>>,
    #[serde(default)]
    large: Option<Spanned<ClassSpec>>,
    #[serde(default)]
    regime: Option<Spanned<RegimeSpec>>,
    #[serde(default)]
    genealogy: Option<Spanned<GenealogySpec>>,
    #[serde(default)]
    pair_time: Option<Spanned<PairTimeSpec>>,
    #[serde(default)]
    block_count: Option<Spanned<BlockCountSpec>>,
    #[serde(default)]
    first_merger: Option<Spanned<FirstMergerSpec>>,
    #[serde(default)]
    hitting_time: Option<Spanned<HittingTimeSpec>>,
    #[serde(default)]
    short_window: Option<Spanned<ShortWindowSpec>>,
    #[serde(default)]
    duality: Option<Spanned<DualitySpec>>,
    #[serde(default)]
    forward_run: Option<Spanned<ForwardRunSpec>>,
    #[serde(default)]
    limit_sample: Option<Spanned<LimitSampleSpec>>,
}

pub const DEFAULT_MAX_EVENTS: u64 = 1_000_000_000;

/// A parsed and validated experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: Option<u64>,
    pub replicates: usize,
    pub sides: Vec<f64>,
    pub max_events: u64,
    pub thinning: Thinning,
    pub model: Model,
    pub spec: KindSpec,
    /// Limit case of the regime, `None` when no known theorem covers it.
    pub case: Option<LimitCase>,
    /// The config text as read, and its sha256.
    pub source: String,
    pub source_sha256: String,
}

fn line_of(src: &str, span: Range<usize>) -> usize {
    src[..span.start.min(src.len())].matches('\n').count() + 1
}

struct Collector<'a> {
    src: &'a str,
    errors: Vec<ConfigError>,
}

impl Collector<'_> {
    fn at(&mut self, span: Option<Range<usize>>, message: impl Into<String>) {
        let line = span.map(|s| line_of(self.src, s));
        self.errors.push(ConfigError {
            line,
            message: message.into(),
        });
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigErrors> {
    let src = std::fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![ConfigError {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        }])
    })?;
    parse_config(&src)
}

/// Parses and validates `src`, reporting every problem found.
pub fn parse_config(src: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| {
        ConfigErrors(vec![ConfigError {
            line: e.span().map(|s| line_of(src, s)),
            message: e.message().trim().to_string(),
        }])
    })?;
    let mut c = Collector {
        src,
        errors: Vec::new(),
    };

    let kind = Kind::from_name(raw.kind.get_ref());
    if kind.is_none() {
        let names: Vec<&str> = Kind::ALL.iter().map(|k| k.name()).collect();
        c.at(
            Some(raw.kind.span()),
            format!("unknown experiment kind {:?}; expected one of {}", raw.kind.get_ref(), names.join(", ")),
        );
    }
    let replicates = *raw.replicates.get_ref();
    if replicates < 0 {
        c.at(Some(raw.replicates.span()), "replicates must be non-negative");
    }
    let max_events = match &raw.max_events {
        Some(m) if *m.get_ref() <= 0 => {
            c.at(Some(m.span()), "max-events must be positive");
            DEFAULT_MAX_EVENTS
        }
        Some(m) => *m.get_ref() as u64,
        None => DEFAULT_MAX_EVENTS,
    };
    let sides = raw.sides.get_ref().clone();
    if sides.is_empty() {
        c.at(Some(raw.sides.span()), "sides must list at least one torus side");
    }
    for s in &sides {
        if !(*s > 1.0 && s.is_finite()) {
            c.at(Some(raw.sides.span()), format!("torus side must be finite and exceed 1, got {s}"));
        }
    }

    let class = |spec: &Option<Spanned<ClassSpec>>, name: &str, c: &mut Collector| {
        spec.as_ref().and_then(|s| match s.get_ref().build() {
            Ok(l) => Some(l),
            Err(e) => {
                c.at(Some(s.span()), format!("{name} events: {e}"));
                None
            }
        })
    };
    let small = class(&raw.small, "small", &mut c);
    let large = class(&raw.large, "large", &mut c);
    if raw.small.is_none() && raw.large.is_none() && kind != Some(Kind::LimitSample) {
        c.at(None, "the event law needs a [small] or [large] table");
    }

    let regime = match &raw.regime {
        Some(r) => {
            if let Err(e) = r.get_ref().validate() {
                c.at(Some(r.span()), e.to_string());
            }
            *r.get_ref()
        }
        None => {
            if let Some(l) = &raw.large {
                c.at(Some(l.span()), "large events need a [regime] table giving psi and rho");
            }
            RegimeSpec::small_only()
        }
    };
    let alpha_one = raw.regime.is_some() && (regime.alpha() - 1.0).abs() < 1e-12;
    if let (Some(l), Some(spec)) = (&large, &raw.large) {
        if alpha_one && l.sup_radius() > FRAC_1_SQRT_2 + 1e-12 {
            c.at(
                Some(spec.span()),
                format!(
                    "large-event radius R^B = {} exceeds 1/sqrt(2); with psi proportional to L a large event must fit in the torus",
                    l.sup_radius()
                ),
            );
        }
    }
    let model = Model {
        small,
        large,
        regime,
    };
    let laws_ok = (raw.small.is_none() || model.small.is_some()) && (raw.large.is_none() || model.large.is_some());
    if laws_ok && (model.small.is_some() || model.large.is_some()) {
        for &s in sides.iter().filter(|s| **s > 1.0 && s.is_finite()) {
            if let Err(e) = model.law_at(s) {
                c.at(None, format!("event law on side {s}: {e}"));
            }
        }
    }

    macro_rules! sections {
        ($($field:ident => $variant:ident),*) => {{
            let mut chosen = None;
            $(
                if let Some(s) = &raw.$field {
                    if kind == Some(Kind::$variant) {
                        chosen = Some(KindSpec::$variant(s.get_ref().clone()));
                    } else {
                        c.at(
                            Some(s.span()),
                            format!("table [{}] does not apply to kind {}", Kind::$variant.name(), raw.kind.get_ref()),
                        );
                    }
                }
            )*
            chosen
        }};
    }
    let spec = sections!(
        genealogy => Genealogy,
        pair_time => PairTime,
        block_count => BlockCount,
        first_merger => FirstMerger,
        hitting_time => HittingTime,
        short_window => ShortWindow,
        duality => Duality,
        forward_run => ForwardRun,
        limit_sample => LimitSample
    );
    let spec = match (kind, spec) {
        (Some(_), Some(s)) => Some(s),
        (Some(Kind::PairTime), None) => Some(KindSpec::PairTime(PairTimeSpec::default())),
        (Some(k), None) => {
            c.at(None, format!("kind {k} needs a [{k}] table"));
            None
        }
        (None, _) => None,
    };

    let case = match model.case() {
        Ok(case) => Some(case),
        Err(slfv::StatsError::UncoveredRegime(_)) => None,
        Err(_) => None,
    };

    if let (Some(kind), Some(spec)) = (kind, &spec) {
        if matches!(kind, Kind::Duality | Kind::ForwardRun) && sides.len() != 1 {
            c.at(Some(raw.sides.span()), format!("kind {kind} runs on a single torus side"));
        }
        if let KindSpec::LimitSample(l) = spec {
            if l.process != LimitProcess::Kingman && model.large.is_none() {
                c.at(None, "multiple-merger and spatial limits need a [large] table");
            }
        }
    }

    if !c.errors.is_empty() {
        return Err(ConfigErrors(c.errors));
    }
    let source_sha256 = hex::encode(Sha256::digest(src.as_bytes()));
    Ok(ExperimentConfig {
        kind: kind.expect("checked"),
        seed: raw.seed,
        replicates: replicates as usize,
        sides,
        max_events,
        thinning: raw.thinning,
        model,
        spec: spec.expect("checked"),
        case,
        source: src.to_string(),
        source_sha256,
    })
}

/// Short name of a limit case for reports.
pub fn case_name(case: Option<&LimitCase>) -> String {
    match case {
        None => "uncovered (exploratory only)".into(),
        Some(LimitCase::KingmanLarge { alpha }) => format!("kingman, large events dominate (alpha = {alpha})"),
        Some(LimitCase::KingmanMixed { alpha, b }) => format!("kingman, mixed dispersal (alpha = {alpha}, b = {b})"),
        Some(LimitCase::KingmanSmall) => "kingman, small events dominate".into(),
        Some(LimitCase::SpatialLimit { b, c }) => format!("spatial coalescent on T(1) (b = {b}, c = {c})"),
        Some(LimitCase::LambdaCoalescent { beta, c }) => format!("lambda coalescent (beta = {beta}, c = {c})"),
    }
}
