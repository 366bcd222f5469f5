use thiserror::Error;

use crate::event::EventClass;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("torus side must be positive and finite, got {0}")]
    InvalidSide(f64),
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("radius {radius} outside [0, {max}] for this torus")]
    RadiusOutOfRange { radius: f64, max: f64 },
    #[error("a grid needs at least one cell per side")]
    EmptyGrid,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LawError {
    #[error("invalid radius measure: {0}")]
    InvalidRadiusMeasure(String),
    #[error("invalid impact distribution: {0}")]
    InvalidImpact(String),
    #[error("{class} events violate the finite-impact condition: ∫∫ u r² ν_r(du) μ(dr) = {value}")]
    InfiniteImpactMass { class: EventClass, value: f64 },
    #[error("{class} events violate the finite-variance condition: ∫∫ u² r² ν_r(du) μ(dr) = {value}")]
    InfiniteLambdaMass { class: EventClass, value: f64 },
    #[error("large-event scale psi must be positive and finite, got {0}")]
    InvalidPsi(f64),
    #[error("large-event rate divisor rho must be positive (or infinite), got {0}")]
    InvalidRho(f64),
    #[error("merger indices need 2 <= j <= p, got p = {p}, j = {j}")]
    InvalidMergerIndex { p: usize, j: usize },
    #[error("radius {radius} times c = {c} exceeds 1/sqrt(2), the largest ball on T(1)")]
    UnsupportedLimitRadius { radius: f64, c: f64 },
    #[error("the {0} class is empty")]
    MissingClass(EventClass),
    #[error("{0}")]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("sample: {0}")]
    Sample(String),
    #[error("no most recent common ancestor before the horizon (t = {time}, {events} events, {blocks} blocks remain)")]
    Timeout {
        time: f64,
        events: u64,
        blocks: usize,
    },
    #[error("the event law can never merge two lineages, so the run cannot reach a single block")]
    NonCoalescing,
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("subsample must be a non-empty subset of the sample indices")]
    InvalidSubsample,
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForwardError {
    #[error("type field: {0}")]
    Field(String),
    #[error("alphabet mismatch: field has {field} types but type {requested} was requested")]
    AlphabetMismatch { field: usize, requested: usize },
    #[error("event cap of {0} exceeded")]
    EventCap(u64),
    #[error("event radius {radius} is below the cell diagonal {diagonal}")]
    ResolutionTooCoarse { radius: f64, diagonal: f64 },
    #[error("grid format: {0}")]
    Format(String),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("regime is not covered by a known limit theorem: {0}")]
    UncoveredRegime(String),
    #[error("invalid regime: {0}")]
    InvalidRegime(String),
    #[error("invalid experiment setup: {0}")]
    InvalidSetup(String),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
