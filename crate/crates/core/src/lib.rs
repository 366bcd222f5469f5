//! Exact simulation of the spatial Λ-Fleming-Viot process and its dual
//! coalescent on two-dimensional tori, with samplers for the limiting
//! coalescents and the experiments that compare the two.

pub mod coalescent;
pub mod error;
pub mod event;
pub mod forward;
pub mod limit;
pub mod parallel;
pub mod quadrature;
pub mod sampling;
pub mod seed;
pub mod stats;
pub mod torus;

pub use coalescent::{
    simulate_genealogy, DualSimulator, GenealogyRecord, LabelledPartition, SampleConfig,
    SimOptions, StopAt, Thinning,
};
pub use error::{ForwardError, GeometryError, LawError, SimError, StatsError};
pub use event::{ClassLaw, EventClass, EventLaw, ImpactDistribution, ImpactKernel, RadiusMeasure};
pub use parallel::Execution;
pub use seed::{SeedStream, SimRng};
pub use torus::{Grid, Point, Torus};
