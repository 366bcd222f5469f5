//! Reproduction-event laws and the scalar functionals derived from them.
//!
//! An [`EventLaw`] has two classes. Small events have radius `r ~ μ^s` and
//! fall with intensity `dt ⊗ dx ⊗ μ^s(dr)`. Large events have radius `ψ r`
//! with `r ~ μ^B` and fall with intensity `(ρ ψ²)^{-1} dt ⊗ dx ⊗ μ^B(dr)`.
//! An infinite `ρ` switches large events off.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::LawError;
use crate::quadrature::{adaptive_trapezoid, beta_expectation, gl64_integrate};
use crate::torus::{lens_area_unchecked, Torus};

const QUAD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventClass {
    Small,
    Large,
}

impl EventClass {
    pub const ALL: [EventClass; 2] = [EventClass::Small, EventClass::Large];
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventClass::Small => f.write_str("small"),
            EventClass::Large => f.write_str("large"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusAtom {
    pub radius: f64,
    pub weight: f64,
}

/// Piecewise-linear density on `[radii[0], radii[last]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedDensity {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

impl TabulatedDensity {
    pub fn new(radii: Vec<f64>, values: Vec<f64>) -> Result<Self, LawError> {
        if radii.len() < 2 || radii.len() != values.len() {
            return Err(LawError::InvalidRadiusMeasure(
                "a tabulated density needs at least two (radius, value) pairs".into(),
            ));
        }
        if !(radii[0] > 0.0) || radii.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LawError::InvalidRadiusMeasure(
                "tabulated radii must be positive and strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(LawError::InvalidRadiusMeasure(
                "tabulated density values must be finite and non-negative".into(),
            ));
        }
        Ok(TabulatedDensity { radii, values })
    }

    #[inline]
    pub(crate) fn eval_segment(&self, seg: usize, r: f64) -> f64 {
        let (r0, r1) = (self.radii[seg], self.radii[seg + 1]);
        let (v0, v1) = (self.values[seg], self.values[seg + 1]);
        v0 + (v1 - v0) * (r - r0) / (r1 - r0)
    }

    fn support_top(&self) -> f64 {
        // the last radius carrying positive density on its left
        for i in (1..self.radii.len()).rev() {
            if self.values[i] > 0.0 || self.values[i - 1] > 0.0 {
                return self.radii[i];
            }
        }
        0.0
    }
}

/// A σ-finite measure on radii: finitely many atoms plus an optional
/// tabulated density.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RadiusMeasure {
    pub atoms: Vec<RadiusAtom>,
    pub density: Option<TabulatedDensity>,
}

impl RadiusMeasure {
    pub fn from_atoms(atoms: &[(f64, f64)]) -> Result<Self, LawError> {
        let m = RadiusMeasure {
            atoms: atoms
                .iter()
                .map(|&(radius, weight)| RadiusAtom { radius, weight })
                .collect(),
            density: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// The point mass `weight · δ_radius`.
    pub fn point(radius: f64, weight: f64) -> Result<Self, LawError> {
        Self::from_atoms(&[(radius, weight)])
    }

    pub fn with_density(mut self, density: TabulatedDensity) -> Result<Self, LawError> {
        self.density = Some(density);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), LawError> {
        for a in &self.atoms {
            if !(a.radius.is_finite() && a.radius > 0.0) {
                return Err(LawError::InvalidRadiusMeasure(format!(
                    "atom radius must be positive and finite, got {}",
                    a.radius
                )));
            }
            if !(a.weight.is_finite() && a.weight > 0.0) {
                return Err(LawError::InvalidRadiusMeasure(format!(
                    "atom weight must be positive and finite, got {}",
                    a.weight
                )));
            }
        }
        if let Some(d) = &self.density {
            TabulatedDensity::new(d.radii.clone(), d.values.clone())?;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty() && self.density.as_ref().is_none_or(|d| d.support_top() == 0.0)
    }

    /// Essential supremum of the support.
    pub fn sup_radius(&self) -> f64 {
        let a = self.atoms.iter().map(|a| a.radius).fold(0.0, f64::max);
        let d = self.density.as_ref().map_or(0.0, |d| d.support_top());
        a.max(d)
    }

    pub fn min_radius(&self) -> f64 {
        let a = self.atoms.iter().map(|a| a.radius).fold(f64::INFINITY, f64::min);
        let d = self.density.as_ref().map_or(f64::INFINITY, |d| d.radii[0]);
        a.min(d)
    }

    /// `∫ f(r) μ(dr)`: exact on atoms, adaptive trapezoid on the density.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        let mut total: f64 = self.atoms.iter().map(|a| a.weight * f(a.radius)).sum();
        if let Some(d) = &self.density {
            for seg in 0..d.radii.len() - 1 {
                let (a, b) = (d.radii[seg], d.radii[seg + 1]);
                total += adaptive_trapezoid(|r| d.eval_segment(seg, r) * f(r), a, b, QUAD_TOL);
            }
        }
        total
    }

    pub fn total_mass(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    /// Breakpoints of the tabulated part (for samplers).
    pub(crate) fn segments(&self) -> Vec<(usize, f64, f64)> {
        match &self.density {
            None => Vec::new(),
            Some(d) => (0..d.radii.len() - 1)
                .map(|s| (s, d.radii[s], d.radii[s + 1]))
                .collect(),
        }
    }
}

/// A probability distribution of the impact fraction `u` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ImpactDistribution {
    Point { u: f64 },
    Beta { a: f64, b: f64 },
    Table { values: Vec<f64>, probs: Vec<f64> },
}

impl ImpactDistribution {
    pub fn point(u: f64) -> Self {
        ImpactDistribution::Point { u }
    }

    pub fn validate(&self) -> Result<(), LawError> {
        let in_unit = |u: f64| (0.0..=1.0).contains(&u);
        match self {
            ImpactDistribution::Point { u } => {
                if !in_unit(*u) {
                    return Err(LawError::InvalidImpact(format!(
                        "impact fraction {u} is outside [0, 1]"
                    )));
                }
            }
            ImpactDistribution::Beta { a, b } => {
                if !(a.is_finite() && *a > 0.0 && b.is_finite() && *b > 0.0) {
                    return Err(LawError::InvalidImpact(format!(
                        "beta parameters must be positive, got ({a}, {b})"
                    )));
                }
            }
            ImpactDistribution::Table { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(LawError::InvalidImpact(
                        "tabulated impact needs matching non-empty values and probs".into(),
                    ));
                }
                if let Some(u) = values.iter().find(|u| !in_unit(**u)) {
                    return Err(LawError::InvalidImpact(format!(
                        "impact fraction {u} is outside [0, 1]"
                    )));
                }
                if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(LawError::InvalidImpact("negative probability".into()));
                }
                let s: f64 = probs.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(LawError::InvalidImpact(format!(
                        "tabulated impact probabilities sum to {s}, not 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `E[g(U)]`.
    pub fn expect<G: FnMut(f64) -> f64>(&self, mut g: G) -> f64 {
        match self {
            ImpactDistribution::Point { u } => g(*u),
            ImpactDistribution::Beta { a, b } => beta_expectation(g, *a, *b),
            ImpactDistribution::Table { values, probs } => {
                values.iter().zip(probs).map(|(u, p)| p * g(*u)).sum()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ImpactDistribution::Point { u } => *u,
            ImpactDistribution::Beta { a, b } => a / (a + b),
            ImpactDistribution::Table { values, probs } => {
                values.iter().zip(probs).map(|(u, p)| u * p).sum()
            }
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            ImpactDistribution::Point { u } => u * u,
            ImpactDistribution::Beta { a, b } => a * (a + 1.0) / ((a + b) * (a + b + 1.0)),
            ImpactDistribution::Table { values, probs } => {
                values.iter().zip(probs).map(|(u, p)| u * u * p).sum()
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ImpactDistribution::Point { u } => *u == 0.0,
            ImpactDistribution::Beta { .. } => false,
            ImpactDistribution::Table { values, probs } => values
                .iter()
                .zip(probs)
                .all(|(u, p)| *u == 0.0 || *p == 0.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ImpactDistribution::Point { u } => *u,
            ImpactDistribution::Beta { a, b } => Beta::new(*a, *b).expect("validated").sample(rng),
            ImpactDistribution::Table { values, probs } => {
                let x: f64 = rng.random();
                let mut acc = 0.0;
                for (u, p) in values.iter().zip(probs) {
                    acc += p;
                    if x < acc {
                        return *u;
                    }
                }
                *values.last().expect("non-empty")
            }
        }
    }

    /// Sample from the size-biased law `u ν(du) / E[U]`.
    pub fn sample_size_biased<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ImpactDistribution::Point { u } => *u,
            ImpactDistribution::Beta { a, b } => {
                Beta::new(*a + 1.0, *b).expect("validated").sample(rng)
            }
            ImpactDistribution::Table { values, probs } => {
                let mean = self.mean();
                let x: f64 = rng.random::<f64>() * mean;
                let mut acc = 0.0;
                for (u, p) in values.iter().zip(probs) {
                    acc += u * p;
                    if x < acc {
                        return *u;
                    }
                }
                values
                    .iter()
                    .zip(probs)
                    .rev()
                    .find(|(u, p)| **u > 0.0 && **p > 0.0)
                    .map(|(u, _)| *u)
                    .expect("positive mean")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactBand {
    /// Inclusive upper end of the radii this band applies to.
    pub up_to: f64,
    pub dist: ImpactDistribution,
}

/// `r ↦ ν_r`, piecewise constant in `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactKernel {
    bands: Vec<ImpactBand>,
}

impl ImpactKernel {
    pub fn constant(dist: ImpactDistribution) -> Self {
        ImpactKernel {
            bands: vec![ImpactBand {
                up_to: f64::INFINITY,
                dist,
            }],
        }
    }

    pub fn point(u: f64) -> Self {
        Self::constant(ImpactDistribution::point(u))
    }

    pub fn banded(mut bands: Vec<ImpactBand>) -> Result<Self, LawError> {
        if bands.is_empty() {
            return Err(LawError::InvalidImpact("impact kernel has no bands".into()));
        }
        if bands.windows(2).any(|w| !(w[1].up_to > w[0].up_to)) {
            return Err(LawError::InvalidImpact(
                "impact bands must have increasing upper radii".into(),
            ));
        }
        bands.last_mut().expect("non-empty").up_to = f64::INFINITY;
        let k = ImpactKernel { bands };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), LawError> {
        self.bands.iter().try_for_each(|b| b.dist.validate())
    }

    pub fn bands(&self) -> &[ImpactBand] {
        &self.bands
    }

    #[inline]
    pub fn at(&self, r: f64) -> &ImpactDistribution {
        match self.bands.len() {
            1 => &self.bands[0].dist,
            _ => {
                let i = self.bands.partition_point(|b| b.up_to < r);
                &self.bands[i.min(self.bands.len() - 1)].dist
            }
        }
    }

    pub(crate) fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.bands
            .iter()
            .map(|b| b.up_to)
            .filter(|r| r.is_finite())
    }
}

/// One class of events: radius measure and impact kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLaw {
    pub radii: RadiusMeasure,
    pub impact: ImpactKernel,
}

impl ClassLaw {
    pub fn new(radii: RadiusMeasure, impact: ImpactKernel) -> Result<Self, LawError> {
        radii.validate()?;
        impact.validate()?;
        Ok(ClassLaw { radii, impact })
    }

    /// `weight · δ_radius` with a fixed impact `u`.
    pub fn point(radius: f64, weight: f64, u: f64) -> Result<Self, LawError> {
        Self::new(RadiusMeasure::point(radius, weight)?, ImpactKernel::point(u))
    }

    /// `∫∫ f(r, ν_r) μ(dr)`.
    pub fn integrate<F: FnMut(f64, &ImpactDistribution) -> f64>(&self, mut f: F) -> f64 {
        self.radii.integrate(|r| f(r, self.impact.at(r)))
    }

    /// `∫∫ u r² ν_r(du) μ(dr)`.
    pub fn tilde_mass(&self) -> f64 {
        self.integrate(|r, nu| r * r * nu.mean())
    }

    /// `∫∫ u² r² ν_r(du) μ(dr)`.
    pub fn lambda_mass(&self) -> f64 {
        self.integrate(|r, nu| r * r * nu.second_moment())
    }

    pub fn total_mass(&self) -> f64 {
        self.radii.total_mass()
    }

    pub fn sup_radius(&self) -> f64 {
        self.radii.sup_radius()
    }

    /// Whether events of (nearly) maximal radius can affect a lineage.
    pub fn boundary_nondegenerate(&self) -> bool {
        let top = self.sup_radius();
        top > 0.0 && !self.impact.at(top).is_zero()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLaw {
    pub small: Option<ClassLaw>,
    pub large: Option<ClassLaw>,
    /// Spatial scale of large events.
    pub psi: f64,
    /// Rate divisor of large events; `f64::INFINITY` disables them.
    pub rho: f64,
}

impl EventLaw {
    pub fn small_only(small: ClassLaw) -> Self {
        EventLaw {
            small: Some(small),
            large: None,
            psi: 1.0,
            rho: f64::INFINITY,
        }
    }

    pub fn new(
        small: Option<ClassLaw>,
        large: Option<ClassLaw>,
        psi: f64,
        rho: f64,
    ) -> Result<Self, LawError> {
        if !(psi.is_finite() && psi > 0.0) {
            return Err(LawError::InvalidPsi(psi));
        }
        if !(rho > 0.0) {
            return Err(LawError::InvalidRho(rho));
        }
        Ok(EventLaw {
            small,
            large,
            psi,
            rho,
        })
    }

    /// The law with its large class removed.
    pub fn without_large(&self) -> Self {
        EventLaw {
            small: self.small.clone(),
            large: None,
            psi: self.psi,
            rho: f64::INFINITY,
        }
    }

    /// The class law if events of that class actually occur.
    pub fn class(&self, class: EventClass) -> Option<&ClassLaw> {
        match class {
            EventClass::Small => self.small.as_ref(),
            EventClass::Large if self.rho.is_finite() => self.large.as_ref(),
            EventClass::Large => None,
        }
    }

    /// Multiplier from a drawn radius to the radius of the event ball.
    #[inline]
    pub fn radius_scale(&self, class: EventClass) -> f64 {
        match class {
            EventClass::Small => 1.0,
            EventClass::Large => self.psi,
        }
    }

    /// Divisor of the space-time intensity `dt ⊗ dx ⊗ μ(dr)`.
    #[inline]
    pub fn rate_divisor(&self, class: EventClass) -> f64 {
        match class {
            EventClass::Small => 1.0,
            EventClass::Large => self.rho * self.psi * self.psi,
        }
    }

    /// Largest event-ball radius, over active classes.
    pub fn max_event_radius(&self) -> f64 {
        EventClass::ALL
            .iter()
            .filter_map(|&c| self.class(c).map(|l| l.sup_radius() * self.radius_scale(c)))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMasses {
    /// `∫∫ u² r² ν_r(du) μ(dr)`
    pub lambda_mass: f64,
    /// `∫∫ u r² ν_r(du) μ(dr)`
    pub tilde_lambda_mass: f64,
    /// False when events of maximal radius never affect anyone.
    pub boundary_nondegenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub small: Option<ClassMasses>,
    pub large: Option<ClassMasses>,
}

impl AdmissibilityReport {
    pub fn degenerate(&self) -> bool {
        [self.small, self.large]
            .iter()
            .flatten()
            .any(|m| !m.boundary_nondegenerate)
    }
}

/// Evaluates both mass conditions for each configured class.
pub fn check_admissibility(law: &EventLaw) -> Result<AdmissibilityReport, LawError> {
    if !(law.psi.is_finite() && law.psi > 0.0) {
        return Err(LawError::InvalidPsi(law.psi));
    }
    if !(law.rho > 0.0) {
        return Err(LawError::InvalidRho(law.rho));
    }
    let masses = |class: EventClass, l: &ClassLaw| -> Result<ClassMasses, LawError> {
        l.radii.validate()?;
        l.impact.validate()?;
        let tilde = l.tilde_mass();
        if !tilde.is_finite() {
            return Err(LawError::InfiniteImpactMass {
                class,
                value: tilde,
            });
        }
        let lambda = l.lambda_mass();
        if !lambda.is_finite() {
            return Err(LawError::InfiniteLambdaMass {
                class,
                value: lambda,
            });
        }
        Ok(ClassMasses {
            lambda_mass: lambda,
            tilde_lambda_mass: tilde,
            boundary_nondegenerate: l.boundary_nondegenerate(),
        })
    };
    Ok(AdmissibilityReport {
        small: law
            .small
            .as_ref()
            .map(|l| masses(EventClass::Small, l))
            .transpose()?,
        large: law
            .large
            .as_ref()
            .map(|l| masses(EventClass::Large, l))
            .transpose()?,
    })
}

/// Rate at which one lineage jumps because of events of `class`:
/// `π ∫∫ r² u ν_r(du) μ(dr)`, divided by `ρ` for large events.
pub fn single_lineage_jump_rate(law: &EventLaw, class: EventClass) -> f64 {
    match law.class(class) {
        None => 0.0,
        Some(l) => {
            let base = PI * l.tilde_mass();
            match class {
                EventClass::Small => base,
                EventClass::Large => base / law.rho,
            }
        }
    }
}

/// Per-coordinate variance of the displacement accumulated by one lineage
/// in one unit of time from `class` events, `(π/2) ∫∫ r⁴ u ν_r(du) μ(dr)`.
///
/// A jump moves the lineage from its position to the event centre (uniform
/// in a ball of radius `r` around it) and then to a uniform point of the
/// event ball, so `E|jump|² = r²`. Large-class displacements are measured
/// in units of `ψ`, and the `ρ` factor is left to the caller.
pub fn dispersal_variance(law: &EventLaw, class: EventClass) -> f64 {
    let l = match class {
        EventClass::Small => law.small.as_ref(),
        EventClass::Large => law.large.as_ref(),
    };
    l.map_or(0.0, |l| {
        0.5 * PI * l.integrate(|r, nu| r.powi(4) * nu.mean())
    })
}

/// Instantaneous rate at which two lineages `separation` apart are both
/// affected by one event of `class`:
/// `∫_{r > d/2} L_r(d) E_{ν_r}[u²] μ(dr)` over the event-ball radii, divided
/// by the class rate divisor. Exact in the planar regime.
pub fn pair_coalescence_rate(separation: f64, law: &EventLaw, class: EventClass) -> f64 {
    let Some(l) = law.class(class) else {
        return 0.0;
    };
    let scale = law.radius_scale(class);
    let div = law.rate_divisor(class);
    l.integrate(|r, nu| {
        let re = scale * r;
        if 2.0 * re <= separation {
            0.0
        } else {
            lens_area_unchecked(separation, re) * nu.second_moment()
        }
    }) / div
}

/// Total pair rate over both classes.
pub fn total_pair_coalescence_rate(separation: f64, law: &EventLaw) -> f64 {
    EventClass::ALL
        .iter()
        .map(|&c| pair_coalescence_rate(separation, law, c))
        .sum()
}

/// A finite measure on `[0, 1]`: atoms plus weighted Beta densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LambdaComponent {
    Atom { at: f64, weight: f64 },
    Beta { a: f64, b: f64, weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LambdaMeasure {
    pub components: Vec<LambdaComponent>,
}

impl LambdaMeasure {
    /// Kingman's coalescent, `Λ = δ_0`.
    pub fn kingman() -> Self {
        LambdaMeasure {
            components: vec![LambdaComponent::Atom {
                at: 0.0,
                weight: 1.0,
            }],
        }
    }

    /// Lebesgue measure on `[0, 1]`.
    pub fn uniform() -> Self {
        Self::beta(1.0, 1.0)
    }

    pub fn beta(a: f64, b: f64) -> Self {
        LambdaMeasure {
            components: vec![LambdaComponent::Beta { a, b, weight: 1.0 }],
        }
    }
}

/// `β_{p,j} = ∫ u^{j-2} (1-u)^{p-j} Λ(du)`: the rate at which a given set of
/// `j` out of `p` blocks merges into one.
pub fn nonspatial_lambda_rate(p: usize, j: usize, lambda: &LambdaMeasure) -> Result<f64, LawError> {
    if j < 2 || j > p {
        return Err(LawError::InvalidMergerIndex { p, j });
    }
    let (e1, e2) = ((j - 2) as i32, (p - j) as i32);
    // powi(0) is 1 even at 0, which gives the Kingman atom its value
    let g = |u: f64| u.powi(e1) * (1.0 - u).powi(e2);
    Ok(lambda
        .components
        .iter()
        .map(|c| match *c {
            LambdaComponent::Atom { at, weight } => weight * g(at),
            LambdaComponent::Beta { a, b, weight } => weight * beta_expectation(g, a, b),
        })
        .sum())
}

fn unit_torus() -> Torus {
    Torus::new(1.0).expect("unit side")
}

/// `V_{cr}`, checked against the largest ball of `T(1)`.
pub(crate) fn limit_ball_volume(c: f64, r: f64) -> Result<f64, LawError> {
    let cr = c * r;
    if cr > FRAC_1_SQRT_2 * (1.0 + 1e-12) {
        return Err(LawError::UnsupportedLimitRadius { radius: r, c });
    }
    Ok(unit_torus().ball_volume(cr.min(FRAC_1_SQRT_2))?)
}

fn check_limit_support(c: f64, large: &ClassLaw) -> Result<(), LawError> {
    limit_ball_volume(c, large.sup_radius()).map(|_| ())
}

/// Rate of each transition in which `k` given blocks out of `m` merge into
/// one, for the multiple-merger coalescent driven by large events covering a
/// fraction `V_{cr}` of `T(1)`, plus a Kingman component `β` on pairs.
pub fn lambda_beta_c_rate(
    m: usize,
    k: usize,
    c: f64,
    beta: f64,
    large: &ClassLaw,
) -> Result<f64, LawError> {
    if k < 2 || k > m {
        return Err(LawError::InvalidMergerIndex { p: m, j: k });
    }
    check_limit_support(c, large)?;
    let unit = unit_torus();
    let (ek, em) = (k as i32, (m - k) as i32);
    let event = large.integrate(|r, nu| {
        let v = unit.ball_volume_unchecked((c * r).min(FRAC_1_SQRT_2));
        nu.expect(|u| (v * u).powi(ek) * (1.0 - v * u).powi(em))
    }) / (c * c);
    Ok(event + if k == 2 { beta } else { 0.0 })
}

/// Law of the number of blocks merged by a large event given that it merges
/// at least two, when `n` lineages are uniformly spread: entry `k - 2` is
/// `C(n,k) ∫∫ (uV)^k (1-uV)^{n-k} / Σ_{k'≥2} (…)`.
pub fn merger_size_distribution(n: usize, c: f64, large: &ClassLaw) -> Result<Vec<f64>, LawError> {
    if n < 2 {
        return Err(LawError::InvalidMergerIndex { p: n, j: 2 });
    }
    let weights: Vec<f64> = (2..=n)
        .map(|k| lambda_beta_c_rate(n, k, c, 0.0, large).map(|r| binomial(n, k) * r))
        .collect::<Result<_, _>>()?;
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(LawError::InvalidImpact(
            "large events never merge two blocks".into(),
        ));
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Integral of `weight(r) · density(r)` over one density segment, used to
/// build exact samplers.
pub(crate) fn segment_mass<F: FnMut(f64) -> f64>(
    d: &TabulatedDensity,
    seg: usize,
    a: f64,
    b: f64,
    mut weight: F,
) -> f64 {
    gl64_integrate(|r| d.eval_segment(seg, r) * weight(r), a, b)
}
