use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LawError, StatsError};
use crate::event::{check_admissibility, ClassLaw, EventClass, EventLaw};

const EPS: f64 = 1e-12;

/// `scale · L^power · (ln L)^log_power · (ln ln L)^loglog_power`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Growth {
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub power: f64,
    #[serde(default)]
    pub log_power: f64,
    #[serde(default)]
    pub loglog_power: f64,
}

fn one() -> f64 {
    1.0
}

/// Where a [`Growth`] goes as `L → ∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Limit {
    Zero,
    Finite(f64),
    Infinite,
}

impl Growth {
    pub fn power(scale: f64, power: f64) -> Self {
        Growth {
            scale,
            power,
            log_power: 0.0,
            loglog_power: 0.0,
        }
    }

    pub fn new(scale: f64, power: f64, log_power: f64) -> Self {
        Growth {
            scale,
            power,
            log_power,
            loglog_power: 0.0,
        }
    }

    pub fn at(&self, side: f64) -> f64 {
        let l = side.ln();
        let mut v = self.scale * side.powf(self.power);
        if self.log_power != 0.0 {
            v *= l.powf(self.log_power);
        }
        if self.loglog_power != 0.0 {
            v *= l.ln().powf(self.loglog_power);
        }
        v
    }

    fn mul(self, o: Growth) -> Growth {
        Growth {
            scale: self.scale * o.scale,
            power: self.power + o.power,
            log_power: self.log_power + o.log_power,
            loglog_power: self.loglog_power + o.loglog_power,
        }
    }

    fn pow(self, k: f64) -> Growth {
        Growth {
            scale: self.scale.powf(k),
            power: self.power * k,
            log_power: self.log_power * k,
            loglog_power: self.loglog_power * k,
        }
    }

    fn limit(&self) -> Limit {
        for e in [self.power, self.log_power, self.loglog_power] {
            if e > EPS {
                return Limit::Infinite;
            }
            if e < -EPS {
                return Limit::Zero;
            }
        }
        Limit::Finite(self.scale)
    }

    fn to_infinity(&self) -> bool {
        self.limit() == Limit::Infinite
    }

    fn validate(&self, name: &str) -> Result<(), StatsError> {
        let finite = [self.scale, self.power, self.log_power, self.loglog_power]
            .iter()
            .all(|x| x.is_finite());
        if !finite || self.scale <= 0.0 {
            return Err(StatsError::InvalidRegime(format!(
                "{name} needs a positive scale and finite exponents"
            )));
        }
        Ok(())
    }
}

/// How `ψ_L` and `ρ_L` grow with `L`. `rho = None` means `ρ_L ≡ ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    pub psi: Growth,
    #[serde(default)]
    pub rho: Option<Growth>,
}

/// Which limit theorem applies, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "kebab-case")]
pub enum LimitCase {
    /// `α < 1`, `ψ²/ρ → ∞`: Kingman, coalescence through large events.
    KingmanLarge { alpha: f64 },
    /// `α < 1`, `ψ²/ρ → b`, `ψ² log L / ρ → ∞`: Kingman, both classes move
    /// lineages.
    KingmanMixed { alpha: f64, b: f64 },
    /// Kingman driven by small events alone.
    KingmanSmall,
    /// `ψ = cL`, `ρ/L² → b`: coalescing Brownian labels on `T(1)`.
    SpatialLimit { b: f64, c: f64 },
    /// `ψ = cL`, `ρ/L² → ∞`, `2πσ_s² ρ/(L² log L) → β`.
    LambdaCoalescent { beta: f64, c: f64 },
}

impl LimitCase {
    /// Whether the unlabelled limit is Kingman's coalescent.
    pub fn is_kingman(&self) -> bool {
        matches!(
            self,
            LimitCase::KingmanLarge { .. } | LimitCase::KingmanMixed { .. } | LimitCase::KingmanSmall
        )
    }
}

impl RegimeSpec {
    pub fn small_only() -> Self {
        RegimeSpec {
            psi: Growth::power(1.0, 0.0),
            rho: None,
        }
    }

    /// `lim log ψ_L / log L`.
    pub fn alpha(&self) -> f64 {
        self.psi.power
    }

    pub fn psi_at(&self, side: f64) -> f64 {
        self.psi.at(side)
    }

    pub fn rho_at(&self, side: f64) -> f64 {
        self.rho.map_or(f64::INFINITY, |r| r.at(side))
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        self.psi.validate("psi")?;
        let Some(rho) = self.rho else { return Ok(()) };
        rho.validate("rho")?;
        let alpha = self.alpha();
        if !(alpha > EPS && alpha <= 1.0 + EPS) {
            return Err(StatsError::InvalidRegime(format!(
                "alpha = lim log psi / log L must lie in (0, 1], got {alpha}"
            )));
        }
        if !rho.to_infinity() {
            return Err(StatsError::InvalidRegime(
                "rho must increase to infinity".into(),
            ));
        }
        Ok(())
    }

    /// Selects the limit theorem case. `sigma_s2` is the small-event
    /// dispersal variance, needed for `β`.
    pub fn classify(&self, sigma_s2: f64) -> Result<LimitCase, StatsError> {
        self.validate()?;
        let Some(rho) = self.rho else {
            return Ok(LimitCase::KingmanSmall);
        };
        let inv_rho = rho.pow(-1.0);
        let log = Growth::new(1.0, 0.0, 1.0);
        let l2log = Growth::new(1.0, 2.0, 1.0);
        let alpha = self.alpha();

        if alpha < 1.0 - EPS {
            let psi2_rho = self.psi.pow(2.0).mul(inv_rho);
            let psi2log_rho = psi2_rho.mul(log);
            let psi4_rho = self.psi.pow(4.0).mul(inv_rho);
            let l2log_rho = l2log.mul(inv_rho);
            let mut cases = Vec::new();
            match psi2_rho.limit() {
                Limit::Infinite => cases.push(LimitCase::KingmanLarge { alpha }),
                lim if psi2log_rho.to_infinity() => {
                    let b = if let Limit::Finite(b) = lim { b } else { 0.0 };
                    cases.push(LimitCase::KingmanMixed { alpha, b });
                }
                _ => {}
            }
            if psi4_rho.limit() != Limit::Infinite || l2log_rho.limit() == Limit::Zero {
                cases.push(LimitCase::KingmanSmall);
            }
            return match cases.len() {
                1 => Ok(cases[0]),
                0 => Err(StatsError::UncoveredRegime(
                    "no case of the alpha < 1 theorem matches these psi and rho".into(),
                )),
                _ => Err(StatsError::UncoveredRegime(
                    "the alpha < 1 cases overlap for these psi and rho".into(),
                )),
            };
        }

        let rho_l2log = rho.mul(l2log.pow(-1.0));
        if rho_l2log.to_infinity() {
            return Ok(LimitCase::KingmanSmall);
        }
        let exact_cl = (self.psi.power - 1.0).abs() < EPS
            && self.psi.log_power.abs() < EPS
            && self.psi.loglog_power.abs() < EPS;
        if !exact_cl {
            return Err(StatsError::UncoveredRegime(
                "alpha = 1 with psi not proportional to L and rho = O(L² log L)".into(),
            ));
        }
        let c = self.psi.scale;
        match rho.mul(Growth::power(1.0, -2.0)).limit() {
            Limit::Zero => Ok(LimitCase::SpatialLimit { b: 0.0, c }),
            Limit::Finite(b) => Ok(LimitCase::SpatialLimit { b, c }),
            Limit::Infinite => {
                let lim = match rho_l2log.limit() {
                    Limit::Finite(v) => v,
                    _ => 0.0,
                };
                Ok(LimitCase::LambdaCoalescent {
                    beta: 2.0 * PI * sigma_s2 * lim,
                    c,
                })
            }
        }
    }
}

fn class_variance(l: Option<&ClassLaw>) -> f64 {
    l.map_or(0.0, |l| 0.5 * PI * l.integrate(|r, nu| r.powi(4) * nu.mean()))
}

/// The timescale `φ_L` of the limit theorem that covers `regime`, with the
/// dispersal variances taken from the class laws of `law`.
pub fn predicted_timescale(regime: &RegimeSpec, side: f64, law: &EventLaw) -> Result<f64, StatsError> {
    if !(side > 1.0 && side.is_finite()) {
        return Err(StatsError::InvalidSetup(format!(
            "torus side must exceed 1, got {side}"
        )));
    }
    let s2 = class_variance(law.small.as_ref());
    let b2 = class_variance(law.large.as_ref());
    let l2log = side * side * side.ln();
    let need = |v: f64, what: &str| {
        if v > 0.0 {
            Ok(v)
        } else {
            Err(StatsError::InvalidSetup(format!(
                "the timescale needs a positive {what}"
            )))
        }
    };
    match regime.classify(s2)? {
        LimitCase::KingmanLarge { alpha } => {
            let psi = regime.psi_at(side);
            Ok((1.0 - alpha) * regime.rho_at(side) * l2log / (2.0 * PI * need(b2, "large-event variance")? * psi * psi))
        }
        LimitCase::KingmanMixed { alpha, b } => {
            Ok((1.0 - alpha) * l2log / (2.0 * PI * need(s2 + b * b2, "dispersal variance")?))
        }
        LimitCase::KingmanSmall => Ok(l2log / (2.0 * PI * need(s2, "small-event variance")?)),
        LimitCase::SpatialLimit { .. } | LimitCase::LambdaCoalescent { .. } => Ok(regime.rho_at(side)),
    }
}

/// Event classes plus the growth of `ψ_L` and `ρ_L`: everything needed to
/// build the law on any torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub small: Option<ClassLaw>,
    pub large: Option<ClassLaw>,
    pub regime: RegimeSpec,
}

impl Model {
    pub fn small_only(small: ClassLaw) -> Self {
        Model {
            small: Some(small),
            large: None,
            regime: RegimeSpec::small_only(),
        }
    }

    pub fn law_at(&self, side: f64) -> Result<EventLaw, LawError> {
        let rho = if self.large.is_some() {
            self.regime.rho_at(side)
        } else {
            f64::INFINITY
        };
        let law = EventLaw::new(self.small.clone(), self.large.clone(), self.regime.psi_at(side), rho)?;
        check_admissibility(&law)?;
        Ok(law)
    }

    pub fn sigma_small2(&self) -> f64 {
        class_variance(self.small.as_ref())
    }

    pub fn sigma_large2(&self) -> f64 {
        class_variance(self.large.as_ref())
    }

    fn effective_regime(&self) -> RegimeSpec {
        if self.large.is_some() {
            self.regime
        } else {
            RegimeSpec {
                rho: None,
                ..self.regime
            }
        }
    }

    pub fn case(&self) -> Result<LimitCase, StatsError> {
        self.effective_regime().classify(self.sigma_small2())
    }

    pub fn timescale(&self, side: f64) -> Result<f64, StatsError> {
        predicted_timescale(&self.effective_regime(), side, &self.law_at(side)?)
    }

    /// Whether some class can ever merge two lineages.
    pub fn can_coalesce(&self) -> bool {
        let small = self.small.as_ref().is_some_and(|l| l.lambda_mass() > 0.0);
        let large = self.regime.rho.is_some() && self.large.as_ref().is_some_and(|l| l.lambda_mass() > 0.0);
        small || large
    }

    /// Default gathering thresholds `2R^s` and `2R^B ψ_L` for the active
    /// classes, in that order.
    pub fn gathering_thresholds(&self, side: f64) -> Vec<f64> {
        let mut t = Vec::new();
        if let Some(s) = &self.small {
            t.push(2.0 * s.sup_radius());
        }
        if let (Some(l), Some(_)) = (&self.large, self.regime.rho) {
            t.push(2.0 * l.sup_radius() * self.regime.psi_at(side));
        }
        t
    }

    pub fn class_of_threshold(&self, k: usize) -> EventClass {
        if k == 0 && self.small.is_some() {
            EventClass::Small
        } else {
            EventClass::Large
        }
    }
}
