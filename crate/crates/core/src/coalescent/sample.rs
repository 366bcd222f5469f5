use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::torus::{Point, Torus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Placement {
    Explicit { points: Vec<Point> },
    Uniform,
    /// Pairwise torus distance at least `L / ln L`.
    WellSeparated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub n: usize,
    pub placement: Placement,
}

const MAX_PLACEMENT_ATTEMPTS: usize = 100_000;

/// Minimum pairwise distance of a well-separated sample on `torus`.
pub fn separation_threshold(torus: &Torus) -> f64 {
    torus.side() / torus.side().ln()
}

/// Whether `points` are pairwise at least `L / ln L` apart.
pub fn is_well_separated(points: &[Point], torus: &Torus) -> bool {
    let d2 = separation_threshold(torus).powi(2);
    points.iter().enumerate().all(|(i, &a)| {
        points[i + 1..]
            .iter()
            .all(|&b| torus.distance_sq(a, b) >= d2)
    })
}

impl SampleConfig {
    pub fn uniform(n: usize) -> Self {
        SampleConfig {
            n,
            placement: Placement::Uniform,
        }
    }

    pub fn well_separated(n: usize) -> Self {
        SampleConfig {
            n,
            placement: Placement::WellSeparated,
        }
    }

    pub fn explicit(points: Vec<Point>) -> Self {
        SampleConfig {
            n: points.len(),
            placement: Placement::Explicit { points },
        }
    }

    /// Checks the configuration against `torus` without drawing anything.
    pub fn validate(&self, torus: &Torus) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::Sample("sample size must be at least 1".into()));
        }
        match &self.placement {
            Placement::Explicit { points } => {
                if points.len() != self.n {
                    return Err(SimError::Sample(format!(
                        "{} points given for a sample of size {}",
                        points.len(),
                        self.n
                    )));
                }
                if let Some(p) = points.iter().find(|p| !torus.is_canonical(**p)) {
                    return Err(SimError::Sample(format!(
                        "point ({}, {}) is outside [-L/2, L/2)²",
                        p.x, p.y
                    )));
                }
            }
            Placement::Uniform => {}
            Placement::WellSeparated => {
                if torus.side() <= 1.0 {
                    return Err(SimError::Sample(
                        "well-separated samples need L > 1".into(),
                    ));
                }
                // discs of radius d/2 around the points must pack with room
                // to spare for rejection sampling to be practical
                let d = separation_threshold(torus);
                let packed = self.n as f64 * std::f64::consts::PI * d * d / 4.0;
                if self.n > 1 && (d > torus.max_radius() || packed > 0.5 * torus.area()) {
                    return Err(SimError::Sample(format!(
                        "{} points cannot be placed {d:.3} apart on a torus of side {}",
                        self.n,
                        torus.side()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, torus: &Torus, rng: &mut R) -> Result<Vec<Point>, SimError> {
        self.validate(torus)?;
        match &self.placement {
            Placement::Explicit { points } => Ok(points.clone()),
            Placement::Uniform => Ok((0..self.n).map(|_| torus.uniform_point(rng)).collect()),
            Placement::WellSeparated => {
                let d2 = separation_threshold(torus).powi(2);
                for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                    let mut pts: Vec<Point> = Vec::with_capacity(self.n);
                    for _ in 0..self.n {
                        let p = torus.uniform_point(rng);
                        if pts.iter().any(|&q| torus.distance_sq(p, q) < d2) {
                            break;
                        }
                        pts.push(p);
                    }
                    if pts.len() == self.n {
                        return Ok(pts);
                    }
                }
                Err(SimError::Sample(format!(
                    "no well-separated placement found in {MAX_PLACEMENT_ATTEMPTS} attempts"
                )))
            }
        }
    }
}
