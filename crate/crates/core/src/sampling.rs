//! Exact samplers for weighted radius measures.

use rand::Rng;

use crate::event::{segment_mass, RadiusMeasure};

type Weight = Box<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy)]
enum Part {
    Atom(f64),
    /// A slice `[a, b]` of density segment `seg`; proposals are uniform and
    /// accepted against `bound`.
    Slice { seg: usize, a: f64, b: f64, bound: f64 },
}

/// Draws from `w(r) μ(dr) / ∫ w dμ` where `w` is non-decreasing between
/// consecutive breakpoints.
pub struct RadiusSampler {
    measure: RadiusMeasure,
    weight: Weight,
    parts: Vec<Part>,
    cumulative: Vec<f64>,
    total: f64,
}

impl std::fmt::Debug for RadiusSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RadiusSampler")
            .field("parts", &self.parts)
            .field("total", &self.total)
            .finish()
    }
}

const SLICES_PER_SEGMENT: usize = 16;

impl RadiusSampler {
    pub fn new<W>(measure: &RadiusMeasure, weight: W, breakpoints: &[f64]) -> Self
    where
        W: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let mut parts = Vec::new();
        let mut masses = Vec::new();
        for a in &measure.atoms {
            let m = a.weight * weight(a.radius);
            if m > 0.0 {
                parts.push(Part::Atom(a.radius));
                masses.push(m);
            }
        }
        if let Some(d) = &measure.density {
            for (seg, a, b) in measure.segments() {
                let mut cuts: Vec<f64> = (0..=SLICES_PER_SEGMENT)
                    .map(|i| a + (b - a) * i as f64 / SLICES_PER_SEGMENT as f64)
                    .collect();
                cuts.extend(breakpoints.iter().copied().filter(|&x| x > a && x < b));
                cuts.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
                cuts.dedup();
                for w in cuts.windows(2) {
                    let (lo, hi) = (w[0], w[1]);
                    let m = segment_mass(d, seg, lo, hi, &weight);
                    if m > 0.0 {
                        let dmax = d.eval_segment(seg, lo).max(d.eval_segment(seg, hi));
                        // the weight may jump at `lo` itself, so probe just inside
                        let wmax = weight(hi).max(weight(lo + 1e-12 * (hi - lo)));
                        parts.push(Part::Slice {
                            seg,
                            a: lo,
                            b: hi,
                            bound: dmax * wmax * (1.0 + 1e-9),
                        });
                        masses.push(m);
                    }
                }
            }
        }
        let mut cumulative = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in masses {
            acc += m;
            cumulative.push(acc);
        }
        RadiusSampler {
            measure: measure.clone(),
            weight: Box::new(weight),
            parts,
            cumulative,
            total: acc,
        }
    }

    /// `∫ w dμ`.
    pub fn total(&self) -> f64 {
        self.total
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let part = if self.parts.len() == 1 {
            self.parts[0]
        } else {
            let x = rng.random::<f64>() * self.total;
            let i = self.cumulative.partition_point(|&c| c <= x);
            self.parts[i.min(self.parts.len() - 1)]
        };
        match part {
            Part::Atom(r) => r,
            Part::Slice { seg, a, b, bound } => {
                let d = self.measure.density.as_ref().expect("slice implies density");
                loop {
                    let r = rng.random_range(a..=b);
                    let y = rng.random::<f64>() * bound;
                    if y <= d.eval_segment(seg, r) * (self.weight)(r) {
                        return r;
                    }
                }
            }
        }
    }
}
