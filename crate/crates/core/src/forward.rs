//! Forward-in-time simulators: the individual-based model at finite
//! intensity, and the measure-valued process discretised on a grid.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::coalescent::{DualSimulator, SimOptions};
use crate::error::ForwardError;
use crate::event::{EventClass, EventLaw};
use crate::parallel::{map_indexed, Execution};
use crate::sampling::RadiusSampler;
use crate::seed::SeedStream;
use crate::torus::{Grid, Point, Torus};

/// One reproduction event: ball `B(center, radius)` and impact `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReproductionEvent {
    pub center: Point,
    pub radius: f64,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualPopulation {
    pub positions: Vec<Point>,
    pub types: Vec<u8>,
    /// Intensity `m` of the offspring Poisson process.
    pub intensity: f64,
}

/// What one event did to an individual-based population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IndividualStep {
    pub parent_type: Option<u8>,
    pub deaths: usize,
    pub births: usize,
}

impl IndividualPopulation {
    /// Poisson(`m L²`) individuals placed uniformly, with types drawn by
    /// `type_at`.
    pub fn poisson<R: Rng + ?Sized, F: Fn(Point) -> u8>(
        torus: &Torus,
        intensity: f64,
        type_at: F,
        rng: &mut R,
    ) -> Result<Self, ForwardError> {
        if !(intensity > 0.0 && intensity.is_finite()) {
            return Err(ForwardError::Field(format!(
                "intensity must be positive, got {intensity}"
            )));
        }
        let n = Poisson::new(intensity * torus.area())
            .map_err(|e| ForwardError::Field(e.to_string()))?
            .sample(rng) as usize;
        let positions: Vec<Point> = (0..n).map(|_| torus.uniform_point(rng)).collect();
        let types = positions.iter().map(|&p| type_at(p)).collect();
        Ok(IndividualPopulation {
            positions,
            types,
            intensity,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Applies one event: a uniformly chosen occupant of the ball is the parent,
/// every occupant dies with probability `u`, and Poisson(`u m |B|`)
/// offspring of the parent's type are scattered uniformly over the ball.
/// Nothing happens if the ball is empty.
pub fn step_individual_model<R: Rng + ?Sized>(
    pop: &mut IndividualPopulation,
    torus: &Torus,
    event: ReproductionEvent,
    rng: &mut R,
) -> Result<IndividualStep, ForwardError> {
    if !(0.0..=1.0).contains(&event.u) {
        return Err(ForwardError::Field(format!(
            "impact {} is outside [0, 1]",
            event.u
        )));
    }
    let r2 = event.radius * event.radius;
    let inside: Vec<usize> = pop
        .positions
        .iter()
        .enumerate()
        .filter(|(_, p)| torus.distance_sq(event.center, **p) <= r2)
        .map(|(i, _)| i)
        .collect();
    if inside.is_empty() {
        return Ok(IndividualStep::default());
    }
    let parent_type = pop.types[inside[rng.random_range(0..inside.len())]];
    let dead: Vec<usize> = inside
        .into_iter()
        .filter(|_| event.u > 0.0 && rng.random::<f64>() < event.u)
        .collect();
    for &i in dead.iter().rev() {
        pop.positions.swap_remove(i);
        pop.types.swap_remove(i);
    }
    let mean = event.u * pop.intensity * torus.ball_volume(event.radius)?;
    let births = if mean > 0.0 {
        Poisson::new(mean)
            .map_err(|e| ForwardError::Field(e.to_string()))?
            .sample(rng) as usize
    } else {
        0
    };
    for _ in 0..births {
        pop.positions
            .push(torus.uniform_in_ball(event.center, event.radius, rng)?);
        pop.types.push(parent_type);
    }
    Ok(IndividualStep {
        parent_type: Some(parent_type),
        deaths: dead.len(),
        births,
    })
}

/// The type distribution of every cell of a `G × G` grid over `T(L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeField {
    grid: Grid,
    types: usize,
    /// Row-major: `((row · G) + col) · K + type`.
    data: Vec<f64>,
}

const SUM_TOLERANCE: f64 = 1e-12;
const MAX_TYPES: usize = 256;

impl TypeField {
    /// Builds a field from a function giving each cell's vector.
    pub fn from_fn<F: FnMut(usize, usize) -> Vec<f64>>(
        torus: Torus,
        cells: usize,
        types: usize,
        mut f: F,
    ) -> Result<Self, ForwardError> {
        if types == 0 || types > MAX_TYPES {
            return Err(ForwardError::Field(format!(
                "alphabet size must be in 1..={MAX_TYPES}, got {types}"
            )));
        }
        let grid = Grid::new(torus, cells)?;
        let mut data = Vec::with_capacity(cells * cells * types);
        for row in 0..cells {
            for col in 0..cells {
                let v = f(col, row);
                if v.len() != types {
                    return Err(ForwardError::Field(format!(
                        "cell ({col}, {row}) has {} entries, expected {types}",
                        v.len()
                    )));
                }
                data.extend(v);
            }
        }
        let field = TypeField { grid, types, data };
        field.validate()?;
        Ok(field)
    }

    /// Every cell is `δ_a`.
    pub fn constant(torus: Torus, cells: usize, types: usize, a: usize) -> Result<Self, ForwardError> {
        if a >= types {
            return Err(ForwardError::AlphabetMismatch {
                field: types,
                requested: a,
            });
        }
        Self::from_fn(torus, cells, types, |_, _| unit(types, a))
    }

    /// Two types in a checkerboard of `block × block` cell squares.
    pub fn checkerboard(torus: Torus, cells: usize, block: usize) -> Result<Self, ForwardError> {
        if block == 0 {
            return Err(ForwardError::Field("checkerboard squares must be non-empty".into()));
        }
        Self::from_fn(torus, cells, 2, |c, r| unit(2, (c / block + r / block) % 2))
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn types(&self) -> usize {
        self.types
    }

    #[inline]
    fn offset(&self, col: usize, row: usize) -> usize {
        (row * self.grid.cells() + col) * self.types
    }

    pub fn cell(&self, col: usize, row: usize) -> &[f64] {
        let o = self.offset(col, row);
        &self.data[o..o + self.types]
    }

    /// The vector of the cell holding `p`.
    pub fn at(&self, p: Point) -> &[f64] {
        let (c, r) = self.grid.cell_of(p);
        self.cell(c, r)
    }

    /// `ρ(p)({a})`.
    pub fn prob(&self, p: Point, a: usize) -> Result<f64, ForwardError> {
        if a >= self.types {
            return Err(ForwardError::AlphabetMismatch {
                field: self.types,
                requested: a,
            });
        }
        Ok(self.at(p)[a])
    }

    pub fn validate(&self) -> Result<(), ForwardError> {
        for (i, v) in self.data.chunks(self.types).enumerate() {
            let s: f64 = v.iter().sum();
            if v.iter().any(|x| !(*x >= 0.0)) || (s - 1.0).abs() > SUM_TOLERANCE {
                let g = self.grid.cells();
                return Err(ForwardError::Field(format!(
                    "cell ({}, {}) is not a probability vector (sum {s})",
                    i % g,
                    i / g
                )));
            }
        }
        Ok(())
    }

    /// Largest deviation of a cell sum from 1.
    pub fn max_sum_drift(&self) -> f64 {
        self.data
            .chunks(self.types)
            .map(|v| (v.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the binary grid: magic `SLFVTF01`, `L` as f64, `G` and `K` as
    /// u32, then the cell vectors row by row, all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(GRID_MAGIC)?;
        w.write_all(&self.grid.torus().side().to_le_bytes())?;
        w.write_all(&(self.grid.cells() as u32).to_le_bytes())?;
        w.write_all(&(self.types as u32).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, ForwardError> {
        let io = |e: std::io::Error| ForwardError::Format(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != GRID_MAGIC {
            return Err(ForwardError::Format("bad magic".into()));
        }
        let mut b8 = [0u8; 8];
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b8).map_err(io)?;
        let side = f64::from_le_bytes(b8);
        r.read_exact(&mut b4).map_err(io)?;
        let cells = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(io)?;
        let types = u32::from_le_bytes(b4) as usize;
        let torus = Torus::new(side)?;
        let mut data = vec![0.0; cells * cells * types];
        for x in &mut data {
            r.read_exact(&mut b8).map_err(io)?;
            *x = f64::from_le_bytes(b8);
        }
        let mut it = data.chunks(types.max(1));
        Self::from_fn(torus, cells, types, |_, _| {
            it.next().map(<[f64]>::to_vec).unwrap_or_default()
        })
    }

    /// CSV with columns `col,row,x,y,p0,…`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ForwardError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["col".to_string(), "row".into(), "x".into(), "y".into()];
        header.extend((0..self.types).map(|k| format!("p{k}")));
        let err = |e: csv::Error| ForwardError::Format(e.to_string());
        out.write_record(&header).map_err(err)?;
        let g = self.grid.cells();
        for row in 0..g {
            for col in 0..g {
                let c = self.grid.center(col, row);
                let mut rec = vec![col.to_string(), row.to_string(), c.x.to_string(), c.y.to_string()];
                rec.extend(self.cell(col, row).iter().map(|p| p.to_string()));
                out.write_record(&rec).map_err(err)?;
            }
        }
        out.flush().map_err(|e| ForwardError::Format(e.to_string()))
    }
}

const GRID_MAGIC: &[u8; 8] = b"SLFVTF01";

fn unit(k: usize, a: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[a] = 1.0;
    v
}

/// Outcome of [`step_type_field`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldStep {
    /// Cells were updated with the parent type.
    Applied { parent_type: usize, cells: usize },
    /// The ball is smaller than a cell diagonal and the event was skipped.
    Skipped,
}

/// Picks `z` uniform in the ball, a type `k` from the cell of `z`, and
/// sets every cell whose centre lies in the ball to `(1 - u) ρ + u δ_k`.
pub fn step_type_field<R: Rng + ?Sized>(
    field: &mut TypeField,
    event: ReproductionEvent,
    rng: &mut R,
) -> Result<FieldStep, ForwardError> {
    if !(0.0..=1.0).contains(&event.u) {
        return Err(ForwardError::Field(format!(
            "impact {} is outside [0, 1]",
            event.u
        )));
    }
    let grid = field.grid;
    if event.radius < grid.cell_diagonal() {
        return Ok(FieldStep::Skipped);
    }
    let torus = grid.torus();
    let z = torus.uniform_in_ball(event.center, event.radius, rng)?;
    let parent = field.at(z);
    let x: f64 = rng.random();
    let mut acc = 0.0;
    let mut k = field.types - 1;
    for (i, p) in parent.iter().enumerate() {
        acc += p;
        if x < acc {
            k = i;
            break;
        }
    }
    if event.u == 0.0 {
        return Ok(FieldStep::Applied {
            parent_type: k,
            cells: 0,
        });
    }
    let g = grid.cells();
    let h = grid.cell_width();
    let r2 = event.radius * event.radius;
    // scan only the cells of the bounding box, wrapping indices
    let span = ((event.radius / h).ceil() as isize + 1).min(g as isize);
    let (c0, r0) = grid.cell_of(event.center);
    let cols = index_window(c0, span, g);
    let rows = index_window(r0, span, g);
    let keep = 1.0 - event.u;
    let mut touched = 0;
    for &row in &rows {
        for &col in &cols {
            if torus.distance_sq(event.center, grid.center(col, row)) <= r2 {
                let o = field.offset(col, row);
                for (t, v) in field.data[o..o + field.types].iter_mut().enumerate() {
                    *v = keep * *v + if t == k { event.u } else { 0.0 };
                }
                touched += 1;
            }
        }
    }
    Ok(FieldStep::Applied {
        parent_type: k,
        cells: touched,
    })
}

fn index_window(center: usize, span: isize, g: usize) -> Vec<usize> {
    if 2 * span + 1 >= g as isize {
        return (0..g).collect();
    }
    (-span..=span)
        .map(|d| (center as isize + d).rem_euclid(g as isize) as usize)
        .collect()
}

/// Whole-torus event generator for the forward process.
#[derive(Debug)]
pub struct ForwardDriver {
    torus: Torus,
    parts: Vec<(EventClass, f64, f64, RadiusSampler)>,
    total_rate: f64,
    law: EventLaw,
}

impl ForwardDriver {
    pub fn new(law: &EventLaw, torus: Torus) -> Result<Self, ForwardError> {
        let mut parts = Vec::new();
        for class in EventClass::ALL {
            let Some(cl) = law.class(class) else { continue };
            let rate = torus.area() * cl.total_mass() / law.rate_divisor(class);
            if rate > 0.0 {
                if !rate.is_finite() {
                    return Err(ForwardError::Field("event rate is infinite".into()));
                }
                let sampler = RadiusSampler::new(&cl.radii, |_| 1.0, &[]);
                parts.push((class, law.radius_scale(class), rate, sampler));
            }
        }
        let total_rate = parts.iter().map(|p| p.2).sum();
        Ok(ForwardDriver {
            torus,
            parts,
            total_rate,
            law: law.clone(),
        })
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    /// Smallest event-ball radius with positive probability.
    pub fn min_radius(&self) -> f64 {
        self.parts
            .iter()
            .map(|(c, s, _, _)| self.law.class(*c).expect("active").radii.min_radius() * s)
            .fold(f64::INFINITY, f64::min)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ReproductionEvent {
        let mut x = rng.random::<f64>() * self.total_rate;
        let mut pick = &self.parts[self.parts.len() - 1];
        for p in &self.parts {
            if x < p.2 {
                pick = p;
                break;
            }
            x -= p.2;
        }
        let (class, scale, _, sampler) = pick;
        let r = sampler.sample(rng);
        let law = self.law.class(*class).expect("active class");
        ReproductionEvent {
            center: self.torus.uniform_point(rng),
            radius: (scale * r).min(self.torus.max_radius()),
            u: law.impact.at(r).sample(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutcome {
    pub field: TypeField,
    pub events: u64,
    pub skipped: u64,
}

/// Evolves `field` over `[0, t_end]` under the Poisson drive of `law`.
pub fn run_forward<R: Rng + ?Sized>(
    field0: &TypeField,
    law: &EventLaw,
    t_end: f64,
    max_events: u64,
    rng: &mut R,
) -> Result<ForwardOutcome, ForwardError> {
    let driver = ForwardDriver::new(law, field0.grid.torus())?;
    run_with_driver(field0, &driver, t_end, max_events, rng)
}

fn run_with_driver<R: Rng + ?Sized>(
    field0: &TypeField,
    driver: &ForwardDriver,
    t_end: f64,
    max_events: u64,
    rng: &mut R,
) -> Result<ForwardOutcome, ForwardError> {
    let mut field = field0.clone();
    let (mut events, mut skipped) = (0u64, 0u64);
    if driver.total_rate > 0.0 {
        let mut t = 0.0;
        loop {
            let e: f64 = Exp1.sample(rng);
            t += e / driver.total_rate;
            if t > t_end {
                break;
            }
            if events >= max_events {
                return Err(ForwardError::EventCap(max_events));
            }
            events += 1;
            if step_type_field(&mut field, driver.draw(rng), rng)? == FieldStep::Skipped {
                skipped += 1;
            }
        }
    }
    Ok(ForwardOutcome {
        field,
        events,
        skipped,
    })
}

/// A Monte Carlo mean with a normal-approximation 99% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
}

const Z99: f64 = 2.575_829_303_548_901;

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let sd = var.sqrt();
        let half = Z99 * sd / (n.max(1) as f64).sqrt();
        Estimate {
            mean,
            sd,
            n,
            lo: mean - half,
            hi: mean + half,
        }
    }

    pub fn overlaps(&self, other: &Estimate) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub pattern: Vec<usize>,
    pub exact_at_zero: f64,
    pub forward: Estimate,
    pub dual: Estimate,
    pub agree: bool,
}

/// Setup of a duality comparison.
#[derive(Debug, Clone)]
pub struct DualitySetup<'a> {
    pub field0: &'a TypeField,
    pub points: &'a [Point],
    /// Each pattern assigns a type to every sample point.
    pub patterns: &'a [Vec<usize>],
    pub time: f64,
    pub law: &'a EventLaw,
    pub replicates: usize,
    pub max_events: u64,
}

/// One replicate of a duality comparison: the forward and dual value of
/// every pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityRow {
    pub replicate: usize,
    pub forward: Vec<f64>,
    pub dual: Vec<f64>,
    pub error: Option<String>,
}

/// A validated duality comparison, run replicate by replicate.
#[derive(Debug)]
pub struct Duality {
    field0: TypeField,
    points: Vec<Point>,
    patterns: Vec<Vec<usize>>,
    time: f64,
    max_events: u64,
    driver: ForwardDriver,
    dual: DualSimulator,
}

const FORWARD_STREAM: u64 = 0x666f_7277;
const DUAL_STREAM: u64 = 0x6475_616c;

impl Duality {
    pub fn new(setup: &DualitySetup<'_>) -> Result<Self, ForwardError> {
        let field0 = setup.field0;
        let grid = field0.grid;
        let torus = grid.torus();
        for pat in setup.patterns {
            if pat.len() != setup.points.len() {
                return Err(ForwardError::Field(format!(
                    "pattern has {} types for {} points",
                    pat.len(),
                    setup.points.len()
                )));
            }
            if let Some(&a) = pat.iter().find(|&&a| a >= field0.types) {
                return Err(ForwardError::AlphabetMismatch {
                    field: field0.types,
                    requested: a,
                });
            }
        }
        let driver = ForwardDriver::new(setup.law, torus)?;
        if driver.total_rate > 0.0 && driver.min_radius() < grid.cell_diagonal() {
            return Err(ForwardError::ResolutionTooCoarse {
                radius: driver.min_radius(),
                diagonal: grid.cell_diagonal(),
            });
        }
        let points: Vec<Point> = setup
            .points
            .iter()
            .map(|&p| grid.snap(torus.canonical(p.x, p.y)))
            .collect();
        let opts = SimOptions {
            grid: Some(grid.cells()),
            track_pairs: false,
            ..SimOptions::horizon(setup.time)
        };
        let dual = DualSimulator::new(setup.law, torus, opts)?;
        Ok(Duality {
            field0: field0.clone(),
            points,
            patterns: setup.patterns.to_vec(),
            time: setup.time,
            max_events: setup.max_events,
            driver,
            dual,
        })
    }

    fn forward_value(&self, f: &TypeField, pat: &[usize]) -> f64 {
        self.points.iter().zip(pat).map(|(&x, &a)| f.at(x)[a]).product()
    }

    fn try_replicate(&self, index: usize, seeds: &SeedStream) -> Result<(Vec<f64>, Vec<f64>), ForwardError> {
        let mut rf = seeds.rng(FORWARD_STREAM, index as u64);
        let out = run_with_driver(&self.field0, &self.driver, self.time, self.max_events, &mut rf)?;
        let fw = self
            .patterns
            .iter()
            .map(|p| self.forward_value(&out.field, p))
            .collect();
        let mut rd = seeds.rng(DUAL_STREAM, index as u64);
        let rec = self.dual.run(&self.points, &mut rd)?.record;
        let dv = self
            .patterns
            .iter()
            .map(|pat| {
                rec.final_state
                    .blocks()
                    .iter()
                    .map(|b| {
                        let a = pat[b.members[0]];
                        if b.members.iter().all(|&m| pat[m] == a) {
                            self.field0.at(b.label)[a]
                        } else {
                            0.0
                        }
                    })
                    .product()
            })
            .collect();
        Ok((fw, dv))
    }

    pub fn replicate(&self, index: usize, seeds: &SeedStream) -> DualityRow {
        match self.try_replicate(index, seeds) {
            Ok((forward, dual)) => DualityRow {
                replicate: index,
                forward,
                dual,
                error: None,
            },
            Err(e) => DualityRow {
                replicate: index,
                forward: Vec::new(),
                dual: Vec::new(),
                error: Some(e.to_string()),
            },
        }
    }

    /// Reports over the rows without an error.
    pub fn summarize(&self, rows: &[DualityRow]) -> Vec<DualityReport> {
        let ok: Vec<&DualityRow> = rows.iter().filter(|r| r.error.is_none()).collect();
        self.patterns
            .iter()
            .enumerate()
            .map(|(j, pat)| {
                let fw: Vec<f64> = ok.iter().map(|r| r.forward[j]).collect();
                let dv: Vec<f64> = ok.iter().map(|r| r.dual[j]).collect();
                let forward = Estimate::from_samples(&fw);
                let dual = Estimate::from_samples(&dv);
                DualityReport {
                    pattern: pat.clone(),
                    exact_at_zero: self.forward_value(&self.field0, pat),
                    agree: forward.overlaps(&dual),
                    forward,
                    dual,
                }
            })
            .collect()
    }
}

/// Estimates `E[∏ ρ_t(x_i)({a_i})]` forwards and through the dual, for each
/// type pattern, with one forward run and one dual run per replicate.
pub fn duality_check(
    setup: &DualitySetup<'_>,
    seeds: SeedStream,
    exec: Execution,
) -> Result<Vec<DualityReport>, ForwardError> {
    let duality = Duality::new(setup)?;
    let per_rep: Vec<Result<(Vec<f64>, Vec<f64>), ForwardError>> =
        map_indexed(exec, 0..setup.replicates, |i| duality.try_replicate(i, &seeds));
    let mut rows = Vec::with_capacity(setup.replicates);
    for (i, r) in per_rep.into_iter().enumerate() {
        let (forward, dual) = r?;
        rows.push(DualityRow {
            replicate: i,
            forward,
            dual,
            error: None,
        });
    }
    Ok(duality.summarize(&rows))
}

impl crate::stats::Experiment for Duality {
    type Row = DualityRow;
    type Summary = Vec<DualityReport>;

    fn groups(&self) -> usize {
        1
    }

    fn replicate(&self, _group: usize, index: usize, seeds: &SeedStream) -> DualityRow {
        Duality::replicate(self, index, seeds)
    }

    fn summarize(&self, rows: &[DualityRow]) -> Vec<DualityReport> {
        Duality::summarize(self, rows)
    }
}
