//! Geometry on the flat square torus `T(L)`.
//!
//! Points are stored as their canonical representative in the half-open box
//! `[-L/2, L/2)²`. All distances are torus distances (minimum image), and
//! membership in a ball is always decided with [`Torus::distance`].

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// A point of the torus, normally in canonical form for the torus it was
/// produced by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point { x, y }
    }
}

/// The torus `T(L)` of side `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Torus {
    side: f64,
}

impl Torus {
    pub fn new(side: f64) -> Result<Self, GeometryError> {
        if !(side.is_finite() && side > 0.0) {
            return Err(GeometryError::InvalidSide(side));
        }
        Ok(Torus { side })
    }

    #[inline]
    pub fn side(&self) -> f64 {
        self.side
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.side * self.side
    }

    /// Largest possible torus distance, `L/√2`.
    #[inline]
    pub fn max_radius(&self) -> f64 {
        self.side * FRAC_1_SQRT_2
    }

    #[inline]
    fn wrap(&self, v: f64) -> f64 {
        let l = self.side;
        let w = v - l * ((v + 0.5 * l) / l).floor();
        // floor rounding can land exactly on the excluded endpoint
        if w >= 0.5 * l {
            w - l
        } else if w < -0.5 * l {
            w + l
        } else {
            w
        }
    }

    /// Canonical representative of `(x, y)` in `[-L/2, L/2)²`.
    #[inline]
    pub fn canonical(&self, x: f64, y: f64) -> Point {
        Point {
            x: self.wrap(x),
            y: self.wrap(y),
        }
    }

    #[inline]
    pub fn is_canonical(&self, p: Point) -> bool {
        let h = 0.5 * self.side;
        p.x >= -h && p.x < h && p.y >= -h && p.y < h
    }

    #[inline]
    pub fn translate(&self, p: Point, dx: f64, dy: f64) -> Point {
        self.canonical(p.x + dx, p.y + dy)
    }

    /// Minimum-image displacement from `a` to `b`, each coordinate in
    /// `[-L/2, L/2)`.
    #[inline]
    pub fn displacement(&self, a: Point, b: Point) -> (f64, f64) {
        (self.wrap(b.x - a.x), self.wrap(b.y - a.y))
    }

    /// Torus distance: the minimum of the Euclidean distances between the
    /// periodic images of `a` and `b`.
    #[inline]
    pub fn distance(&self, a: Point, b: Point) -> f64 {
        let (dx, dy) = self.displacement(a, b);
        dx.hypot(dy)
    }

    #[inline]
    pub fn distance_sq(&self, a: Point, b: Point) -> f64 {
        let (dx, dy) = self.displacement(a, b);
        dx * dx + dy * dy
    }

    fn check_radius(&self, r: f64) -> Result<(), GeometryError> {
        // tolerate rounding at the upper end, `L/√2` is frequently computed
        if !(r >= 0.0 && r <= self.max_radius() * (1.0 + 1e-12)) {
            return Err(GeometryError::RadiusOutOfRange {
                radius: r,
                max: self.max_radius(),
            });
        }
        Ok(())
    }

    /// Area of the torus ball `B(x, r)`. For `r > L/2` the disc overlaps
    /// itself and the four circular caps beyond the box are removed.
    pub fn ball_volume(&self, r: f64) -> Result<f64, GeometryError> {
        self.check_radius(r)?;
        Ok(self.ball_volume_unchecked(r.min(self.max_radius())))
    }

    pub(crate) fn ball_volume_unchecked(&self, r: f64) -> f64 {
        let h = 0.5 * self.side;
        if r <= h {
            return PI * r * r;
        }
        if r >= self.max_radius() {
            return self.area();
        }
        let cap = r * r * (h / r).acos() - h * (r * r - h * h).sqrt();
        (PI * r * r - 4.0 * cap).min(self.area())
    }

    pub fn uniform_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let h = 0.5 * self.side;
        let x = rng.random_range(-h..h);
        let y = rng.random_range(-h..h);
        Point { x, y }
    }

    /// Uniform point of the torus ball `B(center, r)`.
    pub fn uniform_in_ball<R: Rng + ?Sized>(
        &self,
        center: Point,
        r: f64,
        rng: &mut R,
    ) -> Result<Point, GeometryError> {
        if !(r > 0.0) {
            return Err(GeometryError::NonPositiveRadius(r));
        }
        self.check_radius(r)?;
        Ok(self.uniform_in_ball_unchecked(center, r, rng))
    }

    #[inline]
    pub(crate) fn uniform_in_ball_unchecked<R: Rng + ?Sized>(
        &self,
        center: Point,
        r: f64,
        rng: &mut R,
    ) -> Point {
        if r <= 0.5 * self.side {
            // the planar disc embeds injectively, so sample it and wrap
            let (dx, dy) = uniform_in_disc(r, rng);
            return self.canonical(center.x + dx, center.y + dy);
        }
        let r2 = r * r;
        loop {
            let p = self.uniform_point(rng);
            if self.distance_sq(center, p) <= r2 {
                return p;
            }
        }
    }

    /// Same point expressed on a torus whose side is `factor` times this
    /// one.
    #[inline]
    pub fn rescale_point(&self, p: Point, target: &Torus) -> Point {
        let f = target.side / self.side;
        target.canonical(p.x * f, p.y * f)
    }
}

/// A `G × G` grid of square cells covering `T(L)`. A point belongs to the
/// cell whose half-open square contains it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    torus: Torus,
    cells: usize,
}

impl Grid {
    pub fn new(torus: Torus, cells: usize) -> Result<Self, GeometryError> {
        if cells == 0 {
            return Err(GeometryError::EmptyGrid);
        }
        Ok(Grid { torus, cells })
    }

    #[inline]
    pub fn torus(&self) -> Torus {
        self.torus
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.cells
    }

    #[inline]
    pub fn cell_width(&self) -> f64 {
        self.torus.side / self.cells as f64
    }

    #[inline]
    pub fn cell_diagonal(&self) -> f64 {
        self.cell_width() * std::f64::consts::SQRT_2
    }

    #[inline]
    fn coord_index(&self, v: f64) -> usize {
        let i = ((v + 0.5 * self.torus.side) / self.cell_width()).floor();
        (i.max(0.0) as usize).min(self.cells - 1)
    }

    /// `(column, row)` of the cell holding `p`.
    #[inline]
    pub fn cell_of(&self, p: Point) -> (usize, usize) {
        (self.coord_index(p.x), self.coord_index(p.y))
    }

    #[inline]
    pub fn center(&self, col: usize, row: usize) -> Point {
        let h = self.cell_width();
        let o = -0.5 * self.torus.side;
        Point {
            x: o + (col as f64 + 0.5) * h,
            y: o + (row as f64 + 0.5) * h,
        }
    }

    /// Centre of the cell holding `p`.
    #[inline]
    pub fn snap(&self, p: Point) -> Point {
        let (c, r) = self.cell_of(p);
        self.center(c, r)
    }
}

/// Uniform displacement in the planar disc of radius `r`, by rejection from
/// the bounding square.
#[inline]
pub fn uniform_in_disc<R: Rng + ?Sized>(r: f64, rng: &mut R) -> (f64, f64) {
    loop {
        let dx: f64 = rng.random_range(-1.0..1.0);
        let dy: f64 = rng.random_range(-1.0..1.0);
        if dx * dx + dy * dy <= 1.0 {
            return (dx * r, dy * r);
        }
    }
}

/// Area of the intersection of two planar discs of radius `r` whose centres
/// are `d` apart.
pub fn lens_area(d: f64, r: f64) -> Result<f64, GeometryError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(GeometryError::NonPositiveRadius(r));
    }
    if !(d >= 0.0) {
        return Err(GeometryError::NegativeDistance(d));
    }
    Ok(lens_area_unchecked(d, r))
}

#[inline]
pub(crate) fn lens_area_unchecked(d: f64, r: f64) -> f64 {
    if d >= 2.0 * r {
        return 0.0;
    }
    let a = 2.0 * r * r * (d / (2.0 * r)).acos() - 0.5 * d * (4.0 * r * r - d * d).sqrt();
    a.max(0.0)
}
