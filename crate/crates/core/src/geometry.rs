//! Planar point processes: Poisson, Matérn type II hard-core, and the
//! randomly translated square grid, all sampled inside a disc window.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Streams;
use crate::stats::{Method, MetricEstimate};

/// A point (or displacement) in the plane, in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    /// Chebyshev (max-coordinate) norm.
    pub fn norm_inf(&self) -> f64 {
        self.x.abs().max(self.y.abs())
    }

    pub fn distance(&self, other: Point) -> f64 {
        (*self - other).norm()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

/// Disc-shaped simulation window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub center: Point,
    pub radius: f64,
}

impl Window {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::domain(format!(
                "window radius must be positive, got {radius}"
            )));
        }
        Ok(Self { center, radius })
    }

    pub fn centered(radius: f64) -> Result<Self> {
        Self::new(Point::ORIGIN, radius)
    }

    pub fn area(&self) -> f64 {
        PI * self.radius * self.radius
    }

    pub fn contains(&self, p: Point) -> bool {
        (p - self.center).norm_sq() <= self.radius * self.radius
    }

    /// The same window grown by `margin`.
    pub fn dilated(&self, margin: f64) -> Window {
        Window {
            center: self.center,
            radius: self.radius + margin,
        }
    }
}

/// Which hard-core process places the cluster centers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParentKind {
    MaternIi,
    TranslatedGrid,
}

/// Parent (cluster-center) process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParentProcess {
    pub kind: ParentKind,
    /// Proposal intensity of the Matérn construction; ignored for the grid.
    pub lambda: f64,
    /// Hard-core clearance (grid spacing for the translated grid).
    pub delta: f64,
}

impl ParentProcess {
    pub fn matern(lambda: f64, delta: f64) -> Result<Self> {
        let p = Self {
            kind: ParentKind::MaternIi,
            lambda,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn grid(delta: f64) -> Result<Self> {
        let p = Self {
            kind: ParentKind::TranslatedGrid,
            lambda: 0.0,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::domain(format!(
                "clearance must be positive, got {}",
                self.delta
            )));
        }
        if self.kind == ParentKind::MaternIi && !(self.lambda > 0.0) {
            return Err(Error::domain(format!(
                "Matérn proposal intensity must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Intensity of cluster centers.
    pub fn density(&self) -> f64 {
        match self.kind {
            ParentKind::MaternIi => matern_ii_density(self.lambda, self.delta),
            ParentKind::TranslatedGrid => 1.0 / (self.delta * self.delta),
        }
    }

    /// Stationary sample restricted to `window`.
    pub fn sample<R: Rng + ?Sized>(&self, window: &Window, rng: &mut R) -> PointSet {
        match self.kind {
            ParentKind::MaternIi => sample_matern_ii(self, window, rng),
            ParentKind::TranslatedGrid => sample_translated_grid(self.delta, window, rng),
        }
    }

    /// Sample under the Palm distribution at the window center: the returned
    /// set holds every *other* center in the window, as seen from a cluster
    /// known to sit at `window.center`.
    pub fn sample_palm_others<R: Rng + ?Sized>(&self, window: &Window, rng: &mut R) -> PointSet {
        match self.kind {
            ParentKind::MaternIi => {
                sample_matern_ii_palm_others(self.lambda, self.delta, window, rng)
            }
            ParentKind::TranslatedGrid => grid_palm_others(self.delta, window),
        }
    }
}

/// A finite set of points.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet {
    pub points: Vec<Point>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest distance between two distinct points (`+inf` for fewer than two).
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.min(a.distance(*b));
            }
        }
        best
    }
}

/// Uniform point on the disc of radius `radius` around `center`.
pub fn uniform_in_disc<R: Rng + ?Sized>(center: Point, radius: f64, rng: &mut R) -> Point {
    // Rejection from the bounding square: no trigonometry, about 1.27 tries.
    loop {
        let x = 2.0 * rng.random::<f64>() - 1.0;
        let y = 2.0 * rng.random::<f64>() - 1.0;
        if x * x + y * y <= 1.0 {
            return center + Point::new(radius * x, radius * y);
        }
    }
}

/// Poisson-distributed count with the given mean (0 for a non-positive mean).
pub fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if !(mean > 0.0) {
        return 0;
    }
    // Parameter is finite and positive here, so construction cannot fail.
    let dist = Poisson::new(mean).expect("positive finite Poisson mean");
    dist.sample(rng) as usize
}

/// Homogeneous Poisson point process of intensity `lambda` on `window`.
pub fn sample_poisson_pp<R: Rng + ?Sized>(lambda: f64, window: &Window, rng: &mut R) -> PointSet {
    let n = poisson_count(lambda * window.area(), rng);
    PointSet {
        points: (0..n)
            .map(|_| uniform_in_disc(window.center, window.radius, rng))
            .collect(),
    }
}

/// Intensity of the Matérn II process: `(1 - exp(-λπδ²)) / (πδ²)`.
pub fn matern_ii_density(lambda: f64, delta: f64) -> f64 {
    let area = PI * delta * delta;
    -(-lambda * area).exp_m1() / area
}

/// Mean points per unit area of `proc` on a disc of radius `radius`.
pub fn empirical_density(
    proc: &ParentProcess,
    radius: f64,
    replicates: usize,
    streams: &Streams,
) -> Result<MetricEstimate> {
    let window = Window::centered(radius)?;
    let counts: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            proc.sample(&window, &mut streams.stream("density", i))
                .len() as f64
                / window.area()
        })
        .collect();
    Ok(MetricEstimate::from_samples(
        &counts,
        Method::FullMonteCarlo,
    ))
}

/// Matérn type II hard-core sample on `window`.
///
/// Proposals are drawn on the window dilated by `delta` so that points near
/// the edge compete with their full neighbourhood; survivors are clipped back
/// to the window.
pub fn sample_matern_ii<R: Rng + ?Sized>(
    proc: &ParentProcess,
    window: &Window,
    rng: &mut R,
) -> PointSet {
    let (proposals, survived) = matern_ii_proposals(proc.lambda, proc.delta, window, rng);
    PointSet {
        points: proposals
            .iter()
            .zip(&survived)
            .filter(|(p, &keep)| keep && window.contains(**p))
            .map(|(p, _)| *p)
            .collect(),
    }
}

/// Proposal points (on the dilated window) and their survival flags.
pub(crate) fn matern_ii_proposals<R: Rng + ?Sized>(
    lambda: f64,
    delta: f64,
    window: &Window,
    rng: &mut R,
) -> (Vec<Point>, Vec<bool>) {
    let padded = window.dilated(delta);
    let proposals = sample_poisson_pp(lambda, &padded, rng).points;
    let marks: Vec<f64> = (0..proposals.len()).map(|_| rng.random::<f64>()).collect();
    let survived = hard_core_thinning(&proposals, &marks, delta);
    (proposals, survived)
}

/// Palm sample of the Matérn II process seen from a retained point at the
/// window center. Returns the other retained points in the window.
///
/// Conditioning on the center point being retained tilts its mark towards
/// small values (density proportional to `exp(-λπδ² u)`) and removes every
/// proposal inside the clearance disc that carries a smaller mark.
pub fn sample_matern_ii_palm_others<R: Rng + ?Sized>(
    lambda: f64,
    delta: f64,
    window: &Window,
    rng: &mut R,
) -> PointSet {
    let a = lambda * PI * delta * delta;
    let v: f64 = rng.random();
    let origin_mark = if a > 1e-12 {
        -(-v * (-(-a).exp_m1())).ln_1p() / a
    } else {
        v
    };

    let padded = window.dilated(delta);
    let raw = sample_poisson_pp(lambda, &padded, rng).points;
    let mut proposals = Vec::with_capacity(raw.len() + 1);
    let mut marks = Vec::with_capacity(raw.len() + 1);
    proposals.push(window.center);
    marks.push(origin_mark);
    for p in raw {
        let m: f64 = rng.random();
        if (p - window.center).norm() < delta && m < origin_mark {
            continue;
        }
        proposals.push(p);
        marks.push(m);
    }
    let survived = hard_core_thinning(&proposals, &marks, delta);
    debug_assert!(survived[0], "conditioned center point must survive");
    PointSet {
        points: proposals
            .iter()
            .zip(&survived)
            .skip(1)
            .filter(|(p, &keep)| keep && window.contains(**p))
            .map(|(p, _)| *p)
            .collect(),
    }
}

/// Keep a point iff no other point closer than `delta` has a smaller mark.
/// Equal marks are ordered by index.
fn hard_core_thinning(points: &[Point], marks: &[f64], delta: f64) -> Vec<bool> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let nx = (((max_x - min_x) / delta).floor() as usize + 1).max(1);
    let ny = (((max_y - min_y) / delta).floor() as usize + 1).max(1);
    let cell_of = |p: &Point| -> (usize, usize) {
        let cx = (((p.x - min_x) / delta) as usize).min(nx - 1);
        let cy = (((p.y - min_y) / delta) as usize).min(ny - 1);
        (cx, cy)
    };
    let mut heads = vec![usize::MAX; nx * ny];
    let mut next = vec![usize::MAX; n];
    for (i, p) in points.iter().enumerate() {
        let (cx, cy) = cell_of(p);
        let c = cy * nx + cx;
        next[i] = heads[c];
        heads[c] = i;
    }
    let delta_sq = delta * delta;
    let beats = |j: usize, i: usize| marks[j] < marks[i] || (marks[j] == marks[i] && j < i);

    (0..n)
        .map(|i| {
            let (cx, cy) = cell_of(&points[i]);
            for yy in cy.saturating_sub(1)..=(cy + 1).min(ny - 1) {
                for xx in cx.saturating_sub(1)..=(cx + 1).min(nx - 1) {
                    let mut j = heads[yy * nx + xx];
                    while j != usize::MAX {
                        if j != i && beats(j, i) && (points[j] - points[i]).norm_sq() < delta_sq {
                            return false;
                        }
                        j = next[j];
                    }
                }
            }
            true
        })
        .collect()
}

/// Square grid of spacing `delta`, randomly translated by a uniform offset.
pub fn sample_translated_grid<R: Rng + ?Sized>(
    delta: f64,
    window: &Window,
    rng: &mut R,
) -> PointSet {
    let u1 = delta * rng.random::<f64>();
    let u2 = delta * rng.random::<f64>();
    grid_points(delta, Point::new(u1, u2), window)
}

/// Grid points through the window center, other than the center itself.
pub fn grid_palm_others(delta: f64, window: &Window) -> PointSet {
    let mut set = grid_points(delta, window.center, window);
    set.points
        .retain(|p| (*p - window.center).norm_sq() > 0.25 * delta * delta);
    set
}

/// All points `offset + (m δ, n δ)` inside `window`.
fn grid_points(delta: f64, offset: Point, window: &Window) -> PointSet {
    let c = window.center;
    let r = window.radius;
    let m_lo = ((c.x - r - offset.x) / delta).floor() as i64;
    let m_hi = ((c.x + r - offset.x) / delta).ceil() as i64;
    let n_lo = ((c.y - r - offset.y) / delta).floor() as i64;
    let n_hi = ((c.y + r - offset.y) / delta).ceil() as i64;
    let mut points = Vec::new();
    for m in m_lo..=m_hi {
        for n in n_lo..=n_hi {
            let p = Point::new(offset.x + m as f64 * delta, offset.y + n as f64 * delta);
            if window.contains(p) {
                points.push(p);
            }
        }
    }
    PointSet { points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;
    use crate::stats::Moments;

    #[test]
    fn zero_intensity_is_empty() {
        let w = Window::centered(100.0).unwrap();
        let mut rng = Streams::new(1).stream("t", 0);
        assert!(sample_poisson_pp(0.0, &w, &mut rng).is_empty());
    }

    #[test]
    fn window_rejects_bad_radius() {
        assert!(Window::centered(0.0).is_err());
        assert!(Window::centered(-1.0).is_err());
        assert!(ParentProcess::matern(0.0, 10.0).is_err());
        assert!(ParentProcess::grid(0.0).is_err());
    }

    #[test]
    fn poisson_mean_count() {
        // λ|W| = 0.012·π·10⁴ ≈ 376.99.
        let w = Window::centered(100.0).unwrap();
        let s = Streams::new(11);
        let m: Moments = (0..10_000)
            .map(|i| sample_poisson_pp(0.012, &w, &mut s.stream("pp", i)).len() as f64)
            .collect();
        let expected = 0.012 * PI * 1e4;
        assert!((expected - 376.99).abs() < 0.01);
        assert!(
            (m.mean() - expected).abs() < 3.0 * m.std_error(),
            "{} vs {}",
            m.mean(),
            expected
        );
    }

    #[test]
    fn poisson_equidispersion() {
        let w = Window::centered((1.0 / PI).sqrt()).unwrap();
        let s = Streams::new(12);
        let m: Moments = (0..100_000)
            .map(|i| sample_poisson_pp(1.0, &w, &mut s.stream("pp", i)).len() as f64)
            .collect();
        assert!(
            (m.variance() - 1.0).abs() < 0.05,
            "variance {}",
            m.variance()
        );
    }

    #[test]
    fn matern_density_reference_values() {
        assert_eq!(matern_ii_density(0.0, 100.0), 0.0);
        assert!((matern_ii_density(1e3, 100.0) - 3.1831e-5).abs() < 1e-9);
        let v = matern_ii_density(2e-4, 100.0);
        let direct = (1.0 - (-2.0 * PI).exp()) / (PI * 1e4);
        assert!((v - direct).abs() < 1e-18);
        assert!((v - 3.1772e-5).abs() < 1e-9);
    }

    #[test]
    fn matern_sparse_limit_keeps_almost_everything() {
        let w = Window::centered(1000.0).unwrap();
        let mut rng = Streams::new(2).stream("m", 0);
        // λπδ² ≈ 3e-6.
        let (props, keep) = matern_ii_proposals(1e-5, 0.3, &w, &mut rng);
        let kept = keep.iter().filter(|k| **k).count();
        assert!(props.len() > 20);
        assert!(kept as f64 >= 0.99 * props.len() as f64);
    }

    #[test]
    fn matern_is_hard_core() {
        let p = ParentProcess::matern(1e-3, 100.0).unwrap();
        let w = Window::centered(1500.0).unwrap();
        let s = Streams::new(3);
        for i in 0..10 {
            let set = p.sample(&w, &mut s.stream("hc", i));
            assert!(set.len() > 10);
            assert!(set.min_pairwise_distance() >= 100.0);
        }
    }

    #[test]
    fn matern_palm_excludes_clearance_disc() {
        let w = Window::centered(1500.0).unwrap();
        let s = Streams::new(4);
        for i in 0..20 {
            let set = sample_matern_ii_palm_others(1e-3, 100.0, &w, &mut s.stream("palm", i));
            assert!(set.points.iter().all(|p| p.norm() >= 100.0));
            assert!(set.min_pairwise_distance() >= 100.0);
        }
    }

    #[test]
    fn palm_neighbour_counts_match_stationary_estimate() {
        // Mean number of neighbours within [δ, 1.5δ] of a typical point,
        // estimated from stationary samples versus the Palm sampler.
        let (lambda, delta) = (2e-4, 100.0);
        let p = ParentProcess::matern(lambda, delta).unwrap();
        let s = Streams::new(13);
        let inner = 1500.0;
        let w = Window::centered(inner + 2.0 * delta).unwrap();
        let ring = |q: &Point, c: &Point| {
            let r = q.distance(*c);
            (delta..1.5 * delta).contains(&r)
        };
        let mut per_point = Moments::default();
        for i in 0..150 {
            let set = p.sample(&w, &mut s.stream("stat", i));
            for c in set.points.iter().filter(|c| c.norm() <= inner) {
                per_point.push(set.points.iter().filter(|q| ring(q, c)).count() as f64);
            }
        }
        let local = Window::centered(2.0 * delta).unwrap();
        let palm: Moments = (0..20_000)
            .map(|i| {
                let set = p.sample_palm_others(&local, &mut s.stream("palm", i));
                set.points
                    .iter()
                    .filter(|q| ring(q, &Point::ORIGIN))
                    .count() as f64
            })
            .collect();
        // Stationary per-point counts are correlated; allow a generous band.
        let diff = (per_point.mean() - palm.mean()).abs();
        assert!(
            diff < 0.03 * palm.mean(),
            "{} vs {}",
            per_point.mean(),
            palm.mean()
        );
    }

    #[test]
    fn grid_nearest_neighbour_is_spacing() {
        let w = Window::centered(500.0).unwrap();
        let mut rng = Streams::new(5).stream("g", 0);
        let set = sample_translated_grid(50.0, &w, &mut rng);
        // π·500²/50² ≈ 314.
        assert!((set.len() as f64 - 314.16).abs() < 30.0);
        let nn = set.min_pairwise_distance();
        assert!((nn - 50.0).abs() < 1e-9);
    }

    #[test]
    fn grid_palm_is_lattice_through_center() {
        let w = Window::new(Point::new(10.0, -5.0), 200.0).unwrap();
        let set = grid_palm_others(50.0, &w);
        assert!(set.points.iter().all(|p| {
            let d = *p - w.center;
            (d.x / 50.0 - (d.x / 50.0).round()).abs() < 1e-9
                && (d.y / 50.0 - (d.y / 50.0).round()).abs() < 1e-9
        }));
        assert!(set
            .points
            .iter()
            .all(|p| p.distance(w.center) >= 50.0 - 1e-9));
    }
}
