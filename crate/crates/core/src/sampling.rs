//! Structure-aware keypoint sampling: an ordered outer contour sampled at uniform arc-length
//! spacing, plus Poisson disk samples from the region's interior.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::grid::BinaryMask;
use crate::keypoints::KeypointSet;

/// Share of keypoints placed on the contour when nothing else is configured.
pub const DEFAULT_CONTOUR_FRACTION: f64 = 0.8;
/// Packing constant `c` in the disk radius `sqrt(area / (n * pi * c))`.
pub const PACKING_CONSTANT: f64 = 0.7;
/// Candidate attempts per active sample.
pub const POISSON_ATTEMPTS: usize = 30;
const MAX_RELAX_ROUNDS: usize = 12;

/// Neighbor offsets in clockwise order on screen (y points down), starting east.
const RING: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

fn ring_index(dx: i64, dy: i64) -> usize {
    RING.iter().position(|&d| d == (dx, dy)).expect("offset is a unit neighbor")
}

/// Closed boundary polyline through pixel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    points: Vec<Point2>,
    perimeter: f64,
}

impl Contour {
    /// Builds a contour from an ordered closed polyline.
    pub fn from_points(points: Vec<Point2>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("contour needs at least one point".into()));
        }
        let perimeter = closed_segment_lengths(&points).iter().sum();
        Ok(Contour { points, perimeter })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    /// Shoelace sum in image coordinates; negative means counter-clockwise on screen.
    pub fn signed_area(&self) -> f64 {
        signed_area(&self.points)
    }
}

fn closed_segment_lengths(points: &[Point2]) -> Vec<f64> {
    if points.len() < 2 {
        return Vec::new();
    }
    (0..points.len())
        .map(|i| points[i].distance(points[(i + 1) % points.len()]))
        .collect()
}

fn signed_area(points: &[Point2]) -> f64 {
    let n = points.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
}

/// Labels of the largest 8-connected foreground component, as a mask. Ties go to the
/// component reached first in raster order.
pub fn largest_component(mask: &BinaryMask) -> Result<BinaryMask> {
    let (w, h) = (mask.width(), mask.height());
    let mut label = vec![usize::MAX; w * h];
    let mut best: Option<(usize, usize)> = None; // (label, size)
    let mut queue = VecDeque::new();
    let mut next_label = 0;
    for start in 0..w * h {
        if !mask.bits()[start] || label[start] != usize::MAX {
            continue;
        }
        let id = next_label;
        next_label += 1;
        label[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for (dx, dy) in RING {
                let (nx, ny) = (x + dx, y + dy);
                if mask.get_signed(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if label[j] == usize::MAX {
                        label[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((id, size));
        }
    }
    let (id, _) = best.ok_or(Error::EmptyMask)?;
    Ok(BinaryMask::new(h, w, label.into_iter().map(|l| l == id).collect()).expect("same size"))
}

/// Traces the outer boundary of the largest 8-connected foreground component with
/// Moore-neighbor tracing. The result starts at the component's first pixel in raster order
/// and runs counter-clockwise on screen.
pub fn trace_contour(mask: &BinaryMask) -> Result<Contour> {
    let component = largest_component(mask)?;
    Contour::from_points(trace_component(&component))
}

fn trace_component(component: &BinaryMask) -> Vec<Point2> {
    let w = component.width();
    let start_index = component.bits().iter().position(|&b| b).expect("component is non-empty");
    let start = ((start_index % w) as i64, (start_index / w) as i64);
    let inside = |p: (i64, i64)| component.get_signed(p.0, p.1);

    let mut pixels = vec![start];
    // The raster-first pixel always has background to its west.
    let mut backtrack = 4usize;
    let mut current = start;
    let mut first_step: Option<(i64, i64)> = None;
    let limit = 4 * component.count() + 8;
    loop {
        let step = (1..=8).map(|k| (backtrack + k) % 8).find_map(|d| {
            let n = (current.0 + RING[d].0, current.1 + RING[d].1);
            inside(n).then_some((n, d))
        });
        let Some((next, dir)) = step else {
            break; // isolated pixel
        };
        // Jacob's criterion: stop once the walk leaves the start the same way it did first.
        if current == start {
            match first_step {
                None => first_step = Some(next),
                Some(first) if first == next => break,
                Some(_) => {}
            }
        }
        let prev_dir = (dir + 7) % 8;
        let prev = (current.0 + RING[prev_dir].0, current.1 + RING[prev_dir].1);
        backtrack = ring_index(prev.0 - next.0, prev.1 - next.1);
        current = next;
        pixels.push(current);
        if pixels.len() > limit {
            break;
        }
    }
    // The walk ends on the start pixel; drop the closing duplicate.
    if pixels.len() > 1 && pixels.last() == Some(&start) {
        pixels.pop();
    }
    let mut points: Vec<Point2> = pixels.into_iter().map(|(x, y)| Point2::new(x as f64, y as f64)).collect();
    if points.len() > 2 && signed_area(&points) > 0.0 {
        points[1..].reverse();
    }
    points
}

/// How contour samples are spaced along the arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContourSpacing {
    /// Fixed arc-length step in pixels.
    Interval(f64),
    /// Exactly `n` points spaced `perimeter / n` apart.
    Count(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourSamples {
    pub points: Vec<Point2>,
    /// Set when interval mode was asked for a step longer than the perimeter, in which case
    /// only the arc-length-zero point is returned.
    pub interval_exceeds_perimeter: bool,
}

/// Samples the closed contour at uniform arc-length positions starting from its first point,
/// interpolating linearly along segments.
pub fn sample_contour_uniform(contour: &Contour, spacing: ContourSpacing) -> Result<ContourSamples> {
    let perimeter = contour.perimeter();
    let (step, count, exceeds) = match spacing {
        ContourSpacing::Interval(d) => {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::InvalidArgument(format!("contour interval must be positive, got {d}")));
            }
            if d > perimeter || perimeter == 0.0 {
                (d, 1, d > perimeter)
            } else {
                let mut n = libm::ceil(perimeter / d) as usize;
                // Guard against k*d landing on the perimeter through rounding.
                while n > 1 && (n - 1) as f64 * d >= perimeter * (1.0 - 1e-12) {
                    n -= 1;
                }
                (d, n, false)
            }
        }
        ContourSpacing::Count(n) => {
            if n == 0 {
                return Err(Error::InvalidArgument("contour sample count must be at least 1".into()));
            }
            (perimeter / n as f64, n, false)
        }
    };
    let points = (0..count).map(|k| point_at_arc_length(contour, k as f64 * step)).collect();
    Ok(ContourSamples { points, interval_exceeds_perimeter: exceeds })
}

fn point_at_arc_length(contour: &Contour, s: f64) -> Point2 {
    let pts = contour.points();
    if pts.len() == 1 || contour.perimeter() == 0.0 {
        return pts[0];
    }
    let mut remaining = s;
    for i in 0..pts.len() {
        let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
        let len = a.distance(b);
        if remaining <= len || i + 1 == pts.len() {
            let t = if len > 0.0 { (remaining / len).clamp(0.0, 1.0) } else { 0.0 };
            return a + (b - a) * t;
        }
        remaining -= len;
    }
    pts[0]
}

/// Poisson disk samples and the minimum pairwise distance they are guaranteed to respect.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSamples {
    pub points: Vec<Point2>,
    /// Every pair of returned points is at least this far apart. Zero when fewer than two
    /// points were requested.
    pub min_distance: f64,
}

/// Disk radius for `count` samples over `area` pixels.
pub fn poisson_radius(area: usize, count: usize) -> f64 {
    libm::sqrt(area as f64 / (count as f64 * core::f64::consts::PI * PACKING_CONSTANT))
}

/// Dart-throwing Poisson disk sampling over the interior of the largest foreground component:
/// foreground pixels that are not on the traced outer contour. A sample counts as inside when
/// its nearest pixel is eligible. When a full pass at radius `r` yields fewer than `count`
/// points, the radius is halved and the deficit is sampled around the points already kept.
pub fn poisson_disk_interior(mask: &BinaryMask, count: usize, seed: u64) -> Result<PoissonSamples> {
    let foreground = mask.count();
    if foreground == 0 {
        return Err(Error::EmptyMask);
    }
    if count > foreground {
        return Err(Error::InvalidArgument(format!(
            "{count} interior samples requested but the mask has {foreground} foreground pixels"
        )));
    }
    if count == 0 {
        return Ok(PoissonSamples { points: Vec::new(), min_distance: 0.0 });
    }
    let component = largest_component(mask)?;
    let mut eligible = component.clone();
    for p in trace_component(&component) {
        eligible.set(p.x as usize, p.y as usize, false);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut radius = poisson_radius(component.count(), count);
    let mut kept: Vec<Point2> = Vec::new();
    let mut bound = radius;
    for _ in 0..MAX_RELAX_ROUNDS {
        let fresh = fill_disks(&eligible, radius, &kept, &mut rng);
        let deficit = count - kept.len();
        if !fresh.is_empty() {
            bound = radius;
        }
        if fresh.len() >= deficit {
            let mut order: Vec<usize> = (0..fresh.len()).collect();
            shuffle(&mut order, &mut rng);
            let mut chosen = order[..deficit].to_vec();
            chosen.sort_unstable();
            kept.extend(chosen.into_iter().map(|i| fresh[i]));
            break;
        }
        kept.extend(fresh);
        radius *= 0.5;
        if radius < 0.25 {
            break;
        }
    }
    let min_distance = if count < 2 { 0.0 } else { bound };
    Ok(PoissonSamples { points: kept, min_distance })
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Background acceleration grid with cells of side `r / sqrt(2)`, so each cell holds at most
/// one point at least `r` from all others.
struct DiskGrid {
    cell: f64,
    cols: usize,
    rows: usize,
    slots: Vec<Option<usize>>,
    points: Vec<Point2>,
    radius: f64,
}

impl DiskGrid {
    fn new(width: usize, height: usize, radius: f64) -> Self {
        let cell = radius / core::f64::consts::SQRT_2;
        let cols = libm::ceil(width as f64 / cell) as usize + 1;
        let rows = libm::ceil(height as f64 / cell) as usize + 1;
        DiskGrid { cell, cols, rows, slots: vec![None; cols * rows], points: Vec::new(), radius }
    }

    fn cell_of(&self, p: Point2) -> (usize, usize) {
        // Pixel centers span [-0.5, size - 0.5).
        let cx = libm::floor((p.x + 0.5) / self.cell).max(0.0) as usize;
        let cy = libm::floor((p.y + 0.5) / self.cell).max(0.0) as usize;
        (cx.min(self.cols - 1), cy.min(self.rows - 1))
    }

    fn is_free(&self, p: Point2) -> bool {
        let (cx, cy) = self.cell_of(p);
        let r2 = self.radius * self.radius;
        for y in cy.saturating_sub(2)..=(cy + 2).min(self.rows - 1) {
            for x in cx.saturating_sub(2)..=(cx + 2).min(self.cols - 1) {
                if let Some(i) = self.slots[y * self.cols + x] {
                    if (self.points[i] - p).norm_squared() < r2 {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn insert(&mut self, p: Point2) {
        let (cx, cy) = self.cell_of(p);
        self.slots[cy * self.cols + cx] = Some(self.points.len());
        self.points.push(p);
    }
}

/// Maximal set of new points at least `radius` apart from each other and from `existing`.
fn fill_disks(eligible: &BinaryMask, radius: f64, existing: &[Point2], rng: &mut ChaCha8Rng) -> Vec<Point2> {
    let (w, h) = (eligible.width(), eligible.height());
    let mut grid = DiskGrid::new(w, h, radius);
    for &p in existing {
        grid.insert(p);
    }
    let mut seeds: Vec<usize> = (0..w * h).filter(|&i| eligible.bits()[i]).collect();
    shuffle(&mut seeds, rng);

    let mut fresh = Vec::new();
    let mut active: Vec<Point2> = Vec::new();
    let accept = |p: Point2, grid: &DiskGrid| eligible.contains_point(p) && grid.is_free(p);
    for seed in seeds {
        let p = Point2::new((seed % w) as f64, (seed / w) as f64);
        if !accept(p, &grid) {
            continue;
        }
        grid.insert(p);
        fresh.push(p);
        active.push(p);
        while !active.is_empty() {
            let idx = rng.random_range(0..active.len());
            let center = active[idx];
            let mut placed = false;
            for _ in 0..POISSON_ATTEMPTS {
                let rho = radius * libm::sqrt(1.0 + 3.0 * rng.random::<f64>());
                let theta = core::f64::consts::TAU * rng.random::<f64>();
                let candidate = center + Point2::from_polar(rho, theta);
                if accept(candidate, &grid) {
                    grid.insert(candidate);
                    fresh.push(candidate);
                    active.push(candidate);
                    placed = true;
                    break;
                }
            }
            if !placed {
                active.swap_remove(idx);
            }
        }
    }
    fresh
}

/// Parameters of the structure-aware sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    /// Total keypoint budget `m`.
    pub total: usize,
    pub contour_fraction: f64,
    /// Fixed arc-length step; when `None` the contour gets `round(contour_fraction * m)` points.
    pub contour_interval: Option<f64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams { total: 30, contour_fraction: DEFAULT_CONTOUR_FRACTION, contour_interval: None }
    }
}

impl SamplingParams {
    /// `(contour, interior)` split for count mode.
    pub fn split(&self) -> (usize, usize) {
        let contour = libm::round(self.contour_fraction * self.total as f64) as usize;
        let contour = contour.min(self.total);
        (contour, self.total - contour)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total < 3 {
            return Err(Error::InvalidArgument(format!("need at least 3 keypoints, got {}", self.total)));
        }
        if !(0.0..=1.0).contains(&self.contour_fraction) {
            return Err(Error::InvalidArgument(format!(
                "contour fraction must lie in [0, 1], got {}",
                self.contour_fraction
            )));
        }
        if let Some(d) = self.contour_interval {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::InvalidArgument(format!("contour interval must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

/// Outcome of [`sample_structure_aware`].
#[derive(Debug, Clone, PartialEq)]
pub struct StructureSamples {
    pub keypoints: KeypointSet,
    pub contour: Contour,
    pub interior_min_distance: f64,
    pub interval_exceeds_perimeter: bool,
}

/// Uniform contour samples followed by Poisson disk interior samples.
pub fn sample_structure_aware(mask: &BinaryMask, params: &SamplingParams, seed: u64) -> Result<StructureSamples> {
    params.validate()?;
    let (contour_count, interior_count) = params.split();
    let contour = trace_contour(mask)?;
    let spacing = match params.contour_interval {
        Some(d) => ContourSpacing::Interval(d),
        None => ContourSpacing::Count(contour_count.max(1)),
    };
    let mut on_contour = sample_contour_uniform(&contour, spacing)?;
    if params.contour_interval.is_none() && contour_count == 0 {
        on_contour.points.clear();
    }
    let interior = poisson_disk_interior(mask, interior_count, seed)?;
    if interior.points.len() < interior_count {
        return Err(Error::Degenerate(format!(
            "mask interior admits only {} of {} requested samples",
            interior.points.len(),
            interior_count
        )));
    }
    let n_contour = on_contour.points.len();
    let mut points = on_contour.points;
    points.extend(interior.points);
    Ok(StructureSamples {
        keypoints: KeypointSet::new(points, n_contour)?,
        contour,
        interior_min_distance: interior.min_distance,
        interval_exceeds_perimeter: on_contour.interval_exceeds_perimeter,
    })
}
