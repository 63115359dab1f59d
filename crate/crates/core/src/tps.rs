//! Thin plate spline fitting and dense backward warping.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::grid::{BinaryMask, Frame, FrameSequence};
use crate::keypoints::KeypointSequence;
use crate::linalg::{solve_refined, symmetric_eigen_descending};

/// Default regularization relative to the mean squared distance between centers.
pub const DEFAULT_RELATIVE_LAMBDA: f64 = 1e-8;
const DUPLICATE_TOLERANCE: f64 = 1e-9;

/// Radial basis `r^2 log(r^2)` of the Euclidean distance `r`, zero at the origin.
pub fn tps_kernel(r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        let r2 = r * r;
        r2 * libm::log(r2)
    }
}

/// `T(p) = A [p; 1] + sum_i w_i U(|c_i - p|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsTransform {
    /// Rows are output x and y; columns multiply `(x, y, 1)`.
    pub affine: [[f64; 3]; 2],
    pub weights: Vec<[f64; 2]>,
    pub centers: Vec<Point2>,
    pub lambda: f64,
}

impl TpsTransform {
    pub fn identity() -> Self {
        TpsTransform {
            affine: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            weights: Vec::new(),
            centers: Vec::new(),
            lambda: 0.0,
        }
    }

    pub fn eval(&self, p: Point2) -> Point2 {
        let a = &self.affine;
        let mut out = Point2::new(
            a[0][0] * p.x + a[0][1] * p.y + a[0][2],
            a[1][0] * p.x + a[1][1] * p.y + a[1][2],
        );
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let u = tps_kernel(c.distance(p));
            out.x += w[0] * u;
            out.y += w[1] * u;
        }
        out
    }

    /// Quadratic form `sum_d w_d^T K w_d`, proportional to the integrated bending energy.
    pub fn bending_energy(&self) -> f64 {
        let m = self.centers.len();
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                let k = tps_kernel(self.centers[i].distance(self.centers[j]));
                total += k * (self.weights[i][0] * self.weights[j][0] + self.weights[i][1] * self.weights[j][1]);
            }
        }
        total
    }
}

/// `relative * mean squared pairwise distance` of the centers.
pub fn relative_lambda(centers: &[Point2], relative: f64) -> f64 {
    let m = centers.len();
    if m < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            sum += (centers[i] - centers[j]).norm_squared();
        }
    }
    relative * sum / (m * (m - 1) / 2) as f64
}

/// How the smoothing weight is chosen for each fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    Absolute(f64),
    /// Multiple of the mean squared center distance.
    Relative(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::Relative(DEFAULT_RELATIVE_LAMBDA)
    }
}

impl Regularization {
    pub fn resolve(&self, centers: &[Point2]) -> f64 {
        match *self {
            Regularization::Absolute(l) => l,
            Regularization::Relative(r) => relative_lambda(centers, r),
        }
    }
}

fn check_centers(centers: &[Point2]) -> Result<()> {
    let m = centers.len();
    for i in 0..m {
        for j in i + 1..m {
            if centers[i].distance(centers[j]) <= DUPLICATE_TOLERANCE {
                return Err(Error::Singular(format!(
                    "centers {i} and {j} coincide at ({}, {})",
                    centers[i].x, centers[i].y
                )));
            }
        }
    }
    let mean = crate::geom::centroid(centers).expect("non-empty");
    let scatter = DMatrix::from_fn(2, 2, |r, c| {
        centers
            .iter()
            .map(|p| {
                let d = *p - mean;
                let a = if r == 0 { d.x } else { d.y };
                let b = if c == 0 { d.x } else { d.y };
                a * b
            })
            .sum::<f64>()
    });
    let (vals, _) = symmetric_eigen_descending(scatter);
    if vals[1] <= 1e-12 * vals[0] {
        return Err(Error::Singular(format!("all {m} centers are collinear")));
    }
    Ok(())
}

/// Fits the spline carrying `centers[i]` to `targets[i]` by solving
/// `[[K + lambda I, P], [P^T, 0]] [w; a] = [targets; 0]`.
pub fn tps_fit(centers: &[Point2], targets: &[Point2], lambda: f64) -> Result<TpsTransform> {
    let m = centers.len();
    if targets.len() != m {
        return Err(Error::ShapeMismatch(format!("{m} centers but {} targets", targets.len())));
    }
    if m < 3 {
        return Err(Error::InvalidArgument(format!("thin plate spline needs at least 3 points, got {m}")));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("regularization must be finite and non-negative, got {lambda}")));
    }
    check_centers(centers)?;
    let n = m + 3;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = tps_kernel(centers[i].distance(centers[j]));
        }
        a[(i, i)] += lambda;
        let row = [centers[i].x, centers[i].y, 1.0];
        for (k, v) in row.into_iter().enumerate() {
            a[(i, m + k)] = v;
            a[(m + k, i)] = v;
        }
    }
    let mut b = DMatrix::<f64>::zeros(n, 2);
    for (i, t) in targets.iter().enumerate() {
        b[(i, 0)] = t.x;
        b[(i, 1)] = t.y;
    }
    let x = solve_refined(&a, &b).ok_or_else(|| Error::Singular(format!("spline system over {m} centers is singular")))?;
    Ok(TpsTransform {
        affine: [
            [x[(m, 0)], x[(m + 1, 0)], x[(m + 2, 0)]],
            [x[(m, 1)], x[(m + 1, 1)], x[(m + 2, 1)]],
        ],
        weights: (0..m).map(|i| [x[(i, 0)], x[(i, 1)]]).collect(),
        centers: centers.to_vec(),
        lambda,
    })
}

/// Source coordinate for each output pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    width: usize,
    height: usize,
    coords: Vec<Point2>,
}

impl WarpField {
    pub fn new(width: usize, height: usize, coords: Vec<Point2>) -> Result<Self> {
        if coords.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "field {width}x{height} needs {} coordinates, got {}",
                width * height,
                coords.len()
            )));
        }
        Ok(WarpField { width, height, coords })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(Point2) -> Point2) -> Self {
        let mut coords = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                coords.push(f(Point2::new(x as f64, y as f64)));
            }
        }
        WarpField { width, height, coords }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, x: usize, y: usize) -> Point2 {
        self.coords[y * self.width + x]
    }

    pub fn coords(&self) -> &[Point2] {
        &self.coords
    }
}

/// Fits the backward spline (centers at the target keypoints, values at the reference
/// keypoints) and evaluates it at every output pixel center.
pub fn build_backward_field(
    target: &[Point2],
    reference: &[Point2],
    width: usize,
    height: usize,
    lambda: f64,
) -> Result<WarpField> {
    let spline = tps_fit(target, reference, lambda)?;
    Ok(WarpField::from_fn(width, height, |p| spline.eval(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WarpMode {
    /// Every in-bounds source sample is kept.
    #[default]
    Full,
    /// Samples whose source lies outside the reference mask become fill.
    Masked,
}

/// Bilinear backward sampling. Sources outside `[0, w-1] x [0, h-1]` produce `fill`.
pub fn warp_frame(
    frame: &Frame,
    field: &WarpField,
    mode: WarpMode,
    reference_mask: Option<&BinaryMask>,
    fill: [u8; 3],
) -> Result<Frame> {
    let mask = match (mode, reference_mask) {
        (WarpMode::Masked, None) => {
            return Err(Error::InvalidArgument("masked warping needs a reference mask".into()));
        }
        (WarpMode::Masked, Some(m)) => {
            if m.width() != frame.width() || m.height() != frame.height() {
                return Err(Error::ShapeMismatch(format!(
                    "reference mask is {}x{} but frames are {}x{}",
                    m.height(),
                    m.width(),
                    frame.height(),
                    frame.width()
                )));
            }
            Some(m)
        }
        (WarpMode::Full, _) => None,
    };
    let (w, h) = (frame.width(), frame.height());
    let mut out = Frame::filled(field.height(), field.width(), fill);
    for y in 0..field.height() {
        for x in 0..field.width() {
            let s = field.at(x, y);
            if !(s.x >= 0.0 && s.y >= 0.0 && s.x <= (w - 1) as f64 && s.y <= (h - 1) as f64) {
                continue;
            }
            if let Some(m) = mask {
                if !m.contains_point(s) {
                    continue;
                }
            }
            out.set_pixel(x, y, sample_bilinear(frame, s));
        }
    }
    Ok(out)
}

fn sample_bilinear(frame: &Frame, s: Point2) -> [u8; 3] {
    let (w, h) = (frame.width(), frame.height());
    let x0 = libm::floor(s.x) as usize;
    let y0 = libm::floor(s.y) as usize;
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (s.x - x0 as f64, s.y - y0 as f64);
    let (p00, p01, p10, p11) = (frame.pixel(x0, y0), frame.pixel(x1, y0), frame.pixel(x0, y1), frame.pixel(x1, y1));
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] as f64 + (p01[c] as f64 - p00[c] as f64) * fx;
        let bottom = p10[c] as f64 + (p11[c] as f64 - p10[c] as f64) * fx;
        let v = top + (bottom - top) * fy;
        rgb[c] = libm::round(v).clamp(0.0, 255.0) as u8;
    }
    rgb
}

/// Options shared by every frame of a sequence warp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpOptions<'a> {
    pub regularization: Regularization,
    pub mode: WarpMode,
    pub reference_mask: Option<&'a BinaryMask>,
    pub fill: [u8; 3],
}

impl Default for WarpOptions<'_> {
    fn default() -> Self {
        WarpOptions { regularization: Regularization::default(), mode: WarpMode::Full, reference_mask: None, fill: [0, 0, 0] }
    }
}

/// Warps frame `t` using the points visible in both sequences at `t`. Points whose target
/// position repeats an earlier one are dropped.
pub fn warp_sequence_frame(
    frames: &FrameSequence,
    reference: &KeypointSequence,
    target: &KeypointSequence,
    t: usize,
    options: &WarpOptions<'_>,
) -> Result<Frame> {
    let (mut src, mut dst): (Vec<Point2>, Vec<Point2>) = (Vec::new(), Vec::new());
    let mut shared = 0;
    for (r, g) in reference.frame(t).iter().zip(target.frame(t)) {
        if r.visible && g.visible {
            shared += 1;
            // Several keypoints may match the same target pixel; the first one wins.
            if dst.iter().all(|d| d.distance(g.pos) > DUPLICATE_TOLERANCE) {
                src.push(r.pos);
                dst.push(g.pos);
            }
        }
    }
    if shared < 3 {
        return Err(Error::Degenerate(format!(
            "frame {t} has {shared} points visible in both sequences; at least 3 are needed"
        )));
    }
    let lambda = options.regularization.resolve(&dst);
    let frame = frames.get(t);
    let field = build_backward_field(&dst, &src, frame.width(), frame.height(), lambda)?;
    warp_frame(frame, &field, options.mode, options.reference_mask, options.fill)
}

/// Warps every reference frame into the target shape.
pub fn warp_sequence(
    frames: &FrameSequence,
    reference: &KeypointSequence,
    target: &KeypointSequence,
    options: &WarpOptions<'_>,
) -> Result<FrameSequence> {
    check_sequences(frames, reference, target)?;
    let out = (0..frames.len())
        .map(|t| warp_sequence_frame(frames, reference, target, t, options))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(out)
}

/// Frame and point counts must agree across the three inputs.
pub fn check_sequences(frames: &FrameSequence, reference: &KeypointSequence, target: &KeypointSequence) -> Result<()> {
    if reference.frame_count() != frames.len() || target.frame_count() != frames.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} frames but tracks cover {} and {} frames",
            frames.len(),
            reference.frame_count(),
            target.frame_count()
        )));
    }
    if reference.point_count() != target.point_count() {
        return Err(Error::ShapeMismatch(format!(
            "reference tracks {} points, target tracks {}",
            reference.point_count(),
            target.point_count()
        )));
    }
    Ok(())
}
