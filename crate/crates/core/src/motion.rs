//! Target keypoint sequence construction: a global rigid delta read from the reference
//! sequence's second-moment ellipse, followed by a per-point polar residual.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::{centroid, wrap_half_pi, wrap_pi, Point2};
use crate::keypoints::{KeypointSequence, TrackPoint};

/// Radii below this (pixels) are treated as sitting on the centroid.
pub const RADIAL_EPSILON: f64 = 1e-6;

/// Centroid and principal-axis orientation of a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsePose {
    pub center: Point2,
    /// Radians in `(-pi/2, pi/2]`.
    pub orientation: f64,
}

/// Change of pose between two frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalDelta {
    /// Radians in `(-pi/2, pi/2]`.
    pub rotation: f64,
    pub shift: Point2,
}

impl GlobalDelta {
    pub const IDENTITY: GlobalDelta = GlobalDelta { rotation: 0.0, shift: Point2::ORIGIN };
}

/// Fits the moment ellipse: the center is the mean and the orientation is
/// `0.5 * atan2(2 mu11, mu20 - mu02)` of the central second moments, so an isotropic set
/// gets orientation 0.
pub fn fit_ellipse_pose(points: &[Point2]) -> Result<EllipsePose> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "ellipse fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let center = centroid(points).expect("non-empty");
    let (mut mu20, mut mu02, mut mu11) = (0.0, 0.0, 0.0);
    let mut scale = 0.0f64;
    for p in points {
        let d = *p - center;
        mu20 += d.x * d.x;
        mu02 += d.y * d.y;
        mu11 += d.x * d.y;
        scale = scale.max(p.x.abs()).max(p.y.abs());
    }
    if mu20 + mu02 <= 1e-24 * (1.0 + scale * scale) * points.len() as f64 {
        return Err(Error::Degenerate("keypoints are coincident; orientation is undefined".into()));
    }
    // `+ 0.0` maps a negative zero to positive so atan2 stays in its upper branch.
    let orientation = 0.5 * libm::atan2(2.0 * mu11 + 0.0, mu20 - mu02);
    let orientation = if orientation <= -core::f64::consts::FRAC_PI_2 {
        orientation + core::f64::consts::PI
    } else {
        orientation
    };
    Ok(EllipsePose { center, orientation })
}

/// Rotation (modulo pi) and center shift taking `from` to `to`.
pub fn global_delta(from: &EllipsePose, to: &EllipsePose) -> GlobalDelta {
    GlobalDelta {
        rotation: wrap_half_pi(to.orientation - from.orientation),
        shift: to.center - from.center,
    }
}

/// Rotates the set about its own centroid by the delta's rotation, then shifts it.
pub fn apply_global(points: &[Point2], delta: &GlobalDelta) -> Vec<Point2> {
    match centroid(points) {
        Some(pivot) => apply_global_about(points, pivot, delta),
        None => Vec::new(),
    }
}

/// `R(rotation) (p - pivot) + pivot + shift` for every point.
pub fn apply_global_about(points: &[Point2], pivot: Point2, delta: &GlobalDelta) -> Vec<Point2> {
    points
        .iter()
        .map(|&p| {
            // Written as a displacement so a zero delta returns `p` bit for bit.
            let d = p - pivot;
            p + (d.rotate(delta.rotation) - d) + delta.shift
        })
        .collect()
}

/// Centers used by the polar refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineCenters {
    pub reference_start: Point2,
    pub reference_now: Point2,
    pub moved: Point2,
}

/// Transfers each reference point's radial scale and residual angular shift (beyond the
/// global rotation) about the set centroid onto the globally moved target set. Centroids
/// are the means of each set.
pub fn local_polar_refine(
    reference_start: &[Point2],
    reference_now: &[Point2],
    moved: &[Point2],
    delta: &GlobalDelta,
) -> Result<Vec<Point2>> {
    let centers = RefineCenters {
        reference_start: centroid(reference_start).unwrap_or_default(),
        reference_now: centroid(reference_now).unwrap_or_default(),
        moved: centroid(moved).unwrap_or_default(),
    };
    local_polar_refine_with_centers(reference_start, reference_now, moved, delta, &centers)
}

/// [`local_polar_refine`] with explicitly supplied centroids.
pub fn local_polar_refine_with_centers(
    reference_start: &[Point2],
    reference_now: &[Point2],
    moved: &[Point2],
    delta: &GlobalDelta,
    centers: &RefineCenters,
) -> Result<Vec<Point2>> {
    let m = moved.len();
    if reference_start.len() != m || reference_now.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "point counts differ: {}, {}, {}",
            reference_start.len(),
            reference_now.len(),
            m
        )));
    }
    let out = (0..m)
        .map(|i| {
            let r0 = reference_start[i] - centers.reference_start;
            let rt = reference_now[i] - centers.reference_now;
            let h = moved[i] - centers.moved;
            let base = r0.norm();
            let scale = if base < RADIAL_EPSILON { 1.0 } else { rt.norm() / base };
            let swing = wrap_pi(rt.angle() - r0.angle() - delta.rotation);
            centers.moved + Point2::from_polar(scale * h.norm(), h.angle() + swing)
        })
        .collect();
    Ok(out)
}

fn subset(points: &[Point2], keep: &[bool]) -> Vec<Point2> {
    points.iter().zip(keep).filter(|(_, &k)| k).map(|(p, _)| *p).collect()
}

/// Builds the target sequence from the reference sequence and the matched initial target set.
///
/// Deltas are anchored at frame 0. For frame `t` only points visible in both frame 0 and
/// frame `t` drive the pose fits and centroids; every point is transformed. With fewer than
/// three such points the rotation is taken as zero, and with none the previous target frame
/// is repeated.
pub fn build_target_sequence(reference: &KeypointSequence, target_start: &[Point2]) -> Result<KeypointSequence> {
    let m = reference.point_count();
    if target_start.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "reference tracks {m} points but the target set has {}",
            target_start.len()
        )));
    }
    let ref0 = reference.positions(0);
    let vis0 = reference.visibility(0);
    let mut frames: Vec<Vec<TrackPoint>> = Vec::with_capacity(reference.frame_count());
    frames.push(
        target_start
            .iter()
            .zip(&vis0)
            .map(|(&pos, &visible)| TrackPoint { pos, visible })
            .collect(),
    );
    for t in 1..reference.frame_count() {
        let reft = reference.positions(t);
        let vist = reference.visibility(t);
        let support: Vec<bool> = vis0.iter().zip(&vist).map(|(a, b)| *a && *b).collect();
        let start_sub = subset(&ref0, &support);
        let now_sub = subset(&reft, &support);
        let positions = if start_sub.is_empty() {
            frames[t - 1].iter().map(|p| p.pos).collect()
        } else {
            let delta = match (fit_ellipse_pose(&start_sub), fit_ellipse_pose(&now_sub)) {
                (Ok(a), Ok(b)) => global_delta(&a, &b),
                _ => GlobalDelta {
                    rotation: 0.0,
                    shift: centroid(&now_sub).unwrap() - centroid(&start_sub).unwrap(),
                },
            };
            let pivot = centroid(&subset(target_start, &support)).unwrap();
            let moved = apply_global_about(target_start, pivot, &delta);
            let centers = RefineCenters {
                reference_start: centroid(&start_sub).unwrap(),
                reference_now: centroid(&now_sub).unwrap(),
                moved: centroid(&subset(&moved, &support)).unwrap(),
            };
            local_polar_refine_with_centers(&ref0, &reft, &moved, &delta, &centers)?
        };
        frames.push(
            positions
                .into_iter()
                .zip(vist)
                .map(|(pos, visible)| TrackPoint { pos, visible })
                .collect(),
        );
    }
    KeypointSequence::new(m, frames)
}

/// Anchored global deltas of every frame relative to frame 0, using all points.
pub fn anchored_deltas(reference: &KeypointSequence) -> Result<Vec<GlobalDelta>> {
    let pose0 = fit_ellipse_pose(&reference.positions(0))?;
    let mut out = vec![GlobalDelta::IDENTITY];
    for t in 1..reference.frame_count() {
        out.push(global_delta(&pose0, &fit_ellipse_pose(&reference.positions(t))?));
    }
    Ok(out)
}
