use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::Point2;

/// Sampled keypoints: the first `contour_count` points lie on the contour, the rest inside.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub points: Vec<Point2>,
    pub contour_count: usize,
}

impl KeypointSet {
    pub fn new(points: Vec<Point2>, contour_count: usize) -> Result<Self> {
        if contour_count > points.len() {
            return Err(Error::InvalidArgument(format!(
                "contour count {contour_count} exceeds {} points",
                points.len()
            )));
        }
        Ok(KeypointSet { points, contour_count })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn interior_count(&self) -> usize {
        self.points.len() - self.contour_count
    }

    pub fn contour(&self) -> &[Point2] {
        &self.points[..self.contour_count]
    }

    pub fn interior(&self) -> &[Point2] {
        &self.points[self.contour_count..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub pos: Point2,
    pub visible: bool,
}

impl TrackPoint {
    pub const fn visible(pos: Point2) -> Self {
        TrackPoint { pos, visible: true }
    }
}

/// `F` frames of `m` tracked points. Invisible points keep their last known position.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSequence {
    point_count: usize,
    frames: Vec<Vec<TrackPoint>>,
}

impl KeypointSequence {
    pub fn new(point_count: usize, frames: Vec<Vec<TrackPoint>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("a keypoint sequence needs at least one frame".into()));
        }
        if let Some((t, row)) = frames.iter().enumerate().find(|(_, r)| r.len() != point_count) {
            return Err(Error::ShapeMismatch(format!(
                "frame {t} has {} points, expected {point_count}",
                row.len()
            )));
        }
        Ok(KeypointSequence { point_count, frames })
    }

    /// Single frame with every point visible.
    pub fn from_points(points: &[Point2]) -> Self {
        KeypointSequence {
            point_count: points.len(),
            frames: alloc::vec![points.iter().copied().map(TrackPoint::visible).collect()],
        }
    }

    pub fn point_count(&self) -> usize {
        self.point_count
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, t: usize) -> &[TrackPoint] {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Vec<TrackPoint>] {
        &self.frames
    }

    pub fn positions(&self, t: usize) -> Vec<Point2> {
        self.frames[t].iter().map(|p| p.pos).collect()
    }

    pub fn visibility(&self, t: usize) -> Vec<bool> {
        self.frames[t].iter().map(|p| p.visible).collect()
    }

    /// Applies `f` to every position, keeping visibility.
    pub fn map_positions(&self, mut f: impl FnMut(Point2) -> Point2) -> KeypointSequence {
        KeypointSequence {
            point_count: self.point_count,
            frames: self
                .frames
                .iter()
                .map(|row| row.iter().map(|p| TrackPoint { pos: f(p.pos), visible: p.visible }).collect())
                .collect(),
        }
    }
}
