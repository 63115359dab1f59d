//! Frame-to-frame patch tracker based on zero-mean normalized cross-correlation.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::grid::FrameSequence;
use crate::keypoints::{KeypointSequence, TrackPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerParams {
    /// Odd patch side in pixels.
    pub patch: usize,
    /// Maximum displacement per frame along each axis.
    pub search: usize,
    /// Below this correlation the point is marked invisible and held.
    pub min_correlation: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams { patch: 11, search: 15, min_correlation: 0.3 }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("tracker patch must be odd, got {}", self.patch)));
        }
        if self.search == 0 {
            return Err(Error::InvalidArgument("tracker search radius must be at least 1".into()));
        }
        Ok(())
    }
}

struct Gray<'a> {
    data: &'a [f64],
    width: i64,
    height: i64,
}

impl Gray<'_> {
    fn fits(&self, cx: i64, cy: i64, half: i64) -> bool {
        cx - half >= 0 && cy - half >= 0 && cx + half < self.width && cy + half < self.height
    }

    /// Zero-mean patch values and their sum of squares.
    fn patch(&self, cx: i64, cy: i64, half: i64, out: &mut Vec<f64>) -> f64 {
        out.clear();
        for y in cy - half..=cy + half {
            let row = (y * self.width) as usize;
            out.extend_from_slice(&self.data[row + (cx - half) as usize..=row + (cx + half) as usize]);
        }
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        out.iter_mut().for_each(|v| *v -= mean);
        out.iter().map(|v| v * v).sum()
    }
}

/// Tracks each point from frame to frame by searching the `(2 search + 1)^2` window for the
/// patch with the highest normalized cross-correlation against the previous frame's patch.
/// Points whose patch leaves the frame, whose template is textureless, or whose best score
/// falls below `min_correlation` are marked invisible and hold their position. Ties prefer
/// the smaller displacement.
pub fn track_keypoints_ncc(frames: &FrameSequence, start: &[Point2], params: &TrackerParams) -> Result<KeypointSequence> {
    params.validate()?;
    let grays: Vec<Vec<f64>> = frames.frames().iter().map(|f| f.to_gray()).collect();
    let (w, h) = (frames.width() as i64, frames.height() as i64);
    let half = (params.patch / 2) as i64;
    let search = params.search as i64;

    let mut rows: Vec<Vec<TrackPoint>> = Vec::with_capacity(frames.len());
    rows.push(start.iter().copied().map(TrackPoint::visible).collect());
    let (mut template, mut candidate) = (Vec::new(), Vec::new());
    for t in 1..frames.len() {
        let prev = Gray { data: &grays[t - 1], width: w, height: h };
        let next = Gray { data: &grays[t], width: w, height: h };
        let row = rows[t - 1]
            .iter()
            .map(|tp| {
                let hold = TrackPoint { pos: tp.pos, visible: false };
                let (cx, cy) = (libm::round(tp.pos.x) as i64, libm::round(tp.pos.y) as i64);
                if !prev.fits(cx, cy, half) {
                    return hold;
                }
                let t_energy = prev.patch(cx, cy, half, &mut template);
                if t_energy <= 1e-12 {
                    return hold;
                }
                let mut best: Option<(f64, i64, i64)> = None;
                for dy in -search..=search {
                    for dx in -search..=search {
                        if !next.fits(cx + dx, cy + dy, half) {
                            continue;
                        }
                        let c_energy = next.patch(cx + dx, cy + dy, half, &mut candidate);
                        if c_energy <= 1e-12 {
                            continue;
                        }
                        let cross: f64 = template.iter().zip(&candidate).map(|(a, b)| a * b).sum();
                        let score = cross / libm::sqrt(t_energy * c_energy);
                        let better = match best {
                            None => true,
                            Some((s, bx, by)) => score > s || (score == s && dx * dx + dy * dy < bx * bx + by * by),
                        };
                        if better {
                            best = Some((score, dx, dy));
                        }
                    }
                }
                match best {
                    Some((score, dx, dy)) if score >= params.min_correlation => TrackPoint {
                        pos: tp.pos + Point2::new(dx as f64, dy as f64),
                        visible: true,
                    },
                    _ => hold,
                }
            })
            .collect();
        rows.push(row);
    }
    KeypointSequence::new(start.len(), rows)
}
