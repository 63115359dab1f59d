//! Joint PCA of dense descriptors, bilinear upsampling, two-slice feature fusion and
//! nearest-neighbor keypoint correspondence.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::grid::{BinaryMask, FeatureGrid};
use crate::linalg::symmetric_eigen_descending;

/// Default reduced dimension for diffusion features.
pub const DEFAULT_PCA_COMPONENTS: usize = 64;

/// Principal directions of a pixel set.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// `channels x components`, one principal direction per column.
    pub components: DMatrix<f64>,
    /// Variance along each retained direction, descending.
    pub variances: Vec<f64>,
    pub total_variance: f64,
}

impl PcaProjection {
    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    pub fn project(&self, v: &[f32]) -> Vec<f64> {
        (0..self.n_components())
            .map(|k| {
                v.iter()
                    .zip(&self.mean)
                    .enumerate()
                    .map(|(c, (&x, &mu))| (x as f64 - mu) * self.components[(c, k)])
                    .sum()
            })
            .collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (k, &a) in coords.iter().enumerate() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += a * self.components[(c, k)];
            }
        }
        out
    }
}

/// Fits PCA on the pixels of both grids stacked together.
///
/// Eigenvector signs are chosen so the projected value of largest magnitude is positive,
/// which makes the projection independent of any rotation of the input channel space.
pub fn fit_joint_pca(a: &FeatureGrid, b: &FeatureGrid, n_components: usize) -> Result<PcaProjection> {
    if a.channels() != b.channels() {
        return Err(Error::ShapeMismatch(format!(
            "channel counts differ: {} vs {}",
            a.channels(),
            b.channels()
        )));
    }
    let channels = a.channels();
    let rows = a.pixel_count() + b.pixel_count();
    if n_components == 0 || n_components > channels || n_components > rows {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {n_components} components of {channels} channels over {rows} pixels"
        )));
    }
    let mut mean = alloc::vec![0.0f64; channels];
    for g in [a, b] {
        for v in g.data().chunks_exact(channels) {
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += x as f64;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);

    let centered = DMatrix::from_fn(rows, channels, |r, c| {
        let v = if r < a.pixel_count() { a.vector(r)[c] } else { b.vector(r - a.pixel_count())[c] };
        v as f64 - mean[c]
    });
    let denom = if rows > 1 { (rows - 1) as f64 } else { 1.0 };
    let cov = (centered.transpose() * &centered) / denom;
    let total_variance = cov.trace();
    if !(total_variance > 0.0) {
        return Err(Error::Degenerate("joint features have zero variance".into()));
    }
    let (values, vectors) = symmetric_eigen_descending(cov);
    let mut components = vectors.columns(0, n_components).into_owned();
    let scores = &centered * &components;
    for k in 0..n_components {
        let mut lead = 0.0f64;
        for r in 0..rows {
            if scores[(r, k)].abs() > lead.abs() {
                lead = scores[(r, k)];
            }
        }
        if lead < 0.0 {
            components.column_mut(k).neg_mut();
        }
    }
    Ok(PcaProjection {
        mean,
        components,
        variances: values[..n_components].iter().map(|v| v.max(0.0)).collect(),
        total_variance,
    })
}

fn project_grid(pca: &PcaProjection, g: &FeatureGrid) -> FeatureGrid {
    let k = pca.n_components();
    let mut data = Vec::with_capacity(g.pixel_count() * k);
    for i in 0..g.pixel_count() {
        data.extend(pca.project(g.vector(i)).into_iter().map(|v| v as f32));
    }
    FeatureGrid::new(g.height(), g.width(), k, data).expect("consistent size")
}

/// Projects both grids onto the top principal directions of their joint pixel set.
pub fn pca_joint_reduce(a: &FeatureGrid, b: &FeatureGrid, n_components: usize) -> Result<(FeatureGrid, FeatureGrid)> {
    let pca = fit_joint_pca(a, b, n_components)?;
    Ok((project_grid(&pca, a), project_grid(&pca, b)))
}

/// Per-channel bilinear resize with pixel-center alignment (align-corners off); samples
/// beyond the border are clamped to the edge.
pub fn upsample_bilinear(grid: &FeatureGrid, height: usize, width: usize) -> Result<FeatureGrid> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!("output size {height}x{width} is empty")));
    }
    if grid.pixel_count() == 0 {
        return Err(Error::InvalidArgument("input grid is empty".into()));
    }
    let (h_in, w_in, c) = (grid.height(), grid.width(), grid.channels());
    let axis = |out: usize, n_out: usize, n_in: usize| {
        let s = ((out as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = libm::floor(s) as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut data = Vec::with_capacity(height * width * c);
    for y in 0..height {
        let (y0, y1, fy) = axis(y, height, h_in);
        for x in 0..width {
            let (x0, x1, fx) = axis(x, width, w_in);
            let (v00, v01, v10, v11) = (grid.at(y0, x0), grid.at(y0, x1), grid.at(y1, x0), grid.at(y1, x1));
            for ch in 0..c {
                let top = lerp(v00[ch] as f64, v01[ch] as f64, fx);
                let bottom = lerp(v10[ch] as f64, v11[ch] as f64, fx);
                data.push(lerp(top, bottom, fy) as f32);
            }
        }
    }
    FeatureGrid::new(height, width, c, data)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Two L2-normalized descriptor slices concatenated per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatureGrid {
    grid: FeatureGrid,
    low_channels: usize,
}

impl FusedFeatureGrid {
    pub fn grid(&self) -> &FeatureGrid {
        &self.grid
    }

    /// Channels of the leading (diffusion) slice.
    pub fn low_channels(&self) -> usize {
        self.low_channels
    }

    /// Channels of the trailing (token) slice.
    pub fn high_channels(&self) -> usize {
        self.grid.channels() - self.low_channels
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    /// Scales every value by `factor`, keeping the slice layout.
    pub fn scaled(&self, factor: f32) -> FusedFeatureGrid {
        let data = self.grid.data().iter().map(|v| v * factor).collect();
        FusedFeatureGrid {
            grid: FeatureGrid::new(self.grid.height(), self.grid.width(), self.grid.channels(), data)
                .expect("same size"),
            low_channels: self.low_channels,
        }
    }

    /// Wraps an already fused grid (e.g. one read back from disk).
    pub fn from_parts(grid: FeatureGrid, low_channels: usize) -> Result<Self> {
        if low_channels > grid.channels() {
            return Err(Error::InvalidArgument(format!(
                "slice of {low_channels} channels exceeds {}",
                grid.channels()
            )));
        }
        Ok(FusedFeatureGrid { grid, low_channels })
    }
}

fn push_normalized(out: &mut Vec<f32>, v: &[f32]) {
    let norm = libm::sqrt(v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>());
    if norm > 0.0 {
        out.extend(v.iter().map(|&x| (x as f64 / norm) as f32));
    } else {
        out.extend(v.iter().map(|_| 0.0f32));
    }
}

/// Normalizes each pixel's low-level and high-level vectors to unit length and concatenates
/// them. Zero vectors stay zero.
pub fn fuse_features(low: &FeatureGrid, high: &FeatureGrid) -> Result<FusedFeatureGrid> {
    if low.height() != high.height() || low.width() != high.width() {
        return Err(Error::ShapeMismatch(format!(
            "fusion needs equal resolution, got {}x{} and {}x{}",
            low.height(),
            low.width(),
            high.height(),
            high.width()
        )));
    }
    let channels = low.channels() + high.channels();
    let mut data = Vec::with_capacity(low.pixel_count() * channels);
    for i in 0..low.pixel_count() {
        push_normalized(&mut data, low.vector(i));
        push_normalized(&mut data, high.vector(i));
    }
    Ok(FusedFeatureGrid {
        grid: FeatureGrid::new(low.height(), low.width(), channels, data)?,
        low_channels: low.channels(),
    })
}

/// Best target pixel for one reference keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    /// Row-major index into the target grid.
    pub pixel: usize,
    /// Negated Euclidean distance between the fused vectors (never positive).
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub matches: Vec<Match>,
    width: usize,
}

impl Correspondence {
    /// Matched pixel centers in target image coordinates.
    pub fn target_points(&self) -> Vec<Point2> {
        self.matches
            .iter()
            .map(|m| Point2::new((m.pixel % self.width) as f64, (m.pixel / self.width) as f64))
            .collect()
    }
}

/// For each keypoint, the masked target pixel whose fused vector is nearest to the keypoint's
/// vector (read at its nearest pixel). Ties go to the lowest row-major index; several
/// keypoints may share a match.
pub fn match_keypoints(
    reference: &FusedFeatureGrid,
    target: &FusedFeatureGrid,
    keypoints: &[Point2],
    target_mask: &BinaryMask,
) -> Result<Correspondence> {
    let (rg, tg) = (reference.grid(), target.grid());
    if rg.channels() != tg.channels() {
        return Err(Error::ShapeMismatch(format!(
            "fused channel counts differ: {} vs {}",
            rg.channels(),
            tg.channels()
        )));
    }
    if target_mask.height() != tg.height() || target_mask.width() != tg.width() {
        return Err(Error::ShapeMismatch(format!(
            "target mask is {}x{} but target features are {}x{}",
            target_mask.height(),
            target_mask.width(),
            tg.height(),
            tg.width()
        )));
    }
    let candidates: Vec<usize> = (0..tg.pixel_count()).filter(|&i| target_mask.bits()[i]).collect();
    if candidates.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut matches = Vec::with_capacity(keypoints.len());
    for (j, kp) in keypoints.iter().enumerate() {
        let (x, y) = kp.nearest_pixel(rg.width(), rg.height()).ok_or_else(|| {
            Error::InvalidArgument(format!("keypoint {j} at ({}, {}) lies outside the reference image", kp.x, kp.y))
        })?;
        let query = rg.at(y, x);
        let mut best = (candidates[0], f64::INFINITY);
        for &i in &candidates {
            let d = squared_distance(tg.vector(i), query);
            if d < best.1 {
                best = (i, d);
            }
        }
        matches.push(Match { pixel: best.0, similarity: -libm::sqrt(best.1) });
    }
    Ok(Correspondence { matches, width: tg.width() })
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}
