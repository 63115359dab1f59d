//! The individual pipeline stages, in memory and as file-to-file commands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use retarget_core::guidance::{temporal_attention, topk_mask, SparseMask, TemporalAttention};
use retarget_core::matching::{fuse_features, match_keypoints, pca_joint_reduce, upsample_bilinear, FusedFeatureGrid};
use retarget_core::sampling::{sample_structure_aware, StructureSamples};
use retarget_core::tps::{check_sequences, warp_sequence_frame, WarpMode, WarpOptions};
use retarget_core::tracker::track_keypoints_ncc;
use retarget_core::{motion, BinaryMask, FeatureGrid, Frame, FrameSequence, KeypointSequence, Point2, Tensor4, TrackPoint};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::tensorio;

/// External frame-0 positions may differ from the keypoints by at most this many pixels.
pub const EXTERNAL_TRACK_TOLERANCE: f64 = 1.0;

pub fn sample(mask: &BinaryMask, cfg: &PipelineConfig) -> Result<StructureSamples> {
    let samples = sample_structure_aware(mask, &cfg.sampling(), cfg.seed)?;
    if samples.interval_exceeds_perimeter {
        log::warn!(
            "contour interval {:?} exceeds the perimeter {:.1}; a single contour point was kept",
            cfg.contour_interval,
            samples.contour.perimeter()
        );
    }
    Ok(samples)
}

/// Fused reference and target features at mask resolution.
///
/// Each diffusion layer pair is reduced by a joint PCA to `min(n_pca, channels, pixels)`
/// components and upsampled; the layers are concatenated and fused with the upsampled
/// token features.
pub fn fuse_pair(
    ref_sd: &[FeatureGrid],
    tar_sd: &[FeatureGrid],
    ref_dino: &FeatureGrid,
    tar_dino: &FeatureGrid,
    ref_size: (usize, usize),
    tar_size: (usize, usize),
    n_pca: usize,
) -> Result<(FusedFeatureGrid, FusedFeatureGrid)> {
    if ref_sd.is_empty() || ref_sd.len() != tar_sd.len() {
        return Err(Error::Config(format!(
            "need the same positive number of reference and target layers, got {} and {}",
            ref_sd.len(),
            tar_sd.len()
        )));
    }
    let (mut ref_low, mut tar_low) = (Vec::new(), Vec::new());
    for (a, b) in ref_sd.iter().zip(tar_sd) {
        let n = n_pca.min(a.channels()).min(a.pixel_count() + b.pixel_count());
        let (ra, rb) = pca_joint_reduce(a, b, n)?;
        ref_low.push(upsample_bilinear(&ra, ref_size.0, ref_size.1)?);
        tar_low.push(upsample_bilinear(&rb, tar_size.0, tar_size.1)?);
    }
    let ref_high = upsample_bilinear(ref_dino, ref_size.0, ref_size.1)?;
    let tar_high = upsample_bilinear(tar_dino, tar_size.0, tar_size.1)?;
    Ok((
        fuse_features(&FeatureGrid::concat_channels(&ref_low)?, &ref_high)?,
        fuse_features(&FeatureGrid::concat_channels(&tar_low)?, &tar_high)?,
    ))
}

/// Visible single-frame track of the given points.
pub fn single_frame(points: &[Point2]) -> KeypointSequence {
    KeypointSequence::from_points(points)
}

/// Internal NCC tracks, or checked external tracks when `external` is given.
pub fn track(
    frames: &FrameSequence,
    keypoints: &[Point2],
    cfg: &PipelineConfig,
    external: Option<KeypointSequence>,
) -> Result<KeypointSequence> {
    let Some(tracks) = external else {
        return Ok(track_keypoints_ncc(frames, keypoints, &cfg.tracker)?);
    };
    if tracks.frame_count() != frames.len() || tracks.point_count() != keypoints.len() {
        return Err(Error::Config(format!(
            "external tracks cover {} frames and {} points, expected {} and {}",
            tracks.frame_count(),
            tracks.point_count(),
            frames.len(),
            keypoints.len()
        )));
    }
    tensorio::check_tracks_in_bounds(&tracks, frames.width(), frames.height()).map_err(Error::Config)?;
    for (i, (p, k)) in tracks.frame(0).iter().zip(keypoints).enumerate() {
        if p.pos.distance(*k) > EXTERNAL_TRACK_TOLERANCE {
            return Err(Error::Config(format!(
                "external track {i} starts at ({}, {}) but the keypoint is at ({}, {})",
                p.pos.x, p.pos.y, k.x, k.y
            )));
        }
    }
    Ok(tracks)
}

pub fn retarget(reference: &KeypointSequence, matched: &[Point2]) -> Result<KeypointSequence> {
    Ok(motion::build_target_sequence(reference, matched)?)
}

/// Warps every frame, one rayon task per frame.
pub fn warp(
    frames: &FrameSequence,
    reference: &KeypointSequence,
    target: &KeypointSequence,
    ref_mask: Option<&BinaryMask>,
    cfg: &PipelineConfig,
) -> Result<FrameSequence> {
    check_sequences(frames, reference, target)?;
    if cfg.warp_mode == WarpMode::Masked && ref_mask.is_none() {
        return Err(Error::Config("masked warp needs ref_mask".into()));
    }
    let opts = WarpOptions {
        regularization: cfg.regularization(),
        mode: cfg.warp_mode,
        reference_mask: ref_mask,
        fill: cfg.fill,
    };
    let out = (0..frames.len())
        .into_par_iter()
        .map(|t| warp_sequence_frame(frames, reference, target, t, &opts))
        .collect::<retarget_core::Result<Vec<Frame>>>()?;
    Ok(FrameSequence::new(out)?)
}

/// Stand-in Q/K read off the frames: the block-mean color of every cell of an
/// `attn_height x attn_width` grid, centered over time and scaled to unit length, times
/// `attn_scale * (head + 1)`. Queries and keys are equal. Shape `[P][C][F][3]`.
pub fn synthetic_queries(frames: &FrameSequence, cfg: &PipelineConfig) -> Result<Tensor4> {
    let (h, w, ah, aw) = (frames.height(), frames.width(), cfg.attn_height, cfg.attn_width);
    if ah > h || aw > w {
        return Err(Error::Config(format!("attention grid {ah}x{aw} is finer than the {h}x{w} frames")));
    }
    let f = frames.len();
    let mut cells = vec![[0.0f64; 3]; ah * aw * f];
    for (t, frame) in frames.frames().iter().enumerate() {
        for by in 0..ah {
            for bx in 0..aw {
                let (y0, y1, x0, x1) = (by * h / ah, (by + 1) * h / ah, bx * w / aw, (bx + 1) * w / aw);
                let mut sum = [0.0f64; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let px = frame.pixel(x, y);
                        for c in 0..3 {
                            sum[c] += px[c] as f64;
                        }
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as f64 * 255.0;
                cells[(by * aw + bx) * f + t] = sum.map(|s| s / n);
            }
        }
    }
    for p in 0..ah * aw {
        let series = &mut cells[p * f..(p + 1) * f];
        let mut mean = [0.0; 3];
        for v in series.iter() {
            for c in 0..3 {
                mean[c] += v[c] / f as f64;
            }
        }
        for v in series.iter_mut() {
            for c in 0..3 {
                v[c] -= mean[c];
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }
    Ok(Tensor4::from_fn([ah * aw, cfg.attn_heads, f, 3], |[p, c, t, d]| {
        (cfg.attn_scale * (c + 1) as f64 * cells[p * f + t][d]) as f32
    }))
}

/// Reference attention and its top-k mask.
pub fn guidance_pack(queries: &Tensor4, keys: &Tensor4, cfg: &PipelineConfig) -> Result<(TemporalAttention, SparseMask)> {
    cfg.guidance.validate(Some(queries.dims()[2]))?;
    let attention = temporal_attention(queries, keys)?;
    let mask = topk_mask(&attention, cfg.guidance.top_k)?;
    Ok((attention, mask))
}

/// Writes both guidance tensors, then reads them back and rechecks row sums and the
/// per-row count of the mask.
pub fn write_guidance(attention: &TemporalAttention, mask: &SparseMask, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let (a_path, m_path) = (dir.join("attn_ref.fgr4"), dir.join("attn_mask.fgr4"));
    tensorio::write_fgr4(attention.tensor(), &a_path)?;
    tensorio::write_fgr4(&mask.to_tensor(), &m_path)?;
    TemporalAttention::from_tensor(tensorio::read_fgr4(&a_path)?).map_err(|e| Error::format(&a_path, e.to_string()))?;
    let back = SparseMask::from_tensor(&tensorio::read_fgr4(&m_path)?).map_err(|e| Error::format(&m_path, e.to_string()))?;
    if back.k() != mask.k() {
        return Err(Error::format(&m_path, format!("mask rows hold {} ones, expected {}", back.k(), mask.k())));
    }
    Ok((a_path, m_path))
}

/// Frames with every keypoint drawn as a small cross: green when visible, red otherwise.
pub fn overlay(frames: &FrameSequence, tracks: &KeypointSequence) -> Result<FrameSequence> {
    if tracks.frame_count() != frames.len() {
        return Err(Error::Config(format!(
            "{} frames but tracks cover {}",
            frames.len(),
            tracks.frame_count()
        )));
    }
    let out = frames
        .frames()
        .iter()
        .zip(tracks.frames())
        .map(|(frame, row)| {
            let mut f = frame.clone();
            for p in row {
                draw_cross(&mut f, p);
            }
            f
        })
        .collect();
    Ok(FrameSequence::new(out)?)
}

fn draw_cross(frame: &mut Frame, p: &TrackPoint) {
    let color = if p.visible { [0, 255, 0] } else { [255, 0, 0] };
    let (cx, cy) = (p.pos.x.round() as i64, p.pos.y.round() as i64);
    for (dx, dy) in [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1), (-2, 0), (2, 0), (0, -2), (0, 2)] {
        let (x, y) = (cx + dx, cy + dy);
        if x >= 0 && y >= 0 && (x as usize) < frame.width() && (y as usize) < frame.height() {
            frame.set_pixel(x as usize, y as usize, color);
        }
    }
}

fn read_layers(paths: &[PathBuf]) -> Result<Vec<FeatureGrid>> {
    paths.iter().map(tensorio::read_fgrid).collect()
}

/// File inputs of the matching stage.
#[derive(Debug, Clone)]
pub struct MatchFiles<'a> {
    pub ref_sd: &'a [PathBuf],
    pub tar_sd: &'a [PathBuf],
    pub ref_dino: &'a Path,
    pub tar_dino: &'a Path,
    pub ref_mask: &'a Path,
    pub tar_mask: &'a Path,
    pub keypoints: &'a Path,
}

pub fn cmd_sample(mask: &Path, out: &Path, cfg: &PipelineConfig) -> Result<StructureSamples> {
    let samples = sample(&tensorio::read_mask_pgm(mask)?, cfg)?;
    tensorio::write_tracks(&single_frame(&samples.keypoints.points), out)?;
    Ok(samples)
}

pub fn cmd_match(files: &MatchFiles<'_>, out: &Path, cfg: &PipelineConfig) -> Result<Vec<Point2>> {
    let ref_mask = tensorio::read_mask_pgm(files.ref_mask)?;
    let tar_mask = tensorio::read_mask_pgm(files.tar_mask)?;
    let keypoints = tensorio::read_tracks(files.keypoints)?.positions(0);
    let (rf, tf) = fuse_pair(
        &read_layers(files.ref_sd)?,
        &read_layers(files.tar_sd)?,
        &tensorio::read_fgrid(files.ref_dino)?,
        &tensorio::read_fgrid(files.tar_dino)?,
        (ref_mask.height(), ref_mask.width()),
        (tar_mask.height(), tar_mask.width()),
        cfg.n_pca,
    )?;
    let matched = match_keypoints(&rf, &tf, &keypoints, &tar_mask)?.target_points();
    tensorio::write_tracks(&single_frame(&matched), out)?;
    Ok(matched)
}

pub fn cmd_track(
    frames: &Path,
    keypoints: &Path,
    external: Option<&Path>,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<KeypointSequence> {
    let frames = tensorio::read_frames_ppm(frames)?;
    let keypoints = tensorio::read_tracks(keypoints)?.positions(0);
    let external = external.map(tensorio::read_tracks).transpose()?;
    let tracks = track(&frames, &keypoints, cfg, external)?;
    tensorio::write_tracks(&tracks, out)?;
    Ok(tracks)
}

pub fn cmd_retarget(ref_tracks: &Path, matched: &Path, out: &Path) -> Result<KeypointSequence> {
    let reference = tensorio::read_tracks(ref_tracks)?;
    let target = retarget(&reference, &tensorio::read_tracks(matched)?.positions(0))?;
    tensorio::write_tracks(&target, out)?;
    Ok(target)
}

pub fn cmd_warp(
    frames: &Path,
    ref_tracks: &Path,
    tar_tracks: &Path,
    ref_mask: Option<&Path>,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<FrameSequence> {
    let frames = tensorio::read_frames_ppm(frames)?;
    let mask = ref_mask.map(tensorio::read_mask_pgm).transpose()?;
    let warped = warp(
        &frames,
        &tensorio::read_tracks(ref_tracks)?,
        &tensorio::read_tracks(tar_tracks)?,
        mask.as_ref(),
        cfg,
    )?;
    tensorio::write_frames_ppm(&warped, out)?;
    Ok(warped)
}

/// Where the guidance stage takes its queries and keys from.
#[derive(Debug, Clone, Copy)]
pub enum GuidanceSource<'a> {
    QueryKey { queries: &'a Path, keys: &'a Path },
    Frames(&'a Path),
}

pub fn cmd_guidance_pack(
    source: GuidanceSource<'_>,
    out_dir: &Path,
    cfg: &PipelineConfig,
) -> Result<(TemporalAttention, SparseMask)> {
    let (q, k) = match source {
        GuidanceSource::QueryKey { queries, keys } => (tensorio::read_fgr4(queries)?, tensorio::read_fgr4(keys)?),
        GuidanceSource::Frames(dir) => {
            let q = synthetic_queries(&tensorio::read_frames_ppm(dir)?, cfg)?;
            (q.clone(), q)
        }
    };
    let (attention, mask) = guidance_pack(&q, &k, cfg)?;
    write_guidance(&attention, &mask, out_dir)?;
    Ok((attention, mask))
}
