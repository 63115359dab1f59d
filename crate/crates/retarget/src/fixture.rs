//! Bundled synthetic inputs: a textured disk moving over a flat background, a target
//! ellipse, and coordinate-encoding feature grids for both objects.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retarget_core::{BinaryMask, FeatureGrid, Frame, FrameSequence, Point2};

use crate::error::{Error, Result};
use crate::tensorio;

pub const SIZE: usize = 96;
pub const FRAMES: usize = 16;
pub const DISK_RADIUS: f64 = 16.0;
pub const ELLIPSE_CENTER: Point2 = Point2 { x: 48.0, y: 48.0 };
pub const ELLIPSE_AXES: (f64, f64) = (24.0, 13.0);
pub const BACKGROUND: [u8; 3] = [16, 16, 24];
/// Object pixels have a red channel at least this bright; the background never does.
pub const OBJECT_RED_THRESHOLD: u8 = 100;

/// Seed used for the fixture's feature noise and written into its config.
pub const SEED: u64 = 7;

/// Disk center at frame `t`. Integer steps keep every frame an exact translate of frame 0,
/// and the travel is short enough for the retargeted ellipse to stay inside the frame.
pub fn disk_center(t: usize) -> Point2 {
    let dy = (6.0 * (2.0 * PI * t as f64 / FRAMES as f64).sin()).round();
    Point2::new((34 + t + t / 2) as f64, 48.0 + dy)
}

fn texture(u: f64, v: f64) -> [u8; 3] {
    let r = 185.0 + 50.0 * (v / 2.5).sin();
    let g = 128.0 + 100.0 * (u / 3.0).sin() * (v / 4.0).cos();
    let b = 128.0 + 90.0 * ((u + 2.0 * v) / 5.0).cos();
    [r, g, b].map(|c| c.round().clamp(0.0, 255.0) as u8)
}

pub fn frame(t: usize) -> Frame {
    let c = disk_center(t);
    let mut f = Frame::filled(SIZE, SIZE, BACKGROUND);
    for y in 0..SIZE {
        for x in 0..SIZE {
            let (u, v) = (x as f64 - c.x, y as f64 - c.y);
            if u * u + v * v <= DISK_RADIUS * DISK_RADIUS {
                f.set_pixel(x, y, texture(u, v));
            }
        }
    }
    f
}

pub fn frames() -> FrameSequence {
    FrameSequence::new((0..FRAMES).map(frame).collect()).expect("equal sizes")
}

pub fn ref_mask() -> BinaryMask {
    let c = disk_center(0);
    BinaryMask::from_fn(SIZE, SIZE, |x, y| Point2::new(x as f64, y as f64).distance(c) <= DISK_RADIUS)
}

pub fn tar_mask() -> BinaryMask {
    let (a, b) = ELLIPSE_AXES;
    BinaryMask::from_fn(SIZE, SIZE, |x, y| {
        let (u, v) = ((x as f64 - ELLIPSE_CENTER.x) / a, (y as f64 - ELLIPSE_CENTER.y) / b);
        u * u + v * v <= 1.0
    })
}

/// Maps image coordinates to object-normalized ones (unit radius at the silhouette).
type Normalize = fn(Point2) -> Point2;

fn ref_normalize(p: Point2) -> Point2 {
    let c = disk_center(0);
    Point2::new((p.x - c.x) / DISK_RADIUS, (p.y - c.y) / DISK_RADIUS)
}

fn tar_normalize(p: Point2) -> Point2 {
    Point2::new((p.x - ELLIPSE_CENTER.x) / ELLIPSE_AXES.0, (p.y - ELLIPSE_CENTER.y) / ELLIPSE_AXES.1)
}

/// Plane-wave encoding of normalized coordinates, blended to a constant vector outside
/// the object, plus uniform noise. `layer` changes the frequencies so layers differ.
fn feature_grid(res: usize, channels: usize, layer: usize, normalize: Normalize, rng: &mut ChaCha8Rng) -> FeatureGrid {
    let golden = PI * (3.0 - 5f64.sqrt());
    let waves: Vec<(f64, f64, f64)> = (0..channels)
        .map(|k| {
            let freq = 0.6 + 0.35 * ((k + layer) % 6) as f64;
            let angle = golden * (k + 3 * layer) as f64;
            (freq * angle.cos(), freq * angle.sin(), 0.7 * k as f64)
        })
        .collect();
    let scale = SIZE as f64 / res as f64;
    let mut grid = FeatureGrid::zeros(res, res, channels);
    for row in 0..res {
        for col in 0..res {
            let p = Point2::new((col as f64 + 0.5) * scale - 0.5, (row as f64 + 0.5) * scale - 0.5);
            let q = normalize(p);
            let inside = ((1.15 - q.norm()) / 0.3).clamp(0.0, 1.0);
            for (k, v) in grid.vector_mut(row * res + col).iter_mut().enumerate() {
                let (wx, wy, phase) = waves[k];
                let code = (PI * (wx * q.x + wy * q.y) + phase).sin();
                let background = if k % 2 == 0 { -0.5 } else { 0.5 };
                *v = (inside * code + (1.0 - inside) * background + rng.random_range(-0.03..0.03)) as f32;
            }
        }
    }
    grid
}

/// Paths written by [`write_fixture`].
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub dir: PathBuf,
    pub config: PathBuf,
}

/// Diffusion layers as (resolution, channels).
pub const SD_LAYERS: [(usize, usize); 2] = [(24, 12), (12, 24)];
pub const DINO_LAYER: (usize, usize) = (12, 16);

/// Writes frames, masks, features and a `config.txt` pointing at them into `dir`.
pub fn write_fixture(dir: impl AsRef<Path>) -> Result<FixturePaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    tensorio::write_frames_ppm(&frames(), dir.join("frames"))?;
    tensorio::write_mask_pgm(&ref_mask(), dir.join("ref_mask.pgm"))?;
    tensorio::write_mask_pgm(&tar_mask(), dir.join("tar_mask.pgm"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for (name, normalize) in [("ref", ref_normalize as Normalize), ("tar", tar_normalize as Normalize)] {
        for (i, &(res, c)) in SD_LAYERS.iter().enumerate() {
            tensorio::write_fgrid(&feature_grid(res, c, i, normalize, &mut rng), dir.join(format!("{name}_sd{i}.fgrid")))?;
        }
        let (res, c) = DINO_LAYER;
        tensorio::write_fgrid(&feature_grid(res, c, 7, normalize, &mut rng), dir.join(format!("{name}_dino.fgrid")))?;
    }
    let config = dir.join("config.txt");
    let text = format!(
        "# synthetic fixture\n\
         ref_frames = frames\n\
         ref_mask = ref_mask.pgm\n\
         tar_mask = tar_mask.pgm\n\
         ref_sd = ref_sd0.fgrid, ref_sd1.fgrid\n\
         tar_sd = tar_sd0.fgrid, tar_sd1.fgrid\n\
         ref_dino = ref_dino.fgrid\n\
         tar_dino = tar_dino.fgrid\n\
         out_dir = out\n\
         seed = {SEED}\n"
    );
    std::fs::write(&config, text).map_err(|e| Error::io(&config, e))?;
    Ok(FixturePaths { dir: dir.to_path_buf(), config })
}
