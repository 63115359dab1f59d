//! Plain-text `key = value` pipeline configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are errors. Path values
//! are resolved against the directory of the file that sets them; overrides given on the
//! command line are resolved against the working directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use retarget_core::guidance::GuidanceConfig;
use retarget_core::sampling::SamplingParams;
use retarget_core::tps::{Regularization, WarpMode, DEFAULT_RELATIVE_LAMBDA};
use retarget_core::tracker::TrackerParams;

use crate::error::{Error, Result};

/// Input and output locations. Every field is optional until a stage needs it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub ref_frames: Option<PathBuf>,
    pub ref_mask: Option<PathBuf>,
    pub tar_mask: Option<PathBuf>,
    /// One FGRID per diffusion layer, same order for both images.
    pub ref_sd: Vec<PathBuf>,
    pub tar_sd: Vec<PathBuf>,
    pub ref_dino: Option<PathBuf>,
    pub tar_dino: Option<PathBuf>,
    /// External tracker output that replaces the internal tracker.
    pub tracks: Option<PathBuf>,
    /// Caller-provided attention queries and keys (FGR4, `[P][C][F][D]`).
    pub attn_q: Option<PathBuf>,
    pub attn_k: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub m: usize,
    pub contour_fraction: f64,
    /// Contour arc-length step; `None` selects count mode.
    pub contour_interval: Option<f64>,
    pub n_pca: usize,
    /// TPS smoothing as a multiple of the mean squared center distance.
    pub tps_lambda_rel: f64,
    pub tracker: TrackerParams,
    pub guidance: GuidanceConfig,
    /// Attention grid used when Q/K are synthesized from frames.
    pub attn_height: usize,
    pub attn_width: usize,
    pub attn_heads: usize,
    pub attn_scale: f64,
    pub warp_mode: WarpMode,
    pub fill: [u8; 3],
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let sampling = SamplingParams::default();
        PipelineConfig {
            m: sampling.total,
            contour_fraction: sampling.contour_fraction,
            contour_interval: None,
            n_pca: retarget_core::matching::DEFAULT_PCA_COMPONENTS,
            tps_lambda_rel: DEFAULT_RELATIVE_LAMBDA,
            tracker: TrackerParams::default(),
            guidance: GuidanceConfig::default(),
            attn_height: 8,
            attn_width: 8,
            attn_heads: 2,
            attn_scale: 4.0,
            warp_mode: WarpMode::Full,
            fill: [0, 0, 0],
            seed: 0,
            threads: 0,
            paths: Paths::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_fill(value: &str) -> Result<[u8; 3]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("fill: expected r,g,b, got {value:?}")));
    }
    let mut rgb = [0u8; 3];
    for (c, p) in rgb.iter_mut().zip(parts) {
        *c = parse("fill", p)?;
    }
    Ok(rgb)
}

fn optional(value: &str) -> Option<&str> {
    (!value.is_empty() && value != "none").then_some(value)
}

impl PipelineConfig {
    pub fn sampling(&self) -> SamplingParams {
        SamplingParams { total: self.m, contour_fraction: self.contour_fraction, contour_interval: self.contour_interval }
    }

    pub fn regularization(&self) -> Regularization {
        Regularization::Relative(self.tps_lambda_rel)
    }

    /// Parses a configuration file on top of the defaults.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut cfg = PipelineConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
            cfg.set(key.trim(), value.trim(), &base)
                .map_err(|e| Error::Config(format!("{}:{}: {}", path.display(), i + 1, strip(e))))?;
        }
        Ok(cfg)
    }

    /// Applies `key=value` overrides; relative paths stay relative to the working directory.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (key, value) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(key.trim(), value.trim(), Path::new(""))?;
        }
        Ok(())
    }

    /// Sets one field. Path values are joined onto `base` unless absolute.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = |v: &str| base.join(v);
        let path_opt = |v: &str| optional(v).map(|v| base.join(v));
        let path_list = |v: &str| -> Vec<PathBuf> {
            v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| base.join(s)).collect()
        };
        match key {
            "m" => self.m = parse(key, value)?,
            "contour_fraction" => self.contour_fraction = parse(key, value)?,
            "contour_interval" => self.contour_interval = optional(value).map(|v| parse(key, v)).transpose()?,
            "n_pca" => self.n_pca = parse(key, value)?,
            "tps_lambda_rel" => self.tps_lambda_rel = parse(key, value)?,
            "tracker_patch" => self.tracker.patch = parse(key, value)?,
            "tracker_search" => self.tracker.search = parse(key, value)?,
            "tracker_min_corr" => self.tracker.min_correlation = parse(key, value)?,
            "guidance_timestep" => self.guidance.timestep = parse(key, value)?,
            "guidance_top_k" => self.guidance.top_k = parse(key, value)?,
            "guidance_strength" => self.guidance.strength = parse(key, value)?,
            "guidance_steps" => self.guidance.total_steps = parse(key, value)?,
            "guidance_guided_steps" => self.guidance.guided_steps = parse(key, value)?,
            "attn_height" => self.attn_height = parse(key, value)?,
            "attn_width" => self.attn_width = parse(key, value)?,
            "attn_heads" => self.attn_heads = parse(key, value)?,
            "attn_scale" => self.attn_scale = parse(key, value)?,
            "warp_mode" => {
                self.warp_mode = match value {
                    "full" => WarpMode::Full,
                    "masked" => WarpMode::Masked,
                    _ => return Err(Error::Config(format!("warp_mode: expected full or masked, got {value:?}"))),
                }
            }
            "fill" => self.fill = parse_fill(value)?,
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "ref_frames" => self.paths.ref_frames = path_opt(value),
            "ref_mask" => self.paths.ref_mask = path_opt(value),
            "tar_mask" => self.paths.tar_mask = path_opt(value),
            "ref_sd" => self.paths.ref_sd = path_list(value),
            "tar_sd" => self.paths.tar_sd = path_list(value),
            "ref_dino" => self.paths.ref_dino = path_opt(value),
            "tar_dino" => self.paths.tar_dino = path_opt(value),
            "tracks" => self.paths.tracks = path_opt(value),
            "attn_q" => self.paths.attn_q = path_opt(value),
            "attn_k" => self.paths.attn_k = path_opt(value),
            "out_dir" => self.paths.out_dir = Some(path(value)),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Checks every numeric field before any stage runs.
    pub fn validate(&self) -> Result<()> {
        self.sampling().validate()?;
        self.tracker.validate()?;
        self.guidance.validate(None)?;
        if self.n_pca == 0 {
            return Err(Error::Config("n_pca must be at least 1".into()));
        }
        if !(self.tps_lambda_rel >= 0.0 && self.tps_lambda_rel.is_finite()) {
            return Err(Error::Config(format!("tps_lambda_rel must be finite and non-negative, got {}", self.tps_lambda_rel)));
        }
        if self.attn_height == 0 || self.attn_width == 0 || self.attn_heads == 0 {
            return Err(Error::Config("attention grid and head count must be positive".into()));
        }
        if !self.attn_scale.is_finite() {
            return Err(Error::Config(format!("attn_scale must be finite, got {}", self.attn_scale)));
        }
        if self.paths.ref_sd.len() != self.paths.tar_sd.len() {
            return Err(Error::Config(format!(
                "ref_sd lists {} layers but tar_sd lists {}",
                self.paths.ref_sd.len(),
                self.paths.tar_sd.len()
            )));
        }
        if self.paths.attn_q.is_some() != self.paths.attn_k.is_some() {
            return Err(Error::Config("attn_q and attn_k must be given together".into()));
        }
        Ok(())
    }

    /// Every numeric setting in canonical order, one `key = value` per line. Paths are left
    /// out so the text depends only on the run parameters.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("m", self.m.to_string());
        kv("contour_fraction", self.contour_fraction.to_string());
        kv("contour_interval", self.contour_interval.map_or("none".into(), |d| d.to_string()));
        kv("n_pca", self.n_pca.to_string());
        kv("tps_lambda_rel", self.tps_lambda_rel.to_string());
        kv("tracker_patch", self.tracker.patch.to_string());
        kv("tracker_search", self.tracker.search.to_string());
        kv("tracker_min_corr", self.tracker.min_correlation.to_string());
        kv("guidance_timestep", self.guidance.timestep.to_string());
        kv("guidance_top_k", self.guidance.top_k.to_string());
        kv("guidance_strength", self.guidance.strength.to_string());
        kv("guidance_steps", self.guidance.total_steps.to_string());
        kv("guidance_guided_steps", self.guidance.guided_steps.to_string());
        kv("attn_height", self.attn_height.to_string());
        kv("attn_width", self.attn_width.to_string());
        kv("attn_heads", self.attn_heads.to_string());
        kv("attn_scale", self.attn_scale.to_string());
        kv("warp_mode", match self.warp_mode {
            WarpMode::Full => "full".into(),
            WarpMode::Masked => "masked".into(),
        });
        kv("fill", format!("{},{},{}", self.fill[0], self.fill[1], self.fill[2]));
        kv("seed", self.seed.to_string());
        s
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.paths.out_dir.as_deref().ok_or_else(|| Error::Config("out_dir is not set".into()))
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

/// Fetches a required path, naming the key when it is missing.
pub fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| Error::Config(format!("{key} is not set")))
}
