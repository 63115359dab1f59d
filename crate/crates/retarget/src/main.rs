use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use retarget::config::{require, PipelineConfig};
use retarget::stages::{self, GuidanceSource, MatchFiles};
use retarget::{fixture, run, with_threads, Result};

/// Keypoint-driven motion retargeting pipeline.
#[derive(Parser, Debug)]
#[command(name = "retarget", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Total keypoint count.
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Structure-aware keypoints from the reference mask.
    Sample {
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match keypoints into the target through fused features.
    Match {
        /// Reference diffusion layers, in order; repeatable.
        #[arg(long = "ref-sd")]
        ref_sd: Vec<PathBuf>,
        #[arg(long = "tar-sd")]
        tar_sd: Vec<PathBuf>,
        #[arg(long)]
        ref_dino: Option<PathBuf>,
        #[arg(long)]
        tar_dino: Option<PathBuf>,
        #[arg(long)]
        ref_mask: Option<PathBuf>,
        #[arg(long)]
        tar_mask: Option<PathBuf>,
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track keypoints through the reference frames.
    Track {
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        keypoints: PathBuf,
        /// Use these tracks instead of the internal tracker.
        #[arg(long)]
        tracks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transfer reference motion onto the matched target keypoints.
    Retarget {
        #[arg(long)]
        ref_tracks: PathBuf,
        #[arg(long)]
        matched: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Warp reference frames into the target shape.
    Warp {
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        ref_tracks: PathBuf,
        #[arg(long)]
        tar_tracks: PathBuf,
        #[arg(long)]
        ref_mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reference attention and top-k mask as FGR4 files.
    GuidancePack {
        #[arg(long, requires = "keys", conflicts_with = "frames")]
        queries: Option<PathBuf>,
        #[arg(long, requires = "queries")]
        keys: Option<PathBuf>,
        /// Synthesize queries and keys from these frames.
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// All stages, with caching and a manifest.
    Run,
    /// Write the synthetic fixture and its config.
    Fixture {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_overrides(&common.overrides)?;
    if let Some(m) = common.m {
        cfg.m = m;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pick<'a>(flag: &'a Option<PathBuf>, configured: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    match flag {
        Some(p) => Ok(p),
        None => require(configured, key),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let p = &cfg.paths;
    with_threads(cfg.threads, || match &cli.command {
        Command::Sample { mask, out } => {
            let s = stages::cmd_sample(pick(mask, &p.ref_mask, "ref_mask")?, out, &cfg)?;
            log::info!(
                "{} keypoints ({} contour, {} interior), interior spacing {:.2}",
                s.keypoints.len(),
                s.keypoints.contour_count,
                s.keypoints.interior_count(),
                s.interior_min_distance
            );
            Ok(())
        }
        Command::Match { ref_sd, tar_sd, ref_dino, tar_dino, ref_mask, tar_mask, keypoints, out } => {
            let files = MatchFiles {
                ref_sd: if ref_sd.is_empty() { &p.ref_sd } else { ref_sd },
                tar_sd: if tar_sd.is_empty() { &p.tar_sd } else { tar_sd },
                ref_dino: pick(ref_dino, &p.ref_dino, "ref_dino")?,
                tar_dino: pick(tar_dino, &p.tar_dino, "tar_dino")?,
                ref_mask: pick(ref_mask, &p.ref_mask, "ref_mask")?,
                tar_mask: pick(tar_mask, &p.tar_mask, "tar_mask")?,
                keypoints,
            };
            stages::cmd_match(&files, out, &cfg).map(drop)
        }
        Command::Track { frames, keypoints, tracks, out } => {
            let external = tracks.as_deref().or(p.tracks.as_deref());
            stages::cmd_track(pick(frames, &p.ref_frames, "ref_frames")?, keypoints, external, out, &cfg).map(drop)
        }
        Command::Retarget { ref_tracks, matched, out } => stages::cmd_retarget(ref_tracks, matched, out).map(drop),
        Command::Warp { frames, ref_tracks, tar_tracks, ref_mask, out } => {
            let frames = pick(frames, &p.ref_frames, "ref_frames")?;
            let mask = ref_mask.as_deref().or(p.ref_mask.as_deref());
            stages::cmd_warp(frames, ref_tracks, tar_tracks, mask, out, &cfg).map(drop)
        }
        Command::GuidancePack { queries, keys, frames, out } => {
            let source = match (queries, keys) {
                (Some(q), Some(k)) => GuidanceSource::QueryKey { queries: q, keys: k },
                _ => GuidanceSource::Frames(pick(frames, &p.ref_frames, "frames")?),
            };
            let (_, mask) = stages::cmd_guidance_pack(source, out, &cfg)?;
            log::info!("mask holds {} ones", mask.ones());
            Ok(())
        }
        Command::Run => {
            let report = run::run(&cfg)?;
            println!("{}", report.manifest.display());
            Ok(())
        }
        Command::Fixture { out } => {
            let paths = fixture::write_fixture(out)?;
            println!("{}", paths.config.display());
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

