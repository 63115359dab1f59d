//! End-to-end run: stage caching and the run manifest.
//!
//! Artifacts land under `out_dir`. Each stage records a key in `cache/<stage>.key` built
//! from the configuration, the input hashes and every artifact produced before it, followed
//! by the hashes of its own outputs. A stage whose key and outputs are unchanged is skipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::{require, PipelineConfig};
use crate::error::{Error, Result};
use crate::stages::{self, GuidanceSource, MatchFiles};
use crate::tensorio;

pub const MANIFEST: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Files under `root/rel` (a file or a directory), as sorted relative paths with `/`.
fn list_files(root: &Path, rel: &str) -> Result<Vec<String>> {
    let path = root.join(rel);
    if path.is_file() {
        return Ok(vec![rel.to_string()]);
    }
    let mut out = Vec::new();
    if path.is_dir() {
        for entry in fs::read_dir(&path).map_err(|e| Error::io(&path, e))? {
            let name = entry.map_err(|e| Error::io(&path, e))?.file_name();
            out.extend(list_files(root, &format!("{rel}/{}", name.to_string_lossy()))?);
        }
    }
    out.sort();
    Ok(out)
}

/// Hash of a frames directory: one `name hash` line per numbered frame.
fn hash_frames_dir(dir: &Path) -> Result<String> {
    tensorio::read_frames_ppm(dir)?;
    let mut names: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    names.sort();
    let mut text = String::new();
    for p in names {
        text.push_str(&format!("{} {}\n", p.file_name().unwrap().to_string_lossy(), hash_file(&p)?));
    }
    Ok(sha256_hex(text.as_bytes()))
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub manifest: PathBuf,
    /// Artifact hashes by path relative to `out_dir`.
    pub artifacts: BTreeMap<String, String>,
    pub reused: Vec<String>,
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    out: &'a Path,
    inputs: BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
    reused: Vec<String>,
}

impl Runner<'_> {
    fn key(&self, stage: &str) -> String {
        let mut text = format!("stage {stage}\n{}", self.cfg.to_text());
        for (k, v) in self.inputs.iter().chain(&self.artifacts) {
            text.push_str(&format!("{k} {v}\n"));
        }
        sha256_hex(text.as_bytes())
    }

    /// Runs `compute` unless the cache shows `outputs` are already current.
    fn stage(&mut self, name: &str, outputs: &[&str], compute: impl FnOnce() -> Result<()>) -> Result<()> {
        let key = self.key(name);
        let key_path = self.out.join("cache").join(format!("{name}.key"));
        if let Some(hashes) = self.cached(&key, &key_path)? {
            log::info!("{name}: reusing cached outputs");
            self.artifacts.extend(hashes);
            self.reused.push(name.to_string());
            return Ok(());
        }
        log::info!("{name}: running");
        for rel in outputs {
            let path = self.out.join(rel);
            if path.is_dir() {
                fs::remove_dir_all(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        compute()?;
        let mut record = format!("{key}\n");
        for rel in outputs {
            for file in list_files(self.out, rel)? {
                let h = hash_file(&self.out.join(&file))?;
                record.push_str(&format!("{h} {file}\n"));
                self.artifacts.insert(file, h);
            }
        }
        fs::create_dir_all(key_path.parent().unwrap()).map_err(|e| Error::io(&key_path, e))?;
        fs::write(&key_path, record).map_err(|e| Error::io(&key_path, e))
    }

    fn cached(&self, key: &str, key_path: &Path) -> Result<Option<Vec<(String, String)>>> {
        let Ok(text) = fs::read_to_string(key_path) else { return Ok(None) };
        let mut lines = text.lines();
        if lines.next() != Some(key) {
            return Ok(None);
        }
        let mut hashes = Vec::new();
        for line in lines {
            let Some((h, file)) = line.split_once(' ') else { return Ok(None) };
            let path = self.out.join(file);
            if !path.is_file() || hash_file(&path)? != h {
                return Ok(None);
            }
            hashes.push((file.to_string(), h.to_string()));
        }
        Ok((!hashes.is_empty()).then_some(hashes))
    }
}

/// Runs every stage in order and writes `manifest.txt`.
pub fn run(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let p = &cfg.paths;
    let out = cfg.out_dir()?;
    let frames = require(&p.ref_frames, "ref_frames")?;
    let ref_mask = require(&p.ref_mask, "ref_mask")?;
    let tar_mask = require(&p.tar_mask, "tar_mask")?;
    let ref_dino = require(&p.ref_dino, "ref_dino")?;
    let tar_dino = require(&p.tar_dino, "tar_dino")?;
    if p.ref_sd.is_empty() {
        return Err(Error::Config("ref_sd and tar_sd must list at least one layer".into()));
    }

    let mut inputs = BTreeMap::new();
    inputs.insert("ref_frames".to_string(), hash_frames_dir(frames)?);
    inputs.insert("ref_mask".to_string(), hash_file(ref_mask)?);
    inputs.insert("tar_mask".to_string(), hash_file(tar_mask)?);
    inputs.insert("ref_dino".to_string(), hash_file(ref_dino)?);
    inputs.insert("tar_dino".to_string(), hash_file(tar_dino)?);
    for (i, (a, b)) in p.ref_sd.iter().zip(&p.tar_sd).enumerate() {
        inputs.insert(format!("ref_sd.{i}"), hash_file(a)?);
        inputs.insert(format!("tar_sd.{i}"), hash_file(b)?);
    }
    for (role, path) in [("tracks", &p.tracks), ("attn_q", &p.attn_q), ("attn_k", &p.attn_k)] {
        if let Some(path) = path {
            inputs.insert(role.to_string(), hash_file(path)?);
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut r = Runner { cfg, out, inputs, artifacts: BTreeMap::new(), reused: Vec::new() };
    let at = |rel: &str| out.join(rel);

    r.stage("sample", &["keypoints.tracks"], || {
        stages::cmd_sample(ref_mask, &at("keypoints.tracks"), cfg).map(drop)
    })?;
    r.stage("match", &["matched.tracks"], || {
        let files = MatchFiles {
            ref_sd: &p.ref_sd,
            tar_sd: &p.tar_sd,
            ref_dino,
            tar_dino,
            ref_mask,
            tar_mask,
            keypoints: &at("keypoints.tracks"),
        };
        stages::cmd_match(&files, &at("matched.tracks"), cfg).map(drop)
    })?;
    r.stage("track", &["ref_tracks.tracks"], || {
        stages::cmd_track(frames, &at("keypoints.tracks"), p.tracks.as_deref(), &at("ref_tracks.tracks"), cfg).map(drop)
    })?;
    r.stage("retarget", &["tar_tracks.tracks"], || {
        stages::cmd_retarget(&at("ref_tracks.tracks"), &at("matched.tracks"), &at("tar_tracks.tracks")).map(drop)
    })?;
    r.stage("warp", &["warped"], || {
        stages::cmd_warp(frames, &at("ref_tracks.tracks"), &at("tar_tracks.tracks"), Some(ref_mask), &at("warped"), cfg)
            .map(drop)
    })?;
    r.stage("guidance", &["guidance"], || {
        let source = match (&p.attn_q, &p.attn_k) {
            (Some(q), Some(k)) => GuidanceSource::QueryKey { queries: q, keys: k },
            _ => GuidanceSource::Frames(&at("warped")),
        };
        stages::cmd_guidance_pack(source, &at("guidance"), cfg).map(drop)
    })?;
    r.stage("diagnostics", &["diagnostics"], || {
        let reference = tensorio::read_frames_ppm(frames)?;
        let ref_tracks = tensorio::read_tracks(at("ref_tracks.tracks"))?;
        tensorio::write_frames_ppm(&stages::overlay(&reference, &ref_tracks)?, at("diagnostics/ref_overlay"))?;
        let warped = tensorio::read_frames_ppm(at("warped"))?;
        let tar_tracks = tensorio::read_tracks(at("tar_tracks.tracks"))?;
        tensorio::write_frames_ppm(&stages::overlay(&warped, &tar_tracks)?, at("diagnostics/warp_overlay"))
    })?;

    let manifest = out.join(MANIFEST);
    fs::write(&manifest, manifest_text(cfg, &r.inputs, &r.artifacts)).map_err(|e| Error::io(&manifest, e))?;
    Ok(RunReport { manifest, artifacts: r.artifacts, reused: r.reused })
}

fn manifest_text(cfg: &PipelineConfig, inputs: &BTreeMap<String, String>, artifacts: &BTreeMap<String, String>) -> String {
    let mut s = String::from("# retarget run manifest\n");
    s.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
    s.push_str("\n[config]\n");
    s.push_str(&cfg.to_text());
    s.push_str("\n[inputs]\n");
    for (k, v) in inputs {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s.push_str("\n[artifacts]\n");
    for (k, v) in artifacts {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}

/// Parses the `[artifacts]` section of a manifest.
pub fn manifest_artifacts(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .skip_while(|l| *l != "[artifacts]")
        .skip(1)
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
