use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use retarget::run::{manifest_artifacts, run};
use retarget::{fixture, PipelineConfig};

fn retarget(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retarget")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = retarget(&["fixture", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn run_twice_gives_identical_manifests() {
    let dir = fixture_dir();
    let config = dir.path().join("config.txt");
    let a = retarget(&["run", "--config", s(&config)]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let first = fs::read_to_string(dir.path().join("out/manifest.txt")).unwrap();
    fs::remove_dir_all(dir.path().join("out")).unwrap();
    let b = retarget(&["run", "--config", s(&config)]);
    assert!(b.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("out/manifest.txt")).unwrap(), first);
    let artifacts = manifest_artifacts(&first);
    for name in ["keypoints.tracks", "matched.tracks", "ref_tracks.tracks", "tar_tracks.tracks", "warped/0015.ppm",
        "guidance/attn_ref.fgr4", "guidance/attn_mask.fgr4", "diagnostics/ref_overlay/0000.ppm",
        "diagnostics/warp_overlay/0015.ppm"]
    {
        assert!(artifacts.contains_key(name), "{name} missing from manifest");
    }
}

#[test]
fn thread_count_does_not_change_artifacts() {
    let dir = fixture_dir();
    let config = dir.path().join("config.txt");
    let mut manifests = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("out{threads}"));
        let r = retarget(&["run", "--config", s(&config), "--threads", threads, "--set", &format!("out_dir={}", s(&out))]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        manifests.push(fs::read_to_string(out.join("manifest.txt")).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn stages_are_cached_and_invalidated() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture::write_fixture(dir.path()).unwrap();
    let mut cfg = PipelineConfig::from_file(&fx.config).unwrap();
    let first = run(&cfg).unwrap();
    assert!(first.reused.is_empty());
    let second = run(&cfg).unwrap();
    assert_eq!(second.reused.len(), 7);
    assert_eq!(second.artifacts, first.artifacts);

    fs::write(dir.path().join("out/warped/0003.ppm"), b"tampered").unwrap();
    let third = run(&cfg).unwrap();
    assert_eq!(third.reused, ["sample", "match", "track", "retarget", "guidance", "diagnostics"]);
    assert_eq!(third.artifacts, first.artifacts);

    cfg.attn_scale = 2.0;
    let fourth = run(&cfg).unwrap();
    assert!(fourth.reused.is_empty());
    assert_ne!(fourth.artifacts["guidance/attn_ref.fgr4"], first.artifacts["guidance/attn_ref.fgr4"]);
    assert_eq!(fourth.artifacts["warped/0003.ppm"], first.artifacts["warped/0003.ppm"]);
}

#[test]
fn too_few_keypoints_fail_before_any_stage() {
    let dir = fixture_dir();
    let r = retarget(&["run", "--config", s(&dir.path().join("config.txt")), "--m", "2"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
    let r = retarget(&["run", "--config", s(&dir.path().join("config.txt")), "--set", "m=2"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn missing_mask_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let r = retarget(&["sample", "--mask", s(&dir.path().join("absent.pgm")), "--out", s(&dir.path().join("k.tracks"))]);
    assert_eq!(r.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&r.stderr).contains("absent.pgm"));
}

#[test]
fn bad_arguments_exit_with_validation_code() {
    assert_eq!(retarget(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(retarget(&["sample"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let r = retarget(&["sample", "--out", s(&dir.path().join("k.tracks"))]);
    assert_eq!(r.status.code(), Some(2), "ref_mask is unset");
}

#[test]
fn stage_commands_chain_to_the_run_artifacts() {
    let dir = fixture_dir();
    let d = dir.path();
    let config = d.join("config.txt");
    let cfg = ["--config", s(&config)];
    let step = |args: &[&str]| {
        let mut all = args.to_vec();
        all.extend_from_slice(&cfg);
        let r = retarget(&all);
        assert!(r.status.success(), "{args:?}: {}", String::from_utf8_lossy(&r.stderr));
    };
    let p = |n: &str| d.join("manual").join(n);
    fs::create_dir_all(d.join("manual")).unwrap();
    step(&["sample", "--out", s(&p("keypoints.tracks"))]);
    step(&["match", "--keypoints", s(&p("keypoints.tracks")), "--out", s(&p("matched.tracks"))]);
    step(&["track", "--keypoints", s(&p("keypoints.tracks")), "--out", s(&p("ref_tracks.tracks"))]);
    step(&["retarget", "--ref-tracks", s(&p("ref_tracks.tracks")), "--matched", s(&p("matched.tracks")), "--out", s(&p("tar_tracks.tracks"))]);
    step(&["warp", "--ref-tracks", s(&p("ref_tracks.tracks")), "--tar-tracks", s(&p("tar_tracks.tracks")), "--out", s(&p("warped"))]);
    step(&["guidance-pack", "--frames", s(&p("warped")), "--out", s(&p("guidance"))]);
    step(&["run"]);

    for name in ["keypoints.tracks", "matched.tracks", "ref_tracks.tracks", "tar_tracks.tracks", "warped/0007.ppm",
        "guidance/attn_ref.fgr4", "guidance/attn_mask.fgr4"]
    {
        assert_eq!(fs::read(p(name)).unwrap(), fs::read(d.join("out").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn sample_flag_sets_the_budget() {
    let dir = fixture_dir();
    let out = dir.path().join("k.tracks");
    let r = retarget(&["sample", "--config", s(&dir.path().join("config.txt")), "--m", "10", "--out", s(&out)]);
    assert!(r.status.success());
    assert!(fs::read_to_string(out).unwrap().starts_with("TRACKS 1 10\n"));
}

#[test]
fn collinear_tracks_exit_with_numerical_code() {
    let dir = fixture_dir();
    let d = dir.path();
    let line = "TRACKS 16 3\n".to_string() + &"10 10 1 20 20 1 30 30 1\n".repeat(16);
    fs::write(d.join("line.tracks"), line).unwrap();
    let r = retarget(&["warp", "--frames", s(&d.join("frames")), "--ref-tracks", s(&d.join("line.tracks")),
        "--tar-tracks", s(&d.join("line.tracks")), "--out", s(&d.join("w"))]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
}
