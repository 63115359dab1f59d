use std::fs;

use proptest::prelude::*;
use retarget::core::{BinaryMask, FeatureGrid, Frame, FrameSequence, KeypointSequence, Point2, Tensor4, TrackPoint};
use retarget::tensorio::*;
use retarget::Error;

fn grid_2x2() -> FeatureGrid {
    FeatureGrid::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap()
}

fn format_message(e: Error) -> String {
    match e {
        Error::Format { msg, .. } => msg,
        other => panic!("expected a format error, got {other}"),
    }
}

#[test]
fn fgrid_round_trip_and_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.fgrid");
    write_fgrid(&grid_2x2(), &path).unwrap();
    assert_eq!(read_fgrid(&path).unwrap(), grid_2x2());
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"FGRD");
    assert_eq!(&bytes[4..16], &[2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
    assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
}

#[test]
fn fgrid_file_size() {
    let g = FeatureGrid::from_fn(3, 4, 8, |y, x, c| (y * 100 + x * 10 + c) as f32);
    assert_eq!(encode_fgrid(&g).len(), 4 + 12 + 4 * 3 * 4 * 8);
    assert_eq!(encode_fgrid(&g).len(), 400);
}

#[test]
fn fgrid_truncation_names_offset() {
    let mut bytes = encode_fgrid(&grid_2x2());
    bytes.truncate(4 + 12 + 15);
    let msg = decode_fgrid(&bytes).unwrap_err();
    assert!(msg.contains("truncated") && msg.contains("31"), "{msg}");
}

#[test]
fn fgrid_rejects_bad_magic_trailing_bytes_and_nan() {
    let good = encode_fgrid(&grid_2x2());
    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(decode_fgrid(&bad).unwrap_err().contains("offset 0"));
    let mut long = good.clone();
    long.push(0);
    assert!(decode_fgrid(&long).unwrap_err().contains("trailing"));
    let mut nan = good.clone();
    nan[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(decode_fgrid(&nan).unwrap_err().contains("offset 24"));
    assert!(decode_fgrid(b"FGRD\x01\x00").unwrap_err().contains("header"));
}

#[test]
fn fgrid_missing_file_is_an_io_error() {
    let e = read_fgrid("/nonexistent/x.fgrid").unwrap_err();
    assert!(matches!(e, Error::Io { .. }));
    assert_eq!(e.exit_code(), 4);
}

#[test]
fn fgr4_round_trip() {
    let t = Tensor4::from_fn([2, 3, 4, 4], |[a, b, c, d]| (a + 2 * b + 3 * c + 5 * d) as f32 * 0.125);
    let bytes = encode_fgr4(&t);
    assert_eq!(&bytes[..4], b"FGR4");
    assert_eq!(bytes.len(), 4 + 16 + 4 * 96);
    assert_eq!(decode_fgr4(&bytes).unwrap(), t);
    assert!(decode_fgrid(&bytes).is_err());
}

fn pgm(w: usize, h: usize, maxval: u32, payload: &[u8]) -> Vec<u8> {
    let mut b = format!("P5\n# comment\n{w} {h}\n{maxval}\n").into_bytes();
    b.extend_from_slice(payload);
    b
}

#[test]
fn pgm_threshold_and_counts() {
    let all = decode_mask_pgm(&pgm(3, 2, 255, &[255; 6])).unwrap();
    assert_eq!(all.count(), 6);
    let edge = decode_mask_pgm(&pgm(2, 1, 255, &[127, 128])).unwrap();
    assert!(!edge.get(0, 0) && edge.get(1, 0));
    let checker: Vec<u8> = (0..16).map(|i| if (i % 4 + i / 4) % 2 == 0 { 255 } else { 0 }).collect();
    assert_eq!(decode_mask_pgm(&pgm(4, 4, 255, &checker)).unwrap().count(), 8);
}

#[test]
fn pgm_rejects_other_formats() {
    assert!(decode_mask_pgm(&pgm(2, 1, 65535, &[0, 0, 0, 0])).unwrap_err().contains("maxval"));
    assert!(decode_mask_pgm(b"P2\n1 1\n255\n0").is_err());
    assert!(decode_mask_pgm(&pgm(2, 2, 255, &[0, 0, 0])).unwrap_err().contains("payload"));
}

#[test]
fn ppm_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let frames = FrameSequence::new(
        (0..16).map(|t| Frame::new(5, 7, (0..105).map(|i| ((i * 7 + t * 13) % 256) as u8).collect()).unwrap()).collect(),
    )
    .unwrap();
    write_frames_ppm(&frames, dir.path()).unwrap();
    assert!(dir.path().join("0015.ppm").exists());
    assert_eq!(read_frames_ppm(dir.path()).unwrap(), frames);

    let short = FrameSequence::new(frames.frames()[..3].to_vec()).unwrap();
    write_frames_ppm(&short, dir.path()).unwrap();
    assert_eq!(read_frames_ppm(dir.path()).unwrap().len(), 3);
}

#[test]
fn ppm_three_identical_frames() {
    let dir = tempfile::tempdir().unwrap();
    let f = Frame::filled(8, 8, [9, 8, 7]);
    for i in 0..3 {
        write_ppm(&f, dir.path().join(format!("{i:03}.ppm"))).unwrap();
    }
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    assert_eq!(read_frames_ppm(dir.path()).unwrap().len(), 3);
}

#[test]
fn ppm_gap_and_size_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let f = Frame::filled(8, 8, [1, 2, 3]);
    for name in ["000", "001", "003"] {
        write_ppm(&f, dir.path().join(format!("{name}.ppm"))).unwrap();
    }
    assert!(format_message(read_frames_ppm(dir.path()).unwrap_err()).contains("gap"));

    let dir = tempfile::tempdir().unwrap();
    write_ppm(&f, dir.path().join("0.ppm")).unwrap();
    write_ppm(&Frame::filled(8, 9, [0; 3]), dir.path().join("1.ppm")).unwrap();
    assert!(format_message(read_frames_ppm(dir.path()).unwrap_err()).contains("first frame"));

    let empty = tempfile::tempdir().unwrap();
    assert!(read_frames_ppm(empty.path()).is_err());
}

#[test]
fn tracks_spec_example() {
    let t = decode_tracks("TRACKS 1 2\n0 0 1 5 5 1\n").unwrap();
    assert_eq!((t.frame_count(), t.point_count()), (1, 2));
    assert_eq!(t.positions(0), vec![Point2::new(0.0, 0.0), Point2::new(5.0, 5.0)]);
    assert!(t.visibility(0).iter().all(|&v| v));
}

#[test]
fn tracks_errors_report_position() {
    let e = decode_tracks("TRACKS 1 3\n0 0 1 5 5 1\n").unwrap_err();
    assert!(e.contains("line 2") && e.contains("3 triples"), "{e}");
    let e = decode_tracks("TRACKS 1 2\n0 0 1 5 abc 1\n").unwrap_err();
    assert!(e.contains("line 2, column 9"), "{e}");
    let e = decode_tracks("TRACKS 1 1\n0 0 2\n").unwrap_err();
    assert!(e.contains("column 5"), "{e}");
    assert!(decode_tracks("TRACKS 2 1\n0 0 1\n").unwrap_err().contains("2 frames"));
    assert!(decode_tracks("TRACKS 1 1\n0 0 1\n1 1 1\n").is_err());
    assert!(decode_tracks("TRAKS 1 1\n0 0 1\n").is_err());
    assert!(decode_tracks("").is_err());
}

#[test]
fn tracks_bounds_check() {
    let t = decode_tracks("TRACKS 1 2\n0 0 1 12 3 0\n").unwrap();
    assert!(check_tracks_in_bounds(&t, 10, 10).is_ok());
    let t = decode_tracks("TRACKS 1 1\n12 3 1\n").unwrap();
    assert!(check_tracks_in_bounds(&t, 10, 10).is_err());
}

fn finite_f32() -> impl Strategy<Value = f32> {
    prop::num::f32::NORMAL | prop::num::f32::SUBNORMAL | prop::num::f32::ZERO
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fgrid_round_trips(h in 1usize..6, w in 1usize..6, c in 1usize..5, seed in prop::collection::vec(finite_f32(), 150)) {
        let g = FeatureGrid::from_fn(h, w, c, |y, x, k| seed[(y * w + x) * c + k]);
        let back = decode_fgrid(&encode_fgrid(&g)).unwrap();
        prop_assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), g.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn fgr4_rejects_every_truncation(cut in 0usize..52) {
        let t = Tensor4::from_fn([1, 2, 2, 2], |[_, b, c, d]| (b + c + d) as f32);
        let bytes = encode_fgr4(&t);
        prop_assert!(decode_fgr4(&bytes[..cut]).is_err());
    }

    #[test]
    fn mask_round_trips(h in 1usize..20, w in 1usize..20, bits in prop::collection::vec(any::<bool>(), 400)) {
        let m = BinaryMask::new(h, w, bits[..h * w].to_vec()).unwrap();
        prop_assert_eq!(decode_mask_pgm(&encode_mask_pgm(&m)).unwrap(), m);
    }

    #[test]
    fn frame_round_trips(h in 1usize..12, w in 1usize..12, data in prop::collection::vec(any::<u8>(), 432)) {
        let f = Frame::new(h, w, data[..h * w * 3].to_vec()).unwrap();
        prop_assert_eq!(decode_ppm(&encode_ppm(&f)).unwrap(), f);
    }

    #[test]
    fn tracks_round_trip(
        coords in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6, any::<bool>()), 12 * 30),
    ) {
        let rows: Vec<Vec<TrackPoint>> = coords
            .chunks(30)
            .map(|c| c.iter().map(|&(x, y, v)| TrackPoint { pos: Point2::new(x, y), visible: v }).collect())
            .collect();
        let t = KeypointSequence::new(30, rows).unwrap();
        prop_assert_eq!(decode_tracks(&encode_tracks(&t)).unwrap(), t);
    }
}
