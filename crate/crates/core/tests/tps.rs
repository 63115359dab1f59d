use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retarget_core::tps::{
    build_backward_field, tps_fit, tps_kernel, warp_frame, warp_sequence, TpsTransform, WarpField, WarpMode,
    WarpOptions,
};
use retarget_core::{Frame, FrameSequence, KeypointSequence, Point2, TrackPoint};

fn random_points(rng: &mut ChaCha8Rng, m: usize, extent: f64) -> Vec<Point2> {
    (0..m).map(|_| Point2::new(rng.random_range(0.0..extent), rng.random_range(0.0..extent))).collect()
}

/// Gaussian elimination with complete pivoting, written independently of the crate's solver.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (mut pr, mut pc, mut best) = (k, k, 0.0);
        for (r, row) in a.iter().enumerate().skip(k) {
            for (c, v) in row.iter().enumerate().skip(k) {
                if v.abs() > best {
                    (pr, pc, best) = (r, c, v.abs());
                }
            }
        }
        a.swap(k, pr);
        b.swap(k, pr);
        for row in a.iter_mut() {
            row.swap(k, pc);
        }
        perm.swap(k, pc);
        for r in k + 1..n {
            let f = a[r][k] / a[k][k];
            for c in k..n {
                a[r][c] -= f * a[k][c];
            }
            b[r] -= f * b[k];
        }
    }
    let mut y = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|c| a[k][c] * y[c]).sum();
        y[k] = (b[k] - s) / a[k][k];
    }
    let mut x = vec![0.0; n];
    for (k, &p) in perm.iter().enumerate() {
        x[p] = y[k];
    }
    x
}

/// Evaluates the interpolating spline at `q` by solving the bordered system from scratch.
fn oracle_eval(centers: &[Point2], targets: &[Point2], q: Point2) -> Point2 {
    let m = centers.len();
    let n = m + 3;
    let u = |r2: f64| if r2 == 0.0 { 0.0 } else { r2 * r2.ln() };
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..m {
        for j in 0..m {
            let (dx, dy) = (centers[i].x - centers[j].x, centers[i].y - centers[j].y);
            a[i][j] = u(dx * dx + dy * dy);
        }
        for (k, v) in [centers[i].x, centers[i].y, 1.0].into_iter().enumerate() {
            a[i][m + k] = v;
            a[m + k][i] = v;
        }
    }
    let mut out = [0.0; 2];
    for (d, o) in out.iter_mut().enumerate() {
        let mut b = vec![0.0; n];
        for i in 0..m {
            b[i] = if d == 0 { targets[i].x } else { targets[i].y };
        }
        let x = gauss_solve(a.clone(), b);
        *o = x[m] * q.x + x[m + 1] * q.y + x[m + 2];
        for i in 0..m {
            let (dx, dy) = (centers[i].x - q.x, centers[i].y - q.y);
            *o += x[i] * u(dx * dx + dy * dy);
        }
    }
    Point2::new(out[0], out[1])
}

#[test]
fn kernel_at_two() {
    // 4 ln 4 evaluated at high precision: 5.54517744447956247533...
    assert!((tps_kernel(2.0) - 5.545_177_444_479_562).abs() < 1e-13);
}

#[test]
fn unit_square_with_displaced_corner() {
    let centers = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0), Point2::new(0.0, 1.0)];
    let mut targets = centers;
    targets[2].x += 0.5;
    let spline = tps_fit(&centers, &targets, 0.0).unwrap();
    let q = Point2::new(0.5, 0.5);
    let got = spline.eval(q);
    let expect = oracle_eval(&centers, &targets, q);
    assert!(got.distance(expect) < 1e-9, "{got:?} vs {expect:?}");
    // By symmetry the center moves by a quarter of the corner displacement: (0.625, 0.5).
    assert!(got.distance(Point2::new(0.625, 0.5)) < 1e-9);
}

#[test]
fn random_splines_match_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let m = rng.random_range(3..25);
        let c = random_points(&mut rng, m, 200.0);
        let t: Vec<_> = c.iter().map(|p| *p + Point2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0))).collect();
        let spline = tps_fit(&c, &t, 0.0).unwrap();
        for _ in 0..5 {
            let q = Point2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
            assert!(spline.eval(q).distance(oracle_eval(&c, &t, q)) < 1e-6);
        }
    }
}

fn affine(p: Point2) -> Point2 {
    Point2::new(1.2 * p.x - 0.3 * p.y + 7.0, 0.4 * p.x + 0.9 * p.y - 3.0)
}

#[test]
fn affine_maps_are_reproduced_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let c = random_points(&mut rng, 20, 300.0);
    let t: Vec<_> = c.iter().map(|p| affine(*p)).collect();
    let spline = tps_fit(&c, &t, 0.0).unwrap();
    let scale = t.iter().map(|p| p.norm()).fold(0.0, f64::max);
    assert!(spline.weights.iter().all(|w| w[0].abs() <= 1e-8 * scale && w[1].abs() <= 1e-8 * scale));
    assert!(spline.bending_energy().abs() < 1e-12 * scale * scale);
    for _ in 0..1000 {
        let q = Point2::new(rng.random_range(-50.0..350.0), rng.random_range(-50.0..350.0));
        assert!(spline.eval(q).distance(affine(q)) < 1e-6);
    }
}

#[test]
fn reversed_summation_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let c = random_points(&mut rng, 40, 256.0);
    let t = random_points(&mut rng, 40, 256.0);
    let spline = tps_fit(&c, &t, 0.0).unwrap();
    for _ in 0..100 {
        let q = Point2::new(rng.random_range(0.0..256.0), rng.random_range(0.0..256.0));
        let a = &spline.affine;
        let mut x = 0.0;
        let mut y = 0.0;
        for i in (0..c.len()).rev() {
            let u = tps_kernel(c[i].distance(q));
            x += spline.weights[i][0] * u;
            y += spline.weights[i][1] * u;
        }
        x += a[0][0] * q.x + a[0][1] * q.y + a[0][2];
        y += a[1][0] * q.x + a[1][1] * q.y + a[1][2];
        let got = spline.eval(q);
        assert!((got.x - x).abs() < 1e-9 && (got.y - y).abs() < 1e-9);
    }
}

#[test]
fn identity_and_translation_fields() {
    let tar = [Point2::new(10.0, 10.0), Point2::new(40.0, 12.0), Point2::new(30.0, 40.0), Point2::new(12.0, 35.0)];
    let field = build_backward_field(&tar, &tar, 50, 50, 0.0).unwrap();
    for y in 0..50 {
        for x in 0..50 {
            assert!(field.at(x, y).distance(Point2::new(x as f64, y as f64)) < 1e-9);
        }
    }
    let shifted: Vec<_> = tar.iter().map(|p| *p + Point2::new(10.0, 0.0)).collect();
    let field = build_backward_field(&tar, &shifted, 50, 50, 0.0).unwrap();
    for y in 0..50 {
        for x in 0..50 {
            assert!(field.at(x, y).distance(Point2::new(x as f64 + 10.0, y as f64)) < 1e-9);
        }
    }
}

#[test]
fn square_to_trapezoid_corners() {
    let square = [Point2::new(10.0, 10.0), Point2::new(30.0, 10.0), Point2::new(30.0, 30.0), Point2::new(10.0, 30.0)];
    let trapezoid = [Point2::new(14.0, 10.0), Point2::new(26.0, 10.0), Point2::new(33.0, 30.0), Point2::new(7.0, 30.0)];
    let field = build_backward_field(&square, &trapezoid, 40, 40, 0.0).unwrap();
    for (s, t) in square.iter().zip(&trapezoid) {
        assert!(field.at(s.x as usize, s.y as usize).distance(*t) < 1e-6);
    }
}

#[test]
fn identity_field_copies_the_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let frame = Frame::new(9, 13, (0..9 * 13 * 3).map(|_| rng.random()).collect()).unwrap();
    let field = WarpField::from_fn(13, 9, |p| p);
    assert_eq!(warp_frame(&frame, &field, WarpMode::Full, None, [0; 3]).unwrap(), frame);
}

#[test]
fn single_pixel_moves_against_the_field() {
    let mut frame = Frame::filled(40, 40, [0, 0, 0]);
    frame.set_pixel(20, 20, [255, 255, 255]);
    let field = WarpField::from_fn(40, 40, |p| p + Point2::new(10.0, 0.0));
    let out = warp_frame(&frame, &field, WarpMode::Full, None, [0, 0, 0]).unwrap();
    for y in 0..40 {
        for x in 0..40 {
            let expect = if (x, y) == (10, 20) { [255; 3] } else { [0; 3] };
            assert_eq!(out.pixel(x, y), expect);
        }
    }
}

fn still_sequence(points: &[Point2], frames: usize) -> KeypointSequence {
    KeypointSequence::new(points.len(), vec![points.iter().copied().map(TrackPoint::visible).collect(); frames]).unwrap()
}

fn disk_frame(size: usize, center: Point2, radius: f64) -> Frame {
    let mut f = Frame::filled(size, size, [0, 0, 0]);
    for y in 0..size {
        for x in 0..size {
            if Point2::new(x as f64, y as f64).distance(center) <= radius {
                f.set_pixel(x, y, [230, 180, 90]);
            }
        }
    }
    f
}

#[test]
fn identical_tracks_return_the_input() {
    let frames = FrameSequence::new((0..3).map(|t| disk_frame(48, Point2::new(20.0 + t as f64, 24.0), 9.0)).collect()).unwrap();
    let pts = [Point2::new(10.0, 10.0), Point2::new(38.0, 12.0), Point2::new(30.0, 40.0), Point2::new(8.0, 33.0)];
    let seq = still_sequence(&pts, 3);
    let out = warp_sequence(&frames, &seq, &seq, &WarpOptions::default()).unwrap();
    assert_eq!(out, frames);
}

#[test]
fn scaled_keypoints_scale_disk_area() {
    let center = Point2::new(48.0, 48.0);
    let frames = FrameSequence::new(vec![disk_frame(96, center, 14.0); 2]).unwrap();
    let ring: Vec<Point2> = (0..16).map(|k| center + Point2::from_polar(14.0, std::f64::consts::TAU * k as f64 / 16.0)).collect();
    let mut reference = ring.clone();
    reference.push(center);
    for scale in [0.7, 1.5, 2.0] {
        let target: Vec<_> = reference.iter().map(|p| center + (*p - center) * scale).collect();
        let out = warp_sequence(&frames, &still_sequence(&reference, 2), &still_sequence(&target, 2), &WarpOptions::default()).unwrap();
        let lit = |f: &Frame| (0..96 * 96).filter(|&i| f.pixel(i % 96, i / 96)[0] > 100).count() as f64;
        let ratio = lit(out.get(1)) / lit(frames.get(1));
        assert!((ratio / (scale * scale) - 1.0).abs() < 0.10, "scale {scale}: ratio {ratio}");
    }
}

#[test]
fn too_few_shared_points_is_an_error() {
    let frames = FrameSequence::new(vec![Frame::filled(20, 20, [1, 1, 1])]).unwrap();
    let pts = [Point2::new(1.0, 1.0), Point2::new(10.0, 2.0), Point2::new(5.0, 9.0)];
    let seq = still_sequence(&pts, 1);
    let mut hidden = seq.frames()[0].clone();
    hidden[1].visible = false;
    let partial = KeypointSequence::new(3, vec![hidden]).unwrap();
    assert!(warp_sequence(&frames, &seq, &partial, &WarpOptions::default()).is_err());
}

fn side_conditions(t: &TpsTransform) -> (f64, f64) {
    let scale = t.weights.iter().map(|w| w[0].abs().max(w[1].abs())).fold(1e-6, f64::max);
    let mut worst_sum = 0.0f64;
    let mut worst_moment = 0.0f64;
    for d in 0..2 {
        let s: f64 = t.weights.iter().map(|w| w[d]).sum();
        let mx: f64 = t.weights.iter().zip(&t.centers).map(|(w, c)| w[d] * c.x).sum();
        let my: f64 = t.weights.iter().zip(&t.centers).map(|(w, c)| w[d] * c.y).sum();
        let extent = t.centers.iter().map(|c| c.norm()).fold(1.0, f64::max);
        worst_sum = worst_sum.max(s.abs() / (scale * t.weights.len() as f64));
        worst_moment = worst_moment.max(mx.abs().max(my.abs()) / (scale * extent * t.weights.len() as f64));
    }
    (worst_sum, worst_moment)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolation_and_side_conditions(seed in any::<u64>(), m in 3usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_points(&mut rng, m, 256.0);
        let t = random_points(&mut rng, m, 256.0);
        let spline = tps_fit(&c, &t, 0.0).unwrap();
        for (ci, ti) in c.iter().zip(&t) {
            prop_assert!(spline.eval(*ci).distance(*ti) <= 1e-6);
        }
        let (s, mo) = side_conditions(&spline);
        prop_assert!(s <= 1e-8 && mo <= 1e-8, "side conditions {} {}", s, mo);
    }

    #[test]
    fn smoothing_never_adds_bending(seed in any::<u64>(), m in 4usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_points(&mut rng, m, 100.0);
        let t = random_points(&mut rng, m, 100.0);
        let mut last = f64::INFINITY;
        for lambda in [0.0, 1e-3, 1e-1, 1.0, 10.0, 1e3] {
            let e = tps_fit(&c, &t, lambda).unwrap().bending_energy();
            prop_assert!(e <= last * (1.0 + 1e-9) + 1e-12, "lambda {}: {} > {}", lambda, e, last);
            last = e;
        }
    }
}
