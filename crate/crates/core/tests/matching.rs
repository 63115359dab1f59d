use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retarget_core::matching::{
    fit_joint_pca, fuse_features, match_keypoints, pca_joint_reduce, upsample_bilinear, FusedFeatureGrid,
};
use retarget_core::{BinaryMask, FeatureGrid, Point2};

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureGrid {
    FeatureGrid::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0f32..1.0))
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut vals: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    vals.sort_by(|x, y| y.total_cmp(x));
    vals
}

fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let c = rows[0].len();
    let mean: Vec<f64> = (0..c).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    (0..c)
        .map(|i| (0..c).map(|j| rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1.0)).collect())
        .collect()
}

fn rows_of(grids: &[&FeatureGrid]) -> Vec<Vec<f64>> {
    grids
        .iter()
        .flat_map(|g| (0..g.pixel_count()).map(move |i| g.vector(i).iter().map(|&v| v as f64).collect()))
        .collect()
}

#[test]
fn identical_grids_reduce_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_grid(&mut rng, 5, 6, 8);
    let (a, b) = pca_joint_reduce(&g, &g, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.height(), a.width(), a.channels()), (5, 6, 3));
}

#[test]
fn rank_one_data_is_captured_by_one_component() {
    let dir = [0.5f32, -1.0, 2.0, 0.25];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut make = |h, w| {
        FeatureGrid::new(
            h,
            w,
            4,
            (0..h * w).flat_map(|_| {
                let s: f32 = rng.random_range(-3.0..3.0);
                dir.iter().map(move |d| 1.0 + s * d).collect::<Vec<_>>()
            })
            .collect(),
        )
        .unwrap()
    };
    let (a, b) = (make(4, 4), make(3, 5));
    let pca = fit_joint_pca(&a, &b, 1).unwrap();
    assert!((pca.variances[0] / pca.total_variance - 1.0).abs() < 1e-9);
    for g in [&a, &b] {
        for i in 0..g.pixel_count() {
            let rec = pca.reconstruct(&pca.project(g.vector(i)));
            for (r, &v) in rec.iter().zip(g.vector(i)) {
                assert!((r - v as f64).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn projected_covariance_is_diagonal_with_top_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, b) = (random_grid(&mut rng, 8, 8, 16), random_grid(&mut rng, 8, 8, 16));
    let oracle = jacobi_eigenvalues(covariance(&rows_of(&[&a, &b])));
    let (ra, rb) = pca_joint_reduce(&a, &b, 4).unwrap();
    let cov = covariance(&rows_of(&[&ra, &rb]));
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert!(cov[i][j].abs() < 1e-5, "off-diagonal {}", cov[i][j]);
            }
        }
        assert!((cov[i][i] - oracle[i]).abs() < 1e-5 * oracle[0], "{} vs {}", cov[i][i], oracle[i]);
        if i > 0 {
            assert!(cov[i][i] < cov[i - 1][i - 1]);
        }
    }
}

/// Orthogonal matrix from Gram-Schmidt on random columns.
fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    q
}

fn rotate_channels(g: &FeatureGrid, q: &[Vec<f64>]) -> FeatureGrid {
    let c = g.channels();
    FeatureGrid::new(
        g.height(),
        g.width(),
        c,
        (0..g.pixel_count())
            .flat_map(|i| {
                let v = g.vector(i);
                (0..c).map(move |r| q[r].iter().zip(v).map(|(a, &b)| a * b as f64).sum::<f64>() as f32)
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn projection_is_invariant_to_channel_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        // Anisotropic data so the leading eigenvalues are well separated.
        let scales: Vec<f32> = (0..10).map(|k| 1.0 + 0.6 * k as f32).collect();
        let mut make = |h, w| FeatureGrid::from_fn(h, w, 10, |_, _, c| rng.random_range(-1.0f32..1.0) * scales[c]);
        let (a, b) = (make(6, 7), make(5, 6));
        let q = random_orthogonal(&mut rng, 10);
        let (pa, pb) = pca_joint_reduce(&a, &b, 3).unwrap();
        let (qa, qb) = pca_joint_reduce(&rotate_channels(&a, &q), &rotate_channels(&b, &q), 3).unwrap();
        for (x, y) in pa.data().iter().chain(pb.data()).zip(qa.data().iter().chain(qb.data())) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }
}

#[test]
fn bilinear_matches_direct_formula() {
    let g = FeatureGrid::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let up = upsample_bilinear(&g, 4, 4).unwrap();
    // Source coordinate per output index with half-pixel centers: (i + 0.5) / 2 - 0.5, clamped.
    let src = |i: usize| ((i as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
    for y in 0..4 {
        for x in 0..4 {
            let (sx, sy) = (src(x), src(y));
            // f(x, y) = x + 2 y on the 2x2 grid, which bilinear interpolation reproduces.
            let expect = sx + 2.0 * sy;
            assert!((up.at(y, x)[0] as f64 - expect).abs() < 1e-6);
        }
    }
    assert_eq!(up.at(0, 0), &[0.0]);
    assert_eq!(up.at(3, 3), &[3.0]);
}

#[test]
fn fused_slices_are_unit_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sd = random_grid(&mut rng, 6, 6, 5);
    let dino = random_grid(&mut rng, 6, 6, 7);
    let fused = fuse_features(&sd, &dino).unwrap();
    for i in 0..36 {
        let v = fused.grid().vector(i);
        let n1 = v[..5].iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        let n2 = v[5..].iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n1 - 1.0).abs() < 1e-6 && (n2 - 1.0).abs() < 1e-6);
    }
    assert!(fuse_features(&sd, &random_grid(&mut rng, 5, 6, 2)).is_err());
}

/// Exhaustive argmin of the Euclidean distance over masked pixels, lowest index on ties.
fn brute_force_match(reference: &FusedFeatureGrid, target: &FusedFeatureGrid, kp: Point2, mask: &BinaryMask) -> usize {
    let (x, y) = (kp.x.round() as usize, kp.y.round() as usize);
    let q = reference.grid().at(y, x);
    let mut best = (usize::MAX, f64::INFINITY);
    for i in 0..target.grid().pixel_count() {
        if !mask.bits()[i] {
            continue;
        }
        let d = target.grid().vector(i).iter().zip(q).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>().sqrt();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[test]
fn identity_features_match_in_place() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = fuse_features(&random_grid(&mut rng, 9, 9, 4), &random_grid(&mut rng, 9, 9, 3)).unwrap();
    let mask = BinaryMask::from_fn(9, 9, |_, _| true);
    let kps = [Point2::new(2.0, 3.0), Point2::new(8.0, 0.0), Point2::new(4.2, 4.9)];
    let c = match_keypoints(&f, &f, &kps, &mask).unwrap();
    assert_eq!(c.target_points(), vec![Point2::new(2.0, 3.0), Point2::new(8.0, 0.0), Point2::new(4.0, 5.0)]);
    assert!(c.matches.iter().all(|m| m.similarity == 0.0));
}

#[test]
fn random_matches_equal_brute_force_and_survive_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let fr = fuse_features(&random_grid(&mut rng, 12, 12, 4), &random_grid(&mut rng, 12, 12, 3)).unwrap();
        let ft = fuse_features(&random_grid(&mut rng, 12, 12, 4), &random_grid(&mut rng, 12, 12, 3)).unwrap();
        let mask = BinaryMask::from_fn(12, 12, |x, y| (x + 2 * y) % 3 != 0);
        let kps: Vec<Point2> = (0..5).map(|_| Point2::new(rng.random_range(0.0..11.0), rng.random_range(0.0..11.0))).collect();
        let c = match_keypoints(&fr, &ft, &kps, &mask).unwrap();
        let scaled = match_keypoints(&fr.scaled(3.0), &ft.scaled(3.0), &kps, &mask).unwrap();
        for (j, kp) in kps.iter().enumerate() {
            assert_eq!(c.matches[j].pixel, brute_force_match(&fr, &ft, *kp, &mask));
            assert_eq!(c.matches[j].pixel, scaled.matches[j].pixel);
            assert!(mask.bits()[c.matches[j].pixel]);
            assert!(c.matches[j].similarity <= 0.0);
        }
    }
}
