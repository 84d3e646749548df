use super::*;
use crate::geometry::{pose_error, random_unit_vector};
use nalgebra::UnitQuaternion;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn k() -> CameraIntrinsics {
    CameraIntrinsics::new(400.0, 400.0, 319.5, 239.5, 640, 480).unwrap()
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = random_unit_vector(rng);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    Pose::new(
        UnitQuaternion::from_scaled_axis(axis * angle),
        Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
    )
}

/// Points in front of `pose` at the given depth range, projected exactly.
fn synthetic(pose: &Pose, n: usize, depth: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<Correspondence> {
    let k = k();
    (0..n)
        .map(|_| {
            let px = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let z = rng.random_range(depth.0..depth.1);
            let pc = Vector3::new((px.x - k.cx) / k.fx * z, (px.y - k.cy) / k.fy * z, z);
            Correspondence {
                pixel: px,
                point: pose.transform_point(&pc),
            }
        })
        .collect()
}

#[test]
fn epnp_recovers_twelve_point_pose() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth = random_pose(&mut rng);
    let data = synthetic(&truth, 12, (1.0, 6.0), &mut rng);
    let est = epnp(&data, &k()).unwrap();
    let e = pose_error(&est, &truth);
    assert!(e.translation_error <= 1e-4 && e.rotation_error <= 1e-3, "{e:?}");
}

#[test]
fn epnp_is_exact_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let truth = random_pose(&mut rng);
        let n = rng.random_range(10..=50);
        let data = synthetic(&truth, n, (0.5, 10.0), &mut rng);
        let e = pose_error(&epnp(&data, &k()).unwrap(), &truth);
        worst.0 = worst.0.max(e.translation_error);
        worst.1 = worst.1.max(e.rotation_error);
    }
    assert!(worst.0 <= 1e-4 && worst.1 <= 1e-3, "{worst:?}");
}

#[test]
fn epnp_handles_planar_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let truth = Pose::look_at(
            Vector3::new(rng.random_range(-1.0..1.0), -3.0, rng.random_range(1.0..2.0)),
            Vector3::new(0.0, 0.0, 1.5),
            Vector3::z(),
        );
        let k = k();
        let data: Vec<Correspondence> = (0..30)
            .filter_map(|_| {
                let p = Vector3::new(rng.random_range(-2.0..2.0), -0.2, rng.random_range(0.0..3.0));
                let (px, _) = crate::geometry::project(&truth, &k, &p).ok()?;
                Some(Correspondence { pixel: px, point: p })
            })
            .collect();
        let e = pose_error(&epnp(&data, &k).unwrap(), &truth);
        assert!(e.translation_error <= 1e-4 && e.rotation_error <= 1e-3, "{e:?}");
    }
}

#[test]
fn epnp_rejects_bad_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth = random_pose(&mut rng);
    let data = synthetic(&truth, 3, (1.0, 2.0), &mut rng);
    assert!(matches!(epnp(&data, &k()), Err(PnpError::TooFewPoints { got: 3, .. })));

    let same: Vec<Correspondence> = (0..6)
        .map(|i| Correspondence {
            pixel: Vector2::new(i as f64, 0.0),
            point: Vector3::new(1.0, 2.0, 3.0),
        })
        .collect();
    assert!(matches!(epnp(&same, &k()), Err(PnpError::DegenerateConfiguration(_))));

    let line: Vec<Correspondence> = (0..6)
        .map(|i| Correspondence {
            pixel: Vector2::new(i as f64, 0.0),
            point: Vector3::new(i as f64, 2.0 * i as f64, 3.0),
        })
        .collect();
    assert!(matches!(epnp(&line, &k()), Err(PnpError::DegenerateConfiguration(_))));
}

#[test]
fn sampling_weight_examples() {
    let w = compute_sampling_weights(&[0.3; 7], 5.0, 0.01, (5.0, 95.0)).unwrap();
    assert!(w.s.iter().all(|s| *s == 1.01));

    let u: Vec<f64> = (0..=100).map(|i| i as f64).collect();
    let w = compute_sampling_weights(&u, 5.0, 0.01, (5.0, 95.0)).unwrap();
    assert_eq!(w.normalized[100], 1.0);
    assert!((w.s[100] - ((-5.0f64).exp() + 0.01)).abs() < 1e-15);
    assert!((w.s[100] - 0.01674).abs() < 1e-5);
    // below p5 clips to ū = 0
    assert_eq!(w.s[0], 1.01);
    assert_eq!(w.s[5], 1.01);
    for i in 5..95 {
        assert!(w.s[i + 1] < w.s[i]);
    }
    assert!(matches!(compute_sampling_weights(&[], 5.0, 0.01, (5.0, 95.0)), Err(PnpError::EmptyInput)));
}

#[test]
fn percentile_interpolates_linearly() {
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert_eq!(percentile(&v, 0.0), 1.0);
    assert_eq!(percentile(&v, 100.0), 5.0);
    assert_eq!(percentile(&v, 50.0), 3.0);
    assert!((percentile(&v, 5.0) - 1.2).abs() < 1e-15);
    assert!((percentile(&v, 95.0) - 4.8).abs() < 1e-15);
}

#[test]
fn ransac_all_inliers_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = random_pose(&mut rng);
    let data = synthetic(&truth, 60, (1.0, 5.0), &mut rng);
    let unc: Vec<f64> = (0..60).map(|i| (i % 9) as f64).collect();
    let w = RansacConfig::indoor().weights_for(&unc).unwrap();
    for weights in [None, Some(&w)] {
        let r = ransac_pnp(&data, &k(), weights, &RansacConfig::indoor(), &mut rng).unwrap();
        let e = pose_error(&r.pose, &truth);
        assert!(e.translation_error <= 1e-4 && e.rotation_error <= 1e-3);
        assert!(r.inlier_mask.iter().all(|m| *m));
    }
}

#[test]
fn zero_iterations_find_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let truth = random_pose(&mut rng);
    let data = synthetic(&truth, 20, (1.0, 5.0), &mut rng);
    let cfg = RansacConfig {
        max_iterations: 0,
        ..RansacConfig::indoor()
    };
    assert_eq!(ransac_pnp(&data, &k(), None, &cfg, &mut rng), Err(PnpError::NoHypothesisFound));
    let cfg = RansacConfig::indoor();
    assert!(matches!(
        ransac_pnp(&data[..5], &k(), None, &cfg, &mut rng),
        Err(PnpError::TooFewPoints { got: 5, needed: 6 })
    ));
}

/// Noisy inliers plus gross outliers with high uncertainty.
fn contaminated(seed: u64) -> (Pose, Vec<Correspondence>, Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = random_pose(&mut rng);
    let mut data = synthetic(&truth, 100, (1.0, 5.0), &mut rng);
    let mut unc = Vec::new();
    let mut outlier = Vec::new();
    for (i, c) in data.iter_mut().enumerate() {
        let is_out = i % 10 < 3;
        if is_out {
            c.point += random_unit_vector(&mut rng) * rng.random_range(0.3..1.0);
            unc.push(rng.random_range(0.9..1.0));
        } else {
            c.pixel += Vector2::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
            unc.push(rng.random_range(0.0..0.1));
        }
        outlier.push(is_out);
    }
    (truth, data, unc, outlier)
}

#[test]
fn weighted_ransac_rejects_uncertain_outliers() {
    let cfg = RansacConfig::indoor();
    let mut excluded = 0.0;
    for seed in 0..20 {
        let (truth, data, unc, outlier) = contaminated(seed);
        let w = cfg.weights_for(&unc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = ransac_pnp(&data, &k(), Some(&w), &cfg, &mut rng).unwrap();
        let kept = outlier.iter().zip(&r.inlier_mask).filter(|(o, m)| **o && **m).count();
        excluded += 1.0 - kept as f64 / 30.0;
        assert!(pose_error(&r.pose, &truth).translation_error < 0.05);
    }
    assert!(excluded / 20.0 >= 0.95);
}

#[test]
fn result_mask_matches_recomputed_consensus() {
    let cfg = RansacConfig::indoor();
    for seed in 0..10 {
        let (_, data, unc, _) = contaminated(100 + seed);
        let w = cfg.weights_for(&unc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = ransac_pnp(&data, &k(), Some(&w), &cfg, &mut rng).unwrap();
        for (i, c) in data.iter().enumerate() {
            let inside = reprojection_error(&r.pose, &k(), c).is_some_and(|e| e <= cfg.reproj_threshold_px);
            assert_eq!(inside, r.inlier_mask[i]);
        }
        let sum: f64 = w.s.iter().zip(&r.inlier_mask).filter(|(_, m)| **m).map(|(s, _)| *s).sum();
        assert_eq!(sum, r.weighted_consensus);
    }
}

#[test]
fn uniform_weights_sample_like_unweighted() {
    let cfg = RansacConfig::indoor();
    for seed in 0..5 {
        let (_, data, _, _) = contaminated(200 + seed);
        let w = cfg.weights_for(&vec![0.4; data.len()]).unwrap();
        let a = ransac_pnp(&data, &k(), Some(&w), &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = ransac_pnp(&data, &k(), None, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(a.iterations_used, b.iterations_used);
        assert_eq!(a.inlier_mask, b.inlier_mask);
        let e = pose_error(&a.pose, &b.pose);
        assert!(e.translation_error < 1e-9 && e.rotation_error < 1e-7);
    }
}

#[test]
fn weight_scale_leaves_result_unchanged() {
    let cfg = RansacConfig::indoor();
    for seed in 0..5 {
        let (_, data, unc, _) = contaminated(300 + seed);
        let w = cfg.weights_for(&unc).unwrap();
        let base = ransac_pnp(&data, &k(), Some(&w), &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for c in [0.25, 4.0, 3.7] {
            let r = ransac_pnp(&data, &k(), Some(&w.scaled(c)), &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(r.inlier_mask, base.inlier_mask);
            let e = pose_error(&r.pose, &base.pose);
            assert!(e.translation_error < 1e-9 && e.rotation_error < 1e-7);
        }
    }
}
