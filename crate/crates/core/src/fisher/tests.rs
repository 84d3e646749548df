use super::*;
use crate::render::{layout_splats, render, TRANSMITTANCE_CUTOFF};
use crate::testutil::{point_scene, random_small_scene};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_k() -> CameraIntrinsics {
    CameraIntrinsics::new(30.0, 30.0, 11.5, 8.5, 24, 18).unwrap()
}

/// Splats contributing to a pixel, with their clamp flags, in compositing
/// order. Finite differences are only meaningful when this does not change.
fn fragment_signature(scene: &GaussianScene, pose: &Pose, k: &CameraIntrinsics, col: usize, row: usize) -> Vec<(usize, bool)> {
    let layout = layout_splats(scene, pose, k);
    let mut out = Vec::new();
    let mut t = 1.0;
    for &s in &layout.row_lists[row] {
        let sp = &layout.splats[s as usize];
        if col < sp.cols.0 || col > sp.cols.1 {
            continue;
        }
        if let Some((a, clamped, _, _)) = sp.alpha(col, row) {
            out.push((sp.index, clamped));
            t *= 1.0 - a;
            if t < TRANSMITTANCE_CUTOFF {
                break;
            }
        }
    }
    out
}

fn finite_difference(
    scene: &GaussianScene,
    pose: &Pose,
    k: &CameraIntrinsics,
    param: usize,
    h: f64,
    col: usize,
    row: usize,
) -> Option<[f64; 3]> {
    let base = parameter_vector(scene);
    let mut plus = base.clone();
    plus[param] += h;
    let mut minus = base;
    minus[param] -= h;
    let sp = apply_parameters(scene, &plus).unwrap();
    let sm = apply_parameters(scene, &minus).unwrap();
    let sig = fragment_signature(scene, pose, k, col, row);
    if fragment_signature(&sp, pose, k, col, row) != sig || fragment_signature(&sm, pose, k, col, row) != sig {
        return None;
    }
    let cp = render(&sp, pose, k, None).unwrap().color.at(col, row);
    let cm = render(&sm, pose, k, None).unwrap().color.at(col, row);
    Some([0, 1, 2].map(|c| (cp[c] - cm[c]) / (2.0 * h)))
}

#[test]
fn parameter_vector_round_trips() {
    let scene = random_small_scene(1, 4, 3, 2);
    let v = parameter_vector(&scene);
    assert_eq!(v.len(), ParameterLayout::of_scene(&scene).len());
    let back = apply_parameters(&scene, &v).unwrap();
    assert_eq!(back, scene);
    assert!(apply_parameters(&scene, &v[1..]).is_err());
}

#[test]
fn layout_indices_are_a_bijection() {
    let l = ParameterLayout {
        anchor_count: 3,
        feature_dim: 4,
        offset_count: 2,
    };
    let mut seen = vec![false; l.len()];
    for a in 0..3 {
        for f in 0..4 {
            assert!(!std::mem::replace(&mut seen[l.feature_index(a, f)], true));
        }
        for o in 0..2 {
            for c in 0..3 {
                assert!(!std::mem::replace(&mut seen[l.offset_index(a, o, c)], true));
            }
        }
    }
    assert!(seen.iter().all(|s| *s));
}

#[test]
fn analytic_jacobian_matches_finite_differences() {
    let h = 1e-5;
    let mut checked = 0;
    for seed in 0..4 {
        let scene = random_small_scene(seed, 6, 3, 2);
        let k = small_k();
        let pose = Pose::identity();
        let jac = render_jacobian(&scene, &pose, &k, &PixelSubset::Full);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = ParameterLayout::of_scene(&scene).len();
        let mut tries = 0;
        while checked < 60 * (seed + 1) && tries < 2000 {
            tries += 1;
            let col = rng.random_range(0..k.width);
            let row = rng.random_range(0..k.height);
            let param = rng.random_range(0..n);
            let Some(fd) = finite_difference(&scene, &pose, &k, param, h, col, row) else {
                continue;
            };
            let an = jac.get(col, row, param).unwrap_or([0.0; 3]);
            if fd.iter().all(|v| v.abs() < 1e-9) && an.iter().all(|v| v.abs() < 1e-9) {
                continue;
            }
            for c in 0..3 {
                let tol = 1e-4 * fd[c].abs().max(an[c].abs()) + 1e-6;
                assert!(
                    (fd[c] - an[c]).abs() <= tol,
                    "seed {seed} param {param} px ({col},{row}) ch {c}: analytic {} fd {}",
                    an[c],
                    fd[c]
                );
            }
            checked += 1;
        }
    }
    assert!(checked >= 200, "only {checked} probes were comparable");
}

#[test]
fn jacobian_under_rotated_camera_matches_finite_differences() {
    let scene = random_small_scene(9, 5, 2, 2);
    let k = small_k();
    let pose = Pose::look_at(Vector3::new(0.6, -0.3, 0.2), Vector3::new(0.0, 0.0, 2.2), Vector3::new(0.0, -1.0, 0.0));
    let jac = render_jacobian(&scene, &pose, &k, &PixelSubset::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = ParameterLayout::of_scene(&scene).len();
    let mut checked = 0;
    for _ in 0..800 {
        let (col, row, param) = (rng.random_range(0..k.width), rng.random_range(0..k.height), rng.random_range(0..n));
        let Some(fd) = finite_difference(&scene, &pose, &k, param, 1e-5, col, row) else {
            continue;
        };
        let an = jac.get(col, row, param).unwrap_or([0.0; 3]);
        for c in 0..3 {
            assert!((fd[c] - an[c]).abs() <= 1e-4 * fd[c].abs().max(an[c].abs()) + 1e-6);
        }
        if fd.iter().any(|v| v.abs() > 1e-6) {
            checked += 1;
        }
    }
    assert!(checked > 30);
}

#[test]
fn fisher_diag_equals_dense_column_sums() {
    let scene = random_small_scene(2, 5, 3, 2);
    let k = small_k();
    let lambda = 1e-3;
    let jac = render_jacobian(&scene, &Pose::identity(), &k, &PixelSubset::Full);
    let dense = jac.to_dense();
    let n = jac.layout.len();
    let fisher = fisher_diag(&scene, &Pose::identity(), &k, lambda, &PixelSubset::Full);
    for p in 0..n {
        let expected: f64 = dense.iter().map(|row| row[p] * row[p]).sum::<f64>() + lambda;
        assert!((fisher.diag[p] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        assert!(fisher.diag[p] >= lambda);
    }
}

#[test]
fn strided_subset_is_a_subset_of_full() {
    let scene = random_small_scene(3, 5, 2, 2);
    let k = small_k();
    let full = fisher_diag(&scene, &Pose::identity(), &k, 0.0, &PixelSubset::Full);
    let strided = fisher_diag(&scene, &Pose::identity(), &k, 0.0, &PixelSubset::Stride(2));
    let pixels: Vec<(usize, usize)> = (0..k.height)
        .step_by(2)
        .flat_map(|r| (0..k.width).step_by(2).map(move |c| (c, r)))
        .collect();
    let explicit = fisher_diag(&scene, &Pose::identity(), &k, 0.0, &PixelSubset::Pixels(pixels));
    for i in 0..full.diag.len() {
        assert!(strided.diag[i] <= full.diag[i] + 1e-15);
        assert!((strided.diag[i] - explicit.diag[i]).abs() <= 1e-15 * strided.diag[i].max(1.0));
    }
}

#[test]
fn unseen_gaussians_carry_only_damping() {
    // both anchors sit behind the camera
    let scene = point_scene(&[Vector3::new(0.0, 0.0, -2.0), Vector3::new(0.5, 0.0, -3.0)], 0.8, 0.05);
    let k = small_k();
    let lambda = 1e-6;
    let views: Vec<DiagonalFisher> = (0..3)
        .map(|i| fisher_diag(&scene, &Pose::from_translation(Vector3::new(0.1 * i as f64, 0.0, 0.0)), &k, lambda, &PixelSubset::Full))
        .collect();
    let global = accumulate(&views).unwrap();
    assert_eq!(global.lambda, 3.0 * lambda);
    let traces = per_gaussian_trace(&global, &scene).unwrap();
    let block = (scene.feature_dim() + 3) as f64;
    for t in traces {
        assert!((t - global.lambda * block).abs() < 1e-18);
    }
}

#[test]
fn accumulate_is_entrywise_sum() {
    let a = DiagonalFisher { diag: vec![1.0, 2.0, 3.0], lambda: 0.1 };
    let b = DiagonalFisher { diag: vec![0.5, 0.0, 4.0], lambda: 0.2 };
    let g = accumulate(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(g.diag, vec![1.5, 2.0, 7.0]);
    assert!((g.lambda - 0.3).abs() < 1e-15);
    assert_eq!(g.view_count, 2);
    assert!(matches!(accumulate(&[]), Err(FisherError::EmptyViewList)));
    let c = DiagonalFisher { diag: vec![1.0], lambda: 0.0 };
    assert!(matches!(accumulate(&[a, c]), Err(FisherError::LengthMismatch(3, 1))));
}

#[test]
fn repeated_view_doubles_information() {
    let scene = random_small_scene(5, 4, 2, 2);
    let k = small_k();
    let v = fisher_diag(&scene, &Pose::identity(), &k, 1e-6, &PixelSubset::Full);
    let one = accumulate(std::slice::from_ref(&v)).unwrap();
    let two = accumulate(&[v.clone(), v]).unwrap();
    let t1 = per_gaussian_trace(&one, &scene).unwrap();
    let t2 = per_gaussian_trace(&two, &scene).unwrap();
    let var1 = per_gaussian_variance(&one, &scene).unwrap();
    let var2 = per_gaussian_variance(&two, &scene).unwrap();
    for i in 0..t1.len() {
        assert!((t2[i] - 2.0 * t1[i]).abs() <= 1e-12 * t1[i]);
        assert!((var2[i] - 0.5 * var1[i]).abs() <= 1e-12 * var1[i]);
    }
}

#[test]
fn trace_rejects_mismatched_scene() {
    let scene = random_small_scene(5, 4, 2, 2);
    let g = GlobalFisher { diag: vec![1.0; 5], lambda: 0.0, view_count: 1 };
    assert!(matches!(
        per_gaussian_trace(&g, &scene),
        Err(FisherError::IndexMapMismatch { got: 5, .. })
    ));
}

#[test]
fn cached_scores_match_fresh_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = crate::scene::SceneConfig {
        anchor_count: 60,
        training_view_count: 4,
        ..Default::default()
    };
    let scene = crate::scene::generate_synthetic_scene(&cfg, &mut rng).unwrap();
    let fc = FisherConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let fresh = gaussian_scores(&scene, &fc).unwrap();
    let first = cached_gaussian_scores(&scene, &fc, dir.path()).unwrap();
    assert!(cache_path(dir.path(), &scene, &fc).exists());
    let second = cached_gaussian_scores(&scene, &fc, dir.path()).unwrap();
    assert_eq!(fresh, first);
    assert_eq!(first, second);
    let other = FisherConfig { lambda: 1e-3, ..fc.clone() };
    assert_ne!(cache_key(&scene, &fc), cache_key(&scene, &other));
}
