use super::*;
use crate::geometry::random_unit_vector;
use crate::matcher::Match;
use crate::testutil::room;
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn query_k() -> CameraIntrinsics {
    CameraIntrinsics::from_fov(160, 120, 65.0).unwrap()
}

fn small_config(particles: usize, iterations: usize, seed: u64) -> RefineConfig {
    RefineConfig {
        particles,
        iterations,
        resolution_schedule: vec![96, 160],
        seed,
        ..Default::default()
    }
}

fn set_of(pairs: &[(f64, f64)]) -> CorrespondenceSet {
    let k = query_k();
    CorrespondenceSet {
        matches: pairs
            .iter()
            .map(|(s, u)| Match {
                q: Vector2::zeros(),
                r: Vector2::zeros(),
                confidence: *s,
                uncertainty: *u,
                lifted_point: None,
                is_outlier_truth: false,
            })
            .collect(),
        query_pose_truth: Pose::identity(),
        render_pose: Pose::identity(),
        intrinsics: k,
        query_intrinsics: k,
    }
}

fn sum_of(pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().map(|(s, u)| s * (1.0 - u)).sum()
}

#[test]
fn single_unperturbed_particle_sits_on_prior() {
    let prior = Pose::look_at(Vector3::new(1.0, 0.0, 1.0), Vector3::zeros(), Vector3::z());
    let cfg = RefineConfig {
        particles: 1,
        first_perturbation: Perturbation::NONE,
        ..Default::default()
    };
    let p = seed_particles(&PriorSource::SinglePose(prior), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(p.len(), 1);
    assert_eq!(p[0].pose, prior);
    assert_eq!(p[0].weight, 1.0);
}

#[test]
fn candidates_are_used_round_robin() {
    let cands: Vec<Pose> = (0..5).map(|i| Pose::from_translation(Vector3::new(i as f64 * 10.0, 0.0, 0.0))).collect();
    let cfg = RefineConfig {
        particles: 8,
        ..Default::default()
    };
    let p = seed_particles(&PriorSource::CandidateList(cands), &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut counts = [0; 5];
    for q in &p {
        counts[(q.pose.translation.x / 10.0).round() as usize] += 1;
        assert!((q.weight - 0.125).abs() < 1e-15);
    }
    assert_eq!(counts, [2, 2, 2, 1, 1]);

    let again = seed_particles(
        &PriorSource::CandidateList((0..5).map(|i| Pose::from_translation(Vector3::new(i as f64 * 10.0, 0.0, 0.0))).collect()),
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    assert_eq!(p, again);
    assert_eq!(
        seed_particles(&PriorSource::CandidateList(vec![]), &cfg, &mut ChaCha8Rng::seed_from_u64(1)),
        Err(RefineError::EmptyCandidateList)
    );
}

#[test]
fn importance_weight_examples() {
    assert_eq!(importance_weights(&[Some(3.0)]).unwrap(), vec![1.0]);
    assert_eq!(importance_weights(&[Some(0.7), Some(0.7)]).unwrap(), vec![0.5, 0.5]);
    assert_eq!(importance_weights(&[None, None]), Err(RefineError::AllParticlesFailed));
    assert_eq!(importance_weights(&[Some(0.0), None, Some(0.0)]).unwrap(), vec![0.5, 0.0, 0.5]);

    // A: one match (0.8, 0.25); B: one match (0.5, 0.5); C failed
    let a = sum_of(&[(0.8, 0.25)]);
    let b = sum_of(&[(0.5, 0.5)]);
    let w = importance_weights(&[Some(a), Some(b), None]).unwrap();
    assert!((w[0] - 12.0 / 17.0).abs() < 1e-12);
    assert!((w[1] - 5.0 / 17.0).abs() < 1e-12);
    assert!((w[0] - 0.705_882_352_941).abs() < 1e-12);
    assert!((w[1] - 0.294_117_647_059).abs() < 1e-12);
    assert_eq!(w[2], 0.0);
}

#[test]
fn pooled_scores_normalise_uncertainty_across_particles() {
    let a = set_of(&[(1.0, 0.0), (1.0, 10.0)]);
    let b = set_of(&[(0.5, 5.0)]);
    // clipping at the extremes leaves plain min-max over {0, 5, 10}
    let s = particle_scores(&[Some(&a), None, Some(&b)], (0.0, 100.0));
    assert_eq!(s[1], None);
    assert!((s[0].unwrap() - 1.0).abs() < 1e-15);
    assert!((s[2].unwrap() - 0.25).abs() < 1e-15);
    assert_eq!(particle_scores(&[None, None], (5.0, 95.0)), vec![None, None]);
}

#[test]
fn resampling_examples() {
    let p = |x: f64| Particle::fresh(Pose::from_translation(Vector3::new(x, 0.0, 0.0)), 0.0);
    let one = resample(&[p(1.0)], &[1.0], &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(one.len(), 1);
    assert_eq!(systematic_counts(&[1.0], 5, 0.3), vec![5]);

    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = [p(0.0), p(1.0), p(2.0), p(3.0), p(4.0), p(5.0), p(6.0), p(7.0)];
        let w = [0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let out = resample(&pair, &w, &mut rng);
        assert_eq!(out.len(), 8);
        let first = out.iter().filter(|q| q.pose.translation.x == 0.0).count();
        let second = out.iter().filter(|q| q.pose.translation.x == 1.0).count();
        assert_eq!((first, second), (4, 4));
        assert!(out.iter().all(|q| q.weight == 0.125 && q.status == ParticleStatus::Active));
    }
    assert_eq!(systematic_counts(&[0.0, 1.0, 0.0], 3, 0.999), vec![0, 3, 0]);
}

proptest! {
    #[test]
    fn importance_weights_sum_to_one(raw in prop::collection::vec(prop::option::weighted(0.8, 0.0f64..50.0), 1..20)) {
        prop_assume!(raw.iter().any(|s| s.is_some()));
        let w = importance_weights(&raw).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (wi, s) in w.iter().zip(&raw) {
            if s.is_none() {
                prop_assert_eq!(*wi, 0.0);
            }
        }
    }

    #[test]
    fn importance_weights_ignore_common_scale(raw in prop::collection::vec(0.01f64..5.0, 1..12), c in 0.01f64..100.0) {
        let a: Vec<Option<f64>> = raw.iter().map(|s| Some(*s)).collect();
        let b: Vec<Option<f64>> = raw.iter().map(|s| Some(s * c)).collect();
        let wa = importance_weights(&a).unwrap();
        let wb = importance_weights(&b).unwrap();
        for (x, y) in wa.iter().zip(&wb) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn systematic_counts_meet_quota(raw in prop::collection::vec(0.0f64..1.0, 1..15), m in 1usize..40, u in 0.0f64..1.0) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 1e-9);
        let counts = systematic_counts(&raw, m, u);
        prop_assert_eq!(counts.iter().sum::<usize>(), m);
        for (c, w) in counts.iter().zip(&raw) {
            let expect = m as f64 * w / total;
            prop_assert!((*c as f64) >= expect.floor() - 1e-9 && (*c as f64) <= expect.ceil() + 1e-9,
                "count {} for expected {}", c, expect);
            if *w == 0.0 {
                prop_assert_eq!(*c, 0);
            }
        }
    }

    #[test]
    fn best_particle_ignores_monotone_reweighting(raw in prop::collection::vec(0.0f64..1.0, 1..10)) {
        let make = |f: &dyn Fn(f64) -> f64| -> Vec<Particle> {
            raw.iter()
                .enumerate()
                .map(|(i, w)| Particle::fresh(Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0)), f(*w)))
                .collect()
        };
        let a = make(&|w| w);
        let b = make(&|w| (3.0 * w).exp() + 2.0);
        prop_assert_eq!(best_particle(&a).unwrap().pose, best_particle(&b).unwrap().pose);
    }
}

fn query_at(seed: u64) -> QueryObservation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = crate::scene::SceneConfig::default().layout.sample_view(&mut rng);
    QueryObservation::render(&room().scene, &truth, &query_k()).unwrap()
}

#[test]
fn local_refine_fixed_point_and_failure() {
    let f = room();
    let query = query_at(3);
    let matcher = MatcherConfig::noise_free();
    let ransac = RansacConfig::indoor();
    let ctx = LocalContext {
        scene: &f.scene,
        scores: &f.scores,
        query: &query,
        matcher: &matcher,
        ransac: &ransac,
        uncertainty_sampling: true,
    };
    let run = |pose: &Pose| {
        local_refine(&ctx, pose, &query_k(), &mut ChaCha8Rng::seed_from_u64(1), &mut ChaCha8Rng::seed_from_u64(2))
    };
    let a = run(&query.pose).unwrap();
    let e = pose_error(&a.result.pose, &query.pose);
    assert!(e.translation_error <= 1e-4 && e.rotation_error <= 1e-3, "{e:?}");
    assert_eq!(run(&query.pose).unwrap(), a);

    let away = Pose::look_at(Vector3::new(0.0, 0.0, 30.0), Vector3::new(0.0, 0.0, 40.0), Vector3::y());
    assert!(matches!(
        run(&away),
        Err(LocalFailure::Matcher(MatcherError::NotEnoughVisiblePoints { .. }))
    ));
}

#[test]
fn refine_from_truth_is_a_fixed_point() {
    let f = room();
    let matcher = MatcherConfig::noise_free();
    let ransac = RansacConfig::indoor();
    for seed in 0..3 {
        let query = query_at(20 + seed);
        let ctx = LocalContext {
            scene: &f.scene,
            scores: &f.scores,
            query: &query,
            matcher: &matcher,
            ransac: &ransac,
            uncertainty_sampling: true,
        };
        let out = refine(&ctx, &PriorSource::SinglePose(query.pose), &small_config(2, 1, seed)).unwrap();
        let e = pose_error(&out.pose, &query.pose);
        assert!(e.translation_error <= 1e-3 && e.rotation_error <= 1e-2, "{e:?}");
        // one importance record and one ssim record per particle
        assert_eq!(out.diagnostics.len(), 4);
        let w: f64 = out.particles.iter().map(|p| p.weight).sum();
        assert!((w - 1.0).abs() < 1e-12);
    }
}

#[test]
fn refine_is_deterministic_and_logs_every_particle() {
    let f = room();
    let query = query_at(40);
    let matcher = MatcherConfig {
        pixel_noise_sigma: 0.8,
        outlier_fraction: 0.2,
        ..Default::default()
    };
    let ransac = RansacConfig::indoor();
    let ctx = LocalContext {
        scene: &f.scene,
        scores: &f.scores,
        query: &query,
        matcher: &matcher,
        ransac: &ransac,
        uncertainty_sampling: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let prior = perturb(&query.pose, 0.1, 1.0, &mut rng);
    let cfg = small_config(4, 2, 99);
    let a = refine(&ctx, &PriorSource::SinglePose(prior), &cfg).unwrap();
    let b = refine(&ctx, &PriorSource::SinglePose(prior), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.diagnostics.len(), 4 * 3);
    let text = diagnostics_jsonl(&a.diagnostics);
    assert_eq!(text.lines().count(), 12);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["iteration"], 0);
    assert_eq!(first["stage"], "importance");

    let best = refine(
        &ctx,
        &PriorSource::SinglePose(prior),
        &RefineConfig {
            extraction: ExtractionMode::BestParticle,
            ..cfg
        },
    )
    .unwrap();
    assert!(best.particles.iter().any(|p| p.pose == best.pose));
}

#[test]
fn particles_outside_the_scene_all_fail() {
    let f = room();
    let query = query_at(41);
    let matcher = MatcherConfig::default();
    let ransac = RansacConfig::indoor();
    let ctx = LocalContext {
        scene: &f.scene,
        scores: &f.scores,
        query: &query,
        matcher: &matcher,
        ransac: &ransac,
        uncertainty_sampling: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let away: Vec<Pose> = (0..3)
        .map(|_| {
            let eye = Vector3::new(0.0, 0.0, 30.0) + random_unit_vector(&mut rng);
            Pose::look_at(eye, eye + Vector3::z(), Vector3::y())
        })
        .collect();
    let err = refine(&ctx, &PriorSource::CandidateList(away), &small_config(3, 2, 0));
    assert_eq!(err, Err(RefineError::AllParticlesFailed));
}

#[test]
fn config_validation() {
    assert!(RefineConfig::default().validate().is_ok());
    assert_eq!(RefineConfig::outdoor().extraction, ExtractionMode::BestParticle);
    for bad in [
        RefineConfig {
            particles: 0,
            ..Default::default()
        },
        RefineConfig {
            iterations: 0,
            ..Default::default()
        },
        RefineConfig {
            resolution_schedule: vec![],
            ..Default::default()
        },
        RefineConfig {
            later_perturbation: Perturbation {
                translation_m: -1.0,
                rotation_deg: 0.0,
            },
            ..Default::default()
        },
    ] {
        assert!(matches!(bad.validate(), Err(RefineError::InvalidConfig(_))));
    }
}
