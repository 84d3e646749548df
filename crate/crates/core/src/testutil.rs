use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::sync::OnceLock;

use crate::fisher::{gaussian_scores, FisherConfig};
use crate::scene::{
    generate_synthetic_scene, softplus_inverse, Anchor, GaussianScene, LinearDecoder, SceneConfig, SCALE_FLOOR,
};

/// Scene with one anchor per listed position; zero features, opacity set
/// through the decoder bias.
pub(crate) fn point_scene(positions: &[Vector3<f64>], opacity: f64, scale: f64) -> GaussianScene {
    let mut decoder = LinearDecoder::zeros(2, 1);
    decoder.opacity_bias[0] = (opacity / (1.0 - opacity)).ln();
    for c in 0..3 {
        decoder.scale_bias[c] = softplus_inverse(scale - SCALE_FLOOR);
        decoder.color_bias[c] = 0.3 * c as f64;
    }
    let anchors = positions
        .iter()
        .map(|p| Anchor {
            position: *p,
            feature: vec![0.0; 2],
            offsets: vec![Vector3::zeros()],
        })
        .collect();
    GaussianScene::new(anchors, decoder, vec![]).unwrap()
}

/// A handful of anchors in front of the identity camera with random
/// decoder weights, features and offsets.
pub(crate) fn random_small_scene(seed: u64, anchors: usize, f: usize, o: usize) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut decoder = LinearDecoder::zeros(f, o);
    let fill = |rows: &mut Vec<Vec<f64>>, bias: &mut Vec<f64>, b: f64, rng: &mut ChaCha8Rng| {
        for row in rows.iter_mut() {
            for w in row.iter_mut() {
                *w = rng.random_range(-0.5..0.5);
            }
        }
        for x in bias.iter_mut() {
            *x = b + rng.random_range(-0.3..0.3);
        }
    };
    fill(&mut decoder.opacity_weights, &mut decoder.opacity_bias, 0.0, &mut rng);
    fill(&mut decoder.scale_weights, &mut decoder.scale_bias, softplus_inverse(0.06), &mut rng);
    fill(&mut decoder.color_weights, &mut decoder.color_bias, 0.0, &mut rng);
    let anchors = (0..anchors)
        .map(|_| Anchor {
            position: Vector3::new(
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.3..0.3),
                rng.random_range(1.5..3.0),
            ),
            feature: (0..f).map(|_| rng.random_range(-1.0..1.0)).collect(),
            offsets: (0..o)
                .map(|_| Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
                .collect(),
        })
        .collect();
    GaussianScene::new(anchors, decoder, vec![]).unwrap()
}

pub(crate) struct RoomFixture {
    pub scene: GaussianScene,
    pub scores: Vec<f64>,
}

/// A reduced default room with its uncertainty scores, built once.
pub(crate) fn room() -> &'static RoomFixture {
    static F: OnceLock<RoomFixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = SceneConfig {
            anchor_count: 250,
            training_view_count: 8,
            training_width: 64,
            training_height: 48,
            ..Default::default()
        };
        let scene = generate_synthetic_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let scores = gaussian_scores(&scene, &FisherConfig::default()).unwrap();
        RoomFixture { scene, scores }
    })
}
