use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::scene::{GaussianScene, SceneError};

/// Flat parameter indexing: per anchor, the feature block followed by the
/// offsets (offset-major, xyz).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterLayout {
    pub anchor_count: usize,
    pub feature_dim: usize,
    pub offset_count: usize,
}

impl ParameterLayout {
    pub fn of_scene(scene: &GaussianScene) -> Self {
        Self {
            anchor_count: scene.anchors().len(),
            feature_dim: scene.feature_dim(),
            offset_count: scene.offset_count(),
        }
    }

    pub fn block_len(&self) -> usize {
        self.feature_dim + 3 * self.offset_count
    }

    pub fn len(&self) -> usize {
        self.anchor_count * self.block_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn feature_index(&self, anchor: usize, f: usize) -> usize {
        anchor * self.block_len() + f
    }

    #[inline]
    pub fn offset_index(&self, anchor: usize, offset: usize, axis: usize) -> usize {
        anchor * self.block_len() + self.feature_dim + 3 * offset + axis
    }

    /// Indices a child Gaussian depends on: its anchor's feature plus its
    /// own offset.
    pub fn gaussian_indices(&self, anchor: usize, offset: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.feature_dim)
            .map(move |f| self.feature_index(anchor, f))
            .chain((0..3).map(move |c| self.offset_index(anchor, offset, c)))
    }
}

/// Parameter values in [`ParameterLayout`] order.
pub fn parameter_vector(scene: &GaussianScene) -> Vec<f64> {
    let layout = ParameterLayout::of_scene(scene);
    let mut out = Vec::with_capacity(layout.len());
    for a in scene.anchors() {
        out.extend_from_slice(&a.feature);
        for o in &a.offsets {
            out.extend_from_slice(o.as_slice());
        }
    }
    out
}

/// A new scene with anchor features and offsets taken from `values`.
pub fn apply_parameters(scene: &GaussianScene, values: &[f64]) -> Result<GaussianScene, SceneError> {
    let layout = ParameterLayout::of_scene(scene);
    if values.len() != layout.len() {
        return Err(SceneError::DimensionMismatch(format!(
            "parameter vector has {} entries, scene expects {}",
            values.len(),
            layout.len()
        )));
    }
    let anchors = scene
        .anchors()
        .iter()
        .enumerate()
        .map(|(a, anchor)| {
            let mut anchor = anchor.clone();
            for f in 0..layout.feature_dim {
                anchor.feature[f] = values[layout.feature_index(a, f)];
            }
            for (o, off) in anchor.offsets.iter_mut().enumerate() {
                *off = Vector3::new(
                    values[layout.offset_index(a, o, 0)],
                    values[layout.offset_index(a, o, 1)],
                    values[layout.offset_index(a, o, 2)],
                );
            }
            anchor
        })
        .collect();
    scene.with_anchors(anchors)
}
