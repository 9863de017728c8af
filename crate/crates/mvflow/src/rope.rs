//! 3D rotary positional encoding, synchronized across modalities.
//!
//! Video tokens rotate with their integer latent coordinates (t, h, w),
//! exactly as plain 3D RoPE would. Motion tokens for frame f with
//! within-frame index i rotate with (f/4, H_lat + i, W_lat + i): the
//! fractional time matches the 4x temporal compression of the video stream,
//! and the diagonal spatial offset keeps the two modalities' coordinates
//! disjoint. `collision_mode` drops the offset — motion spatial indices are
//! (i, i), overlapping the video grid — and exists only for the ablation;
//! `unscaled_time` likewise exposes the variant that skips the 1/4 scaling.

use std::sync::Arc;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Video,
    Motion,
}

/// Real-valued 3D position of a token; fractional temporal coordinates
/// carry the motion stream's 1/4 time scaling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionIndex {
    pub t: f64,
    pub h: f64,
    pub w: f64,
    pub modality: Modality,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RopeConfig {
    /// Must be divisible by 4: half the channels rotate with time, a
    /// quarter each with height and width.
    pub head_dim: usize,
    pub theta: f64,
    /// Ablation: motion tokens reuse video spatial indices (i, i).
    pub collision_mode: bool,
    /// Documented experiment flag: motion time stays at f instead of f/4.
    pub unscaled_time: bool,
}

impl RopeConfig {
    pub fn new(head_dim: usize) -> Self {
        assert!(head_dim % 4 == 0 && head_dim >= 8, "head_dim must be a multiple of 4, >= 8");
        Self { head_dim, theta: 10_000.0, collision_mode: false, unscaled_time: false }
    }

    pub fn dims_t(&self) -> usize {
        self.head_dim / 2
    }

    pub fn dims_h(&self) -> usize {
        self.head_dim / 4
    }

    pub fn dims_w(&self) -> usize {
        self.head_dim / 4
    }
}

/// Position of a video token on the latent grid.
pub fn video_position(t: usize, h: usize, w: usize) -> PositionIndex {
    PositionIndex { t: t as f64, h: h as f64, w: w as f64, modality: Modality::Video }
}

/// Position of motion token `i` (0..51) of frame `f`, given the video
/// latent extents.
pub fn motion_position(
    frame: usize,
    i: usize,
    h_lat: usize,
    w_lat: usize,
    cfg: &RopeConfig,
) -> PositionIndex {
    let t = if cfg.unscaled_time { frame as f64 } else { frame as f64 / 4.0 };
    let (h, w) = if cfg.collision_mode {
        (i as f64, i as f64)
    } else {
        ((h_lat + i) as f64, (w_lat + i) as f64)
    };
    PositionIndex { t, h, w, modality: Modality::Motion }
}

/// Rotation angles for one axis: pos * theta^(-2j/dims) for pair j.
fn axis_angles(pos: f64, dims: usize, theta: f64, out: &mut Vec<f64>) {
    debug_assert!(dims % 2 == 0);
    for j in 0..dims / 2 {
        let freq = theta.powf(-2.0 * j as f64 / dims as f64);
        out.push(pos * freq);
    }
}

/// All head_dim/2 pair angles for a position: temporal pairs first, then
/// height, then width.
pub fn pair_angles(index: &PositionIndex, cfg: &RopeConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.head_dim / 2);
    axis_angles(index.t, cfg.dims_t(), cfg.theta, &mut out);
    axis_angles(index.h, cfg.dims_h(), cfg.theta, &mut out);
    axis_angles(index.w, cfg.dims_w(), cfg.theta, &mut out);
    out
}

/// Rotate adjacent pairs of `vec` by angles `pos * theta^(-2j/dims)`.
/// The primitive single-axis operation; norm-preserving.
pub fn rope_rotate(vec: &[f64], pos: f64, theta: f64) -> Vec<f64> {
    assert!(vec.len() % 2 == 0, "rope_rotate needs an even dimension");
    let dims = vec.len();
    let mut out = vec![0.0; dims];
    for j in 0..dims / 2 {
        let angle = pos * theta.powf(-2.0 * j as f64 / dims as f64);
        let (s, c) = angle.sin_cos();
        out[2 * j] = vec[2 * j] * c - vec[2 * j + 1] * s;
        out[2 * j + 1] = vec[2 * j] * s + vec[2 * j + 1] * c;
    }
    out
}

/// Apply the full 3D rotation of `index` to one head vector.
pub fn apply_mvs_rope(vec: &[f64], index: &PositionIndex, cfg: &RopeConfig) -> Vec<f64> {
    assert_eq!(vec.len(), cfg.head_dim, "head_dim mismatch");
    let angles = pair_angles(index, cfg);
    let mut out = vec![0.0; vec.len()];
    for (j, &angle) in angles.iter().enumerate() {
        let (s, c) = angle.sin_cos();
        out[2 * j] = vec[2 * j] * c - vec[2 * j + 1] * s;
        out[2 * j + 1] = vec[2 * j] * s + vec[2 * j + 1] * c;
    }
    out
}

/// Precomputed cos/sin tables for a token list, in the [n, head_dim/2]
/// layout the tape's rope op consumes (angles shared across heads).
pub fn rotation_tables<E: Scalar>(
    positions: &[PositionIndex],
    cfg: &RopeConfig,
) -> (Arc<Tensor<E>>, Arc<Tensor<E>>) {
    let pairs = cfg.head_dim / 2;
    let n = positions.len();
    let mut cos = Vec::with_capacity(n * pairs);
    let mut sin = Vec::with_capacity(n * pairs);
    for p in positions {
        for angle in pair_angles(p, cfg) {
            cos.push(E::from_f64(angle.cos()));
            sin.push(E::from_f64(angle.sin()));
        }
    }
    (
        Arc::new(Tensor::new(&[n, pairs], cos).unwrap()),
        Arc::new(Tensor::new(&[n, pairs], sin).unwrap()),
    )
}
