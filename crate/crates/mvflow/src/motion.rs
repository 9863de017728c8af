//! Parametric motion representation and the token layout.
//!
//! A frame carries SMPL-style parameters: body shape `beta` (10), per-joint
//! 6D rotations `theta` (24x6), global orientation `gamma` (6), root position
//! `root` (3), and explicit 3D joint positions `joints` (24x3, root joint
//! duplicating `root`). Per frame the parameters pack into 51 tokens:
//! 25 position tokens {root, joints}, 25 rotation tokens {gamma, theta},
//! and 1 shape token.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::MatLayout;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const JOINTS: usize = 24;
pub const POSITION_TOKENS: usize = JOINTS + 1;
pub const ROTATION_TOKENS: usize = JOINTS + 1;
pub const SHAPE_TOKENS: usize = 1;
pub const TOKENS_PER_FRAME: usize = POSITION_TOKENS + ROTATION_TOKENS + SHAPE_TOKENS;

pub const POS_CHANNELS: usize = 3;
pub const ROT_CHANNELS: usize = 6;
pub const SHAPE_CHANNELS: usize = 10;

/// Root joint must match the root position this closely.
pub const ROOT_TOL: f32 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct MotionFrame {
    pub beta: [f32; SHAPE_CHANNELS],
    pub theta: [[f32; ROT_CHANNELS]; JOINTS],
    pub gamma: [f32; ROT_CHANNELS],
    pub root: [f32; POS_CHANNELS],
    pub joints: [[f32; POS_CHANNELS]; JOINTS],
}

impl MotionFrame {
    pub fn zero() -> Self {
        Self {
            beta: [0.0; SHAPE_CHANNELS],
            theta: [[0.0; ROT_CHANNELS]; JOINTS],
            gamma: [0.0; ROT_CHANNELS],
            root: [0.0; POS_CHANNELS],
            joints: [[0.0; POS_CHANNELS]; JOINTS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .beta
            .iter()
            .chain(self.theta.iter().flatten())
            .chain(self.gamma.iter())
            .chain(self.root.iter())
            .chain(self.joints.iter().flatten());
        for &v in all {
            if !v.is_finite() {
                return Err(Error::Data("non-finite motion parameter".into()));
            }
        }
        for c in 0..POS_CHANNELS {
            if (self.joints[0][c] - self.root[c]).abs() > ROOT_TOL {
                return Err(Error::Data(format!(
                    "root joint {:?} does not match root position {:?}",
                    self.joints[0], self.root
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionClip {
    pub frames: Vec<MotionFrame>,
    pub fps: u32,
}

impl MotionClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Data("motion clip needs at least one frame".into()));
        }
        if self.fps == 0 {
            return Err(Error::Data("fps must be positive".into()));
        }
        for f in &self.frames {
            f.validate()?;
        }
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.frames.len() * TOKENS_PER_FRAME
    }
}

/// One frame split into the three parameter groups.
pub struct FrameGroups {
    pub position: [[f32; POS_CHANNELS]; POSITION_TOKENS],
    pub rotation: [[f32; ROT_CHANNELS]; ROTATION_TOKENS],
    pub shape: [f32; SHAPE_CHANNELS],
}

/// Bijective packing: row 0 of each group is the frame-level quantity
/// (root position / global orientation), rows 1.. are the per-joint ones.
pub fn group_frame(frame: &MotionFrame) -> FrameGroups {
    let mut position = [[0.0; POS_CHANNELS]; POSITION_TOKENS];
    let mut rotation = [[0.0; ROT_CHANNELS]; ROTATION_TOKENS];
    position[0] = frame.root;
    rotation[0] = frame.gamma;
    for j in 0..JOINTS {
        position[j + 1] = frame.joints[j];
        rotation[j + 1] = frame.theta[j];
    }
    FrameGroups { position, rotation, shape: frame.beta }
}

pub fn ungroup_frame(groups: &FrameGroups) -> MotionFrame {
    let mut frame = MotionFrame::zero();
    frame.root = groups.position[0];
    frame.gamma = groups.rotation[0];
    for j in 0..JOINTS {
        frame.joints[j] = groups.position[j + 1];
        frame.theta[j] = groups.rotation[j + 1];
    }
    frame.beta = groups.shape;
    frame
}

/// The three group matrices for a whole clip, frame-major rows.
/// `pos`: [25F, 3], `rot`: [25F, 6], `shape`: [F, 10].
#[derive(Clone, Debug, PartialEq)]
pub struct MotionGroups<E: Scalar> {
    pub pos: Tensor<E>,
    pub rot: Tensor<E>,
    pub shape: Tensor<E>,
}

impl<E: Scalar> MotionGroups<E> {
    pub fn frames(&self) -> usize {
        self.shape.shape()[0]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            pos: Tensor::zeros(self.pos.shape()),
            rot: Tensor::zeros(self.rot.shape()),
            shape: Tensor::zeros(self.shape.shape()),
        }
    }

    pub fn numel(&self) -> usize {
        self.pos.numel() + self.rot.numel() + self.shape.numel()
    }

    pub fn parts(&self) -> [&Tensor<E>; 3] {
        [&self.pos, &self.rot, &self.shape]
    }

    pub fn map2(&self, other: &Self, f: impl Fn(E, E) -> E) -> Self {
        let go = |a: &Tensor<E>, b: &Tensor<E>| {
            let mut out = Tensor::zeros(a.shape());
            for ((o, &x), &y) in out.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                *o = f(x, y);
            }
            out
        };
        Self {
            pos: go(&self.pos, &other.pos),
            rot: go(&self.rot, &other.rot),
            shape: go(&self.shape, &other.shape),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.parts().iter().all(|t| t.all_finite())
    }

    pub fn cast<T: Scalar>(&self) -> MotionGroups<T> {
        MotionGroups { pos: self.pos.cast(), rot: self.rot.cast(), shape: self.shape.cast() }
    }
}

pub fn clip_to_groups<E: Scalar>(clip: &MotionClip) -> MotionGroups<E> {
    let f = clip.frames.len();
    let mut pos = Vec::with_capacity(f * POSITION_TOKENS * POS_CHANNELS);
    let mut rot = Vec::with_capacity(f * ROTATION_TOKENS * ROT_CHANNELS);
    let mut shape = Vec::with_capacity(f * SHAPE_CHANNELS);
    for frame in &clip.frames {
        let g = group_frame(frame);
        for row in &g.position {
            pos.extend(row.iter().map(|&v| E::from_f64(v as f64)));
        }
        for row in &g.rotation {
            rot.extend(row.iter().map(|&v| E::from_f64(v as f64)));
        }
        shape.extend(g.shape.iter().map(|&v| E::from_f64(v as f64)));
    }
    MotionGroups {
        pos: Tensor::new(&[f * POSITION_TOKENS, POS_CHANNELS], pos).unwrap(),
        rot: Tensor::new(&[f * ROTATION_TOKENS, ROT_CHANNELS], rot).unwrap(),
        shape: Tensor::new(&[f, SHAPE_CHANNELS], shape).unwrap(),
    }
}

/// Rebuild a clip from group matrices. The duplicated root (position row 0
/// vs joint row 1) is reconciled by averaging, which is the identity on
/// consistently encoded clips and keeps the root invariant on generated ones.
pub fn groups_to_clip<E: Scalar>(groups: &MotionGroups<E>, fps: u32) -> MotionClip {
    let f = groups.frames();
    let mut frames = Vec::with_capacity(f);
    let posd = groups.pos.data();
    let rotd = groups.rot.data();
    let shaped = groups.shape.data();
    for fi in 0..f {
        let mut frame = MotionFrame::zero();
        let pbase = fi * POSITION_TOKENS * POS_CHANNELS;
        let rbase = fi * ROTATION_TOKENS * ROT_CHANNELS;
        for c in 0..POS_CHANNELS {
            frame.root[c] = posd[pbase + c].to_f64() as f32;
        }
        for j in 0..JOINTS {
            for c in 0..POS_CHANNELS {
                frame.joints[j][c] = posd[pbase + (j + 1) * POS_CHANNELS + c].to_f64() as f32;
            }
        }
        for c in 0..ROT_CHANNELS {
            frame.gamma[c] = rotd[rbase + c].to_f64() as f32;
        }
        for j in 0..JOINTS {
            for c in 0..ROT_CHANNELS {
                frame.theta[j][c] = rotd[rbase + (j + 1) * ROT_CHANNELS + c].to_f64() as f32;
            }
        }
        for c in 0..SHAPE_CHANNELS {
            frame.beta[c] = shaped[fi * SHAPE_CHANNELS + c].to_f64() as f32;
        }
        for c in 0..POS_CHANNELS {
            let mean = 0.5 * (frame.root[c] + frame.joints[0][c]);
            frame.root[c] = mean;
            frame.joints[0][c] = mean;
        }
        frames.push(frame);
    }
    MotionClip { frames, fps }
}

// ---- z-normalization ----

/// Per-channel mean/std for each parameter group, computed over a dataset.
/// Stds are floored so constant channels stay harmless.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub pos_mean: [f64; POS_CHANNELS],
    pub pos_std: [f64; POS_CHANNELS],
    pub rot_mean: [f64; ROT_CHANNELS],
    pub rot_std: [f64; ROT_CHANNELS],
    pub shape_mean: [f64; SHAPE_CHANNELS],
    pub shape_std: [f64; SHAPE_CHANNELS],
}

pub const STD_FLOOR: f64 = 1e-3;

impl NormStats {
    pub fn identity() -> Self {
        Self {
            pos_mean: [0.0; POS_CHANNELS],
            pos_std: [1.0; POS_CHANNELS],
            rot_mean: [0.0; ROT_CHANNELS],
            rot_std: [1.0; ROT_CHANNELS],
            shape_mean: [0.0; SHAPE_CHANNELS],
            shape_std: [1.0; SHAPE_CHANNELS],
        }
    }

    pub fn from_clips<'a>(clips: impl Iterator<Item = &'a MotionClip>) -> Self {
        fn channel_stats<const C: usize>(
            sums: &[f64; C],
            sqs: &[f64; C],
            n: f64,
        ) -> ([f64; C], [f64; C]) {
            let mut mean = [0.0; C];
            let mut std = [1.0; C];
            if n > 0.0 {
                for c in 0..C {
                    mean[c] = sums[c] / n;
                    let var = (sqs[c] / n - mean[c] * mean[c]).max(0.0);
                    std[c] = var.sqrt().max(STD_FLOOR);
                }
            }
            (mean, std)
        }
        let mut pos_sum = [0.0; POS_CHANNELS];
        let mut pos_sq = [0.0; POS_CHANNELS];
        let mut rot_sum = [0.0; ROT_CHANNELS];
        let mut rot_sq = [0.0; ROT_CHANNELS];
        let mut shape_sum = [0.0; SHAPE_CHANNELS];
        let mut shape_sq = [0.0; SHAPE_CHANNELS];
        let (mut n_pos, mut n_rot, mut n_shape) = (0.0f64, 0.0f64, 0.0f64);
        for clip in clips {
            for frame in &clip.frames {
                let g = group_frame(frame);
                for row in &g.position {
                    for c in 0..POS_CHANNELS {
                        pos_sum[c] += row[c] as f64;
                        pos_sq[c] += (row[c] as f64) * (row[c] as f64);
                    }
                }
                n_pos += POSITION_TOKENS as f64;
                for row in &g.rotation {
                    for c in 0..ROT_CHANNELS {
                        rot_sum[c] += row[c] as f64;
                        rot_sq[c] += (row[c] as f64) * (row[c] as f64);
                    }
                }
                n_rot += ROTATION_TOKENS as f64;
                for c in 0..SHAPE_CHANNELS {
                    shape_sum[c] += g.shape[c] as f64;
                    shape_sq[c] += (g.shape[c] as f64) * (g.shape[c] as f64);
                }
                n_shape += 1.0;
            }
        }
        let (pos_mean, pos_std) = channel_stats(&pos_sum, &pos_sq, n_pos);
        let (rot_mean, rot_std) = channel_stats(&rot_sum, &rot_sq, n_rot);
        let (shape_mean, shape_std) = channel_stats(&shape_sum, &shape_sq, n_shape);
        Self { pos_mean, pos_std, rot_mean, rot_std, shape_mean, shape_std }
    }

    pub fn normalize<E: Scalar>(&self, raw: &MotionGroups<E>) -> MotionGroups<E> {
        MotionGroups {
            pos: apply_channels(&raw.pos, &self.pos_mean, &self.pos_std, true),
            rot: apply_channels(&raw.rot, &self.rot_mean, &self.rot_std, true),
            shape: apply_channels(&raw.shape, &self.shape_mean, &self.shape_std, true),
        }
    }

    pub fn denormalize<E: Scalar>(&self, norm: &MotionGroups<E>) -> MotionGroups<E> {
        MotionGroups {
            pos: apply_channels(&norm.pos, &self.pos_mean, &self.pos_std, false),
            rot: apply_channels(&norm.rot, &self.rot_mean, &self.rot_std, false),
            shape: apply_channels(&norm.shape, &self.shape_mean, &self.shape_std, false),
        }
    }

    /// Flat serialized order: pos mean/std, rot mean/std, shape mean/std.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.pos_mean);
        out.extend(self.pos_std);
        out.extend(self.rot_mean);
        out.extend(self.rot_std);
        out.extend(self.shape_mean);
        out.extend(self.shape_std);
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        let want = 2 * (POS_CHANNELS + ROT_CHANNELS + SHAPE_CHANNELS);
        if flat.len() != want {
            return Err(Error::Format(format!(
                "norm stats want {want} values, got {}",
                flat.len()
            )));
        }
        let mut s = Self::identity();
        let mut it = flat.iter().copied();
        for v in s.pos_mean.iter_mut().chain(s.pos_std.iter_mut()) {
            *v = it.next().unwrap();
        }
        for v in s.rot_mean.iter_mut().chain(s.rot_std.iter_mut()) {
            *v = it.next().unwrap();
        }
        for v in s.shape_mean.iter_mut().chain(s.shape_std.iter_mut()) {
            *v = it.next().unwrap();
        }
        Ok(s)
    }
}

fn apply_channels<E: Scalar, const C: usize>(
    t: &Tensor<E>,
    mean: &[f64; C],
    std: &[f64; C],
    forward: bool,
) -> Tensor<E> {
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(C) {
        for (c, v) in row.iter_mut().enumerate() {
            let x = v.to_f64();
            let y = if forward { (x - mean[c]) / std[c] } else { x * std[c] + mean[c] };
            *v = E::from_f64(y);
        }
    }
    out
}

// ---- 6D rotation representation ----

/// Gram-Schmidt reconstruction: the 6 values are the first two columns of
/// the rotation matrix.
pub fn rot6d_to_matrix(r6: &[f64; 6]) -> Result<[[f64; 3]; 3]> {
    let a = [r6[0], r6[1], r6[2]];
    let b = [r6[3], r6[4], r6[5]];
    let na = norm3(&a);
    if na < 1e-8 {
        return Err(Error::Data("degenerate 6D rotation: first column is zero".into()));
    }
    let x = [a[0] / na, a[1] / na, a[2] / na];
    let d = dot3(&x, &b);
    let mut y = [b[0] - d * x[0], b[1] - d * x[1], b[2] - d * x[2]];
    let ny = norm3(&y);
    if ny < 1e-8 {
        return Err(Error::Data("degenerate 6D rotation: columns are collinear".into()));
    }
    for v in y.iter_mut() {
        *v /= ny;
    }
    let z = cross3(&x, &y);
    // Columns x, y, z.
    Ok([[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]])
}

/// The first two columns of R, flattened.
pub fn matrix_to_rot6d(r: &[[f64; 3]; 3]) -> [f64; 6] {
    [r[0][0], r[1][0], r[2][0], r[0][1], r[1][1], r[2][1]]
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: &[f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

// ---- token interleave ----

/// Permutation taking the group-major stack [pos; rot; shape] (25F + 25F + F
/// rows) to the frame-major token order (51 per frame: positions, rotations,
/// shape).
pub fn interleave_indices(frames: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(frames * TOKENS_PER_FRAME);
    for f in 0..frames {
        for j in 0..POSITION_TOKENS {
            idx.push(f * POSITION_TOKENS + j);
        }
        for j in 0..ROTATION_TOKENS {
            idx.push(frames * POSITION_TOKENS + f * ROTATION_TOKENS + j);
        }
        idx.push(frames * (POSITION_TOKENS + ROTATION_TOKENS) + f);
    }
    idx
}

/// Frame count for a motion token sequence; errors unless the count is a
/// positive multiple of the per-frame token budget.
pub fn frames_for_tokens(tokens: usize) -> Result<usize> {
    if tokens == 0 || tokens % TOKENS_PER_FRAME != 0 {
        return Err(Error::Data(format!(
            "token count {tokens} is not a positive multiple of {TOKENS_PER_FRAME}"
        )));
    }
    Ok(tokens / TOKENS_PER_FRAME)
}

/// Row indices of each group inside the frame-major token sequence.
pub fn deinterleave_indices(frames: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut pos = Vec::with_capacity(frames * POSITION_TOKENS);
    let mut rot = Vec::with_capacity(frames * ROTATION_TOKENS);
    let mut shape = Vec::with_capacity(frames);
    for f in 0..frames {
        let base = f * TOKENS_PER_FRAME;
        for j in 0..POSITION_TOKENS {
            pos.push(base + j);
        }
        for j in 0..ROTATION_TOKENS {
            rot.push(base + POSITION_TOKENS + j);
        }
        shape.push(base + POSITION_TOKENS + ROTATION_TOKENS);
    }
    (pos, rot, shape)
}

// ---- tape-level projectors ----

/// Node handles for one two-layer MLP (in -> hidden -> out, GELU between).
#[derive(Clone, Copy)]
pub struct MlpNodes {
    pub fc1_w: NodeId,
    pub fc1_b: NodeId,
    pub fc2_w: NodeId,
    pub fc2_b: NodeId,
}

pub fn mlp_forward<E: Scalar>(tape: &Tape<E>, x: NodeId, w: &MlpNodes) -> NodeId {
    let h = tape.add_rowvec(tape.matmul(x, w.fc1_w, MatLayout::Nn), w.fc1_b);
    let h = tape.gelu(h);
    tape.add_rowvec(tape.matmul(h, w.fc2_w, MatLayout::Nn), w.fc2_b)
}

/// The three projector MLPs, position/rotation/shape order.
#[derive(Clone, Copy)]
pub struct CodecNodes {
    pub pos: MlpNodes,
    pub rot: MlpNodes,
    pub shape: MlpNodes,
}

/// Normalized group tensors leased onto the tape.
#[derive(Clone, Copy)]
pub struct GroupNodes {
    pub pos: NodeId,
    pub rot: NodeId,
    pub shape: NodeId,
}

/// Project normalized motion groups into the hidden space and interleave
/// into the frame-major 51-per-frame token sequence. No temporal
/// downsampling: one token row per parameter slot.
pub fn encode_motion_tokens<E: Scalar>(
    tape: &Tape<E>,
    groups: GroupNodes,
    enc: &CodecNodes,
    frames: usize,
) -> NodeId {
    let pos_tok = mlp_forward(tape, groups.pos, &enc.pos);
    let rot_tok = mlp_forward(tape, groups.rot, &enc.rot);
    let shape_tok = mlp_forward(tape, groups.shape, &enc.shape);
    let stacked = tape.concat_rows(tape.concat_rows(pos_tok, rot_tok), shape_tok);
    tape.select_rows(stacked, Arc::new(interleave_indices(frames)))
}

/// Map motion tokens back to normalized parameter-space groups.
pub fn decode_motion_tokens<E: Scalar>(
    tape: &Tape<E>,
    tokens: NodeId,
    dec: &CodecNodes,
    frames: usize,
) -> GroupNodes {
    let (pos_idx, rot_idx, shape_idx) = deinterleave_indices(frames);
    let pos_rows = tape.select_rows(tokens, Arc::new(pos_idx));
    let rot_rows = tape.select_rows(tokens, Arc::new(rot_idx));
    let shape_rows = tape.select_rows(tokens, Arc::new(shape_idx));
    GroupNodes {
        pos: mlp_forward(tape, pos_rows, &dec.pos),
        rot: mlp_forward(tape, rot_rows, &dec.rot),
        shape: mlp_forward(tape, shape_rows, &dec.shape),
    }
}
