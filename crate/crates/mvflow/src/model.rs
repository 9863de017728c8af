//! The dual-branch diffusion transformer.
//!
//! Video tokens (linear patch embeddings) and motion tokens (per-parameter
//! MLP projections) are processed by a stack of blocks. Video-only blocks
//! touch just the video stream; dual blocks project each stream with its own
//! weights, concatenate along the sequence for joint self-attention under
//! the synchronized rotary encoding, then split back for per-modality text
//! cross-attention and FFNs. Timestep conditioning enters through adaLN
//! scale/shift/gate triples; a task hint is broadcast-added to every token.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::MatLayout;
use crate::motion::{
    self, CodecNodes, GroupNodes, MlpNodes, MotionGroups, NormStats, POS_CHANNELS,
    ROT_CHANNELS, SHAPE_CHANNELS, TOKENS_PER_FRAME,
};
use crate::params::{ParamId, ParamSet};
use crate::rng::{stream, tag};
use crate::rope::{self, PositionIndex, RopeConfig};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::video::LatentGeometry;

pub const LN_EPS: f64 = 1e-5;
/// Timestep values are scaled by the training grid size before the
/// sinusoidal embedding.
pub const TIME_SCALE: f64 = 1000.0;

/// Generation paradigm; selects condition handling and the task hint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskMode {
    Joint,
    MotionToVideo,
    VideoToMotion,
}

impl TaskMode {
    pub const ALL: [TaskMode; 3] = [TaskMode::Joint, TaskMode::MotionToVideo, TaskMode::VideoToMotion];

    pub fn index(self) -> usize {
        match self {
            TaskMode::Joint => 0,
            TaskMode::MotionToVideo => 1,
            TaskMode::VideoToMotion => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TaskMode::Joint => "joint",
            TaskMode::MotionToVideo => "m2v",
            TaskMode::VideoToMotion => "v2m",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Dual-modality blocks occupy the tail of the stack; the first
    /// `layers - dual_layers` blocks are video-only.
    pub dual_layers: usize,
    pub vocab_size: usize,
    pub text_len: usize,
    pub stride: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps: u32,
    pub theta: f64,
    pub collision_mode: bool,
    pub unscaled_time: bool,
    pub share_modality_weights: bool,
}

impl ModelConfig {
    pub fn toy() -> Self {
        Self {
            dim: 64,
            heads: 4,
            layers: 4,
            dual_layers: 4,
            vocab_size: 32,
            text_len: 16,
            stride: 4,
            frames: 17,
            height: 32,
            width: 32,
            fps: 16,
            theta: 10_000.0,
            collision_mode: false,
            unscaled_time: false,
            share_modality_weights: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn hidden(&self) -> usize {
        4 * self.dim
    }

    pub fn rope(&self) -> RopeConfig {
        RopeConfig {
            head_dim: self.head_dim(),
            theta: self.theta,
            collision_mode: self.collision_mode,
            unscaled_time: self.unscaled_time,
        }
    }

    pub fn geometry(&self) -> Result<LatentGeometry> {
        LatentGeometry::of(self.frames, self.height, self.width, self.stride)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.head_dim() % 4 != 0 || self.head_dim() < 8 {
            return Err(Error::Config(format!(
                "head_dim {} must be a multiple of 4, at least 8",
                self.head_dim()
            )));
        }
        if self.dual_layers > self.layers {
            return Err(Error::Config(format!(
                "dual_layers {} exceeds layers {}",
                self.dual_layers, self.layers
            )));
        }
        if self.layers == 0 || self.dual_layers == 0 {
            return Err(Error::Config("need at least one dual block".into()));
        }
        if self.vocab_size == 0 || self.text_len == 0 {
            return Err(Error::Config("text vocabulary and length must be positive".into()));
        }
        if self.frames == 0 || self.frames % 4 != 1 {
            return Err(Error::Config(format!("frames {} must be 1 mod 4", self.frames)));
        }
        self.geometry()?;
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct LinearIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy)]
struct MlpIds {
    fc1: LinearIds,
    fc2: LinearIds,
}

#[derive(Clone, Copy)]
struct StreamIds {
    q: LinearIds,
    k: LinearIds,
    v: LinearIds,
    o: LinearIds,
    cross_q: LinearIds,
    cross_k: LinearIds,
    cross_v: LinearIds,
    cross_o: LinearIds,
    ffn: MlpIds,
    modulation: LinearIds,
}

#[derive(Clone, Copy)]
struct BlockIds {
    dual: bool,
    video: StreamIds,
    /// Motion stream weights; equals `video` when modality weights are shared.
    motion: StreamIds,
}

struct Handles {
    time: MlpIds,
    text_embed: ParamId,
    text_null: ParamId,
    task_embed: ParamId,
    task_mlp: MlpIds,
    video_patch: LinearIds,
    video_unpatch: LinearIds,
    motion_enc: [MlpIds; 3],
    motion_dec: [MlpIds; 3],
    blocks: Vec<BlockIds>,
}

/// Dual-modality model: parameters, derived handles, cached rope tables.
pub struct Model<E: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamSet<E>,
    pub stats: NormStats,
    handles: Handles,
    video_positions: Vec<PositionIndex>,
    motion_positions: Vec<PositionIndex>,
}

/// True for parameters belonging to the video branch (frozen in phase 1).
pub fn is_video_branch(name: &str) -> bool {
    name.starts_with("video.") || name.contains(".video.")
}

struct Builder<'a, E: Scalar> {
    params: &'a mut ParamSet<E>,
    seed: u64,
}

impl<'a, E: Scalar> Builder<'a, E> {
    /// Init is keyed by parameter name, so construction order is irrelevant.
    fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let rng = stream(self.seed, &[tag("init"), tag(name)]);
        self.params.insert(name, Tensor::randn(shape, std, rng))
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.params.insert(name, Tensor::zeros(shape))
    }

    fn linear(&mut self, prefix: &str, din: usize, dout: usize, zero_w: bool) -> LinearIds {
        let w = if zero_w {
            self.zeros(&format!("{prefix}.w"), &[din, dout])
        } else {
            self.normal(&format!("{prefix}.w"), &[din, dout], 0.02)
        };
        let b = self.zeros(&format!("{prefix}.b"), &[dout]);
        LinearIds { w, b }
    }

    fn mlp(&mut self, prefix: &str, din: usize, hidden: usize, dout: usize) -> MlpIds {
        MlpIds {
            fc1: self.linear(&format!("{prefix}.fc1"), din, hidden, false),
            fc2: self.linear(&format!("{prefix}.fc2"), hidden, dout, false),
        }
    }

    fn stream(&mut self, prefix: &str, d: usize, hidden: usize) -> StreamIds {
        // Modulation starts with open gates (bias 1 on the gate slices) and
        // a small random weight: the block behaves like a plain pre-LN
        // transformer from the first step, and the timestep signal reaches
        // the blocks immediately. Fully closed zero-init gates leave both
        // the attention path and the timestep conditioning without learning
        // signal for far longer than a desk-scale budget allows.
        let modulation = {
            let w = self.normal(&format!("{prefix}.mod.w"), &[d, 6 * d], 0.02);
            let mut bias = Tensor::zeros(&[6 * d]);
            for v in bias.data_mut()[2 * d..3 * d].iter_mut() {
                *v = E::ONE;
            }
            for v in bias.data_mut()[5 * d..6 * d].iter_mut() {
                *v = E::ONE;
            }
            let b = self.params.insert(&format!("{prefix}.mod.b"), bias);
            LinearIds { w, b }
        };
        StreamIds {
            q: self.linear(&format!("{prefix}.attn.q"), d, d, false),
            k: self.linear(&format!("{prefix}.attn.k"), d, d, false),
            v: self.linear(&format!("{prefix}.attn.v"), d, d, false),
            o: self.linear(&format!("{prefix}.attn.o"), d, d, false),
            cross_q: self.linear(&format!("{prefix}.cross.q"), d, d, false),
            cross_k: self.linear(&format!("{prefix}.cross.k"), d, d, false),
            cross_v: self.linear(&format!("{prefix}.cross.v"), d, d, false),
            // Zero-init output keeps text conditioning from destabilizing
            // the first steps; its gradient is nonzero immediately.
            cross_o: self.linear(&format!("{prefix}.cross.o"), d, d, true),
            ffn: self.mlp(&format!("{prefix}.ffn"), d, hidden, d),
            modulation,
        }
    }
}

impl<E: Scalar> Model<E> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let d = cfg.dim;
        let hidden = cfg.hidden();
        let geo = cfg.geometry()?;
        let mut b = Builder { params: &mut params, seed };

        let time = b.mlp("time", d, hidden, d);
        let text_embed = b.normal("text.embed", &[cfg.vocab_size, d], 0.02);
        let text_null = b.normal("text.null", &[cfg.text_len, d], 0.02);
        let task_embed = b.normal("task.embed", &[3, d], 0.02);
        let task_mlp = b.mlp("task.mlp", d, d, d);
        let video_patch = b.linear("video.patch", geo.patch_dim(), d, false);
        let video_unpatch = b.linear("video.unpatch", d, geo.patch_dim(), false);
        let motion_enc = [
            b.mlp("motion.enc.pos", POS_CHANNELS, hidden, d),
            b.mlp("motion.enc.rot", ROT_CHANNELS, hidden, d),
            b.mlp("motion.enc.shape", SHAPE_CHANNELS, hidden, d),
        ];
        let motion_dec = [
            b.mlp("motion.dec.pos", d, hidden, POS_CHANNELS),
            b.mlp("motion.dec.rot", d, hidden, ROT_CHANNELS),
            b.mlp("motion.dec.shape", d, hidden, SHAPE_CHANNELS),
        ];

        let mut blocks = Vec::with_capacity(cfg.layers);
        let video_only = cfg.layers - cfg.dual_layers;
        for i in 0..cfg.layers {
            let dual = i >= video_only;
            if !dual {
                let video = b.stream(&format!("blocks.{i}.video"), d, hidden);
                blocks.push(BlockIds { dual, video, motion: video });
            } else if cfg.share_modality_weights {
                let both = b.stream(&format!("blocks.{i}.both"), d, hidden);
                blocks.push(BlockIds { dual, video: both, motion: both });
            } else {
                let video = b.stream(&format!("blocks.{i}.video"), d, hidden);
                let motion = b.stream(&format!("blocks.{i}.motion"), d, hidden);
                blocks.push(BlockIds { dual, video, motion });
            }
        }

        let handles = Handles {
            time,
            text_embed,
            text_null,
            task_embed,
            task_mlp,
            video_patch,
            video_unpatch,
            motion_enc,
            motion_dec,
            blocks,
        };

        let rope_cfg = cfg.rope();
        let video_positions = geo
            .token_coords()
            .iter()
            .map(|&(t, h, w)| rope::video_position(t, h, w))
            .collect();
        let mut motion_positions = Vec::with_capacity(cfg.frames * TOKENS_PER_FRAME);
        for f in 0..cfg.frames {
            for i in 0..TOKENS_PER_FRAME {
                motion_positions.push(rope::motion_position(f, i, geo.h_lat, geo.w_lat, &rope_cfg));
            }
        }

        Ok(Self {
            cfg: cfg.clone(),
            params,
            stats: NormStats::identity(),
            handles,
            video_positions,
            motion_positions,
        })
    }

    pub fn video_token_positions(&self) -> &[PositionIndex] {
        &self.video_positions
    }

    pub fn motion_token_positions(&self) -> &[PositionIndex] {
        &self.motion_positions
    }

    /// Lease every parameter onto a tape; `trainable` decides which leaves
    /// participate in backward.
    pub fn lease<F: Fn(&str) -> bool>(&self, tape: &Tape<E>, trainable: F) -> Lease {
        let mut nodes = Vec::with_capacity(self.params.len());
        for (id, name, tensor) in self.params.iter() {
            let node = if trainable(name) {
                tape.param(id, tensor.clone())
            } else {
                tape.constant(tensor.clone())
            };
            nodes.push(node);
        }
        Lease { nodes }
    }

    pub fn forward(&self, tape: &Tape<E>, lease: &Lease, input: &ForwardInput<E>) -> Result<ForwardOutput<E>> {
        forward_impl(self, tape, lease, input)
    }

    /// Convenience inference call on a private tape.
    pub fn predict(&self, input: &ForwardInput<E>) -> Result<Prediction<E>> {
        let tape = Tape::inference();
        let lease = self.lease(&tape, |_| false);
        let out = self.forward(&tape, &lease, input)?;
        Ok(Prediction {
            video_velocity: out.video_velocity.map(|n| tape.tensor(n)),
            motion_velocity: out.motion_velocity.map(|g| MotionGroups {
                pos: tape.tensor(g.pos),
                rot: tape.tensor(g.rot),
                shape: tape.tensor(g.shape),
            }),
        })
    }

    /// Inference forward that also returns the per-dual-block cross-modal
    /// attention maps (video queries x motion keys, head-averaged).
    pub fn predict_with_attention(
        &self,
        input: &ForwardInput<E>,
    ) -> Result<(Prediction<E>, Vec<Tensor<E>>)> {
        let tape = Tape::inference().with_attn_capture();
        let lease = self.lease(&tape, |_| false);
        let out = self.forward(&tape, &lease, input)?;
        let pred = Prediction {
            video_velocity: out.video_velocity.map(|n| tape.tensor(n)),
            motion_velocity: out.motion_velocity.map(|g| MotionGroups {
                pos: tape.tensor(g.pos),
                rot: tape.tensor(g.rot),
                shape: tape.tensor(g.shape),
            }),
        };
        Ok((pred, out.attn_maps))
    }
}

/// Tape nodes for every parameter, indexed by `ParamId`.
pub struct Lease {
    nodes: Vec<NodeId>,
}

impl Lease {
    fn n(&self, id: ParamId) -> NodeId {
        self.nodes[id]
    }
}

pub struct ForwardInput<'a, E: Scalar> {
    /// Noisy or clean video patch vectors, [tokens, patch_dim].
    pub video: Option<&'a Tensor<E>>,
    /// Noisy or clean normalized motion groups.
    pub motion: Option<&'a MotionGroups<E>>,
    /// Caption token ids; `None` uses the learned null sequence.
    pub text: Option<&'a [u16]>,
    pub t: f64,
    pub task: TaskMode,
}

pub struct ForwardOutput<E: Scalar> {
    pub video_velocity: Option<NodeId>,
    pub motion_velocity: Option<GroupNodes>,
    /// One [video_tokens, motion_tokens] map per dual block when the tape
    /// captures attention and both modalities are present.
    pub attn_maps: Vec<Tensor<E>>,
}

pub struct Prediction<E: Scalar> {
    pub video_velocity: Option<Tensor<E>>,
    pub motion_velocity: Option<MotionGroups<E>>,
}

fn linear<E: Scalar>(tape: &Tape<E>, lease: &Lease, ids: LinearIds, x: NodeId) -> NodeId {
    tape.add_rowvec(tape.matmul(x, lease.n(ids.w), MatLayout::Nn), lease.n(ids.b))
}

fn mlp_nodes(lease: &Lease, ids: MlpIds) -> MlpNodes {
    MlpNodes {
        fc1_w: lease.nodes[ids.fc1.w],
        fc1_b: lease.nodes[ids.fc1.b],
        fc2_w: lease.nodes[ids.fc2.w],
        fc2_b: lease.nodes[ids.fc2.b],
    }
}

fn sinusoidal_time_embedding<E: Scalar>(t: f64, dim: usize) -> Tensor<E> {
    let half = dim / 2;
    let mut data = vec![E::ZERO; dim];
    for i in 0..half {
        let freq = 10_000f64.powf(-(i as f64) / half as f64);
        let arg = TIME_SCALE * t * freq;
        data[i] = E::from_f64(arg.sin());
        data[half + i] = E::from_f64(arg.cos());
    }
    Tensor::new(&[1, dim], data).unwrap()
}

/// Six [1, d] modulation vectors: shift/scale/gate for self-attention,
/// then shift/scale/gate for the FFN.
fn modulation<E: Scalar>(
    tape: &Tape<E>,
    lease: &Lease,
    ids: LinearIds,
    temb: NodeId,
    d: usize,
) -> [NodeId; 6] {
    let m = linear(tape, lease, ids, temb);
    [
        tape.slice_cols(m, 0, d),
        tape.slice_cols(m, d, d),
        tape.slice_cols(m, 2 * d, d),
        tape.slice_cols(m, 3 * d, d),
        tape.slice_cols(m, 4 * d, d),
        tape.slice_cols(m, 5 * d, d),
    ]
}

fn adaln<E: Scalar>(tape: &Tape<E>, x: NodeId, shift: NodeId, scale: NodeId) -> NodeId {
    let h = tape.layernorm_rows(x, LN_EPS);
    let scaled = tape.mul_rowvec(h, tape.add_scalar(scale, E::ONE));
    tape.add_rowvec(scaled, shift)
}

struct StreamState<E: Scalar> {
    x: NodeId,
    cos: Arc<Tensor<E>>,
    sin: Arc<Tensor<E>>,
}

fn forward_impl<E: Scalar>(
    model: &Model<E>,
    tape: &Tape<E>,
    lease: &Lease,
    input: &ForwardInput<E>,
) -> Result<ForwardOutput<E>> {
    let cfg = &model.cfg;
    let h = &model.handles;
    let d = cfg.dim;
    let geo = cfg.geometry()?;

    if input.video.is_none() && input.motion.is_none() {
        return Err(Error::Data("model forward needs at least one modality".into()));
    }
    if let Some(v) = input.video {
        if v.shape() != [geo.tokens(), geo.patch_dim()] {
            return Err(Error::Shape(format!(
                "video latent {:?} does not match geometry [{}, {}]",
                v.shape(),
                geo.tokens(),
                geo.patch_dim()
            )));
        }
    }
    if let Some(m) = input.motion {
        if m.frames() != cfg.frames {
            return Err(Error::Shape(format!(
                "motion groups carry {} frames, config wants {}",
                m.frames(),
                cfg.frames
            )));
        }
    }
    if let Some(ids) = input.text {
        if ids.len() > cfg.text_len {
            return Err(Error::Data(format!(
                "caption length {} exceeds text_len {}",
                ids.len(),
                cfg.text_len
            )));
        }
        if ids.iter().any(|&i| i as usize >= cfg.vocab_size) {
            return Err(Error::Data("caption token outside vocabulary".into()));
        }
    }

    // Conditioning: timestep embedding, text sequence, task hint.
    let temb_sin = tape.constant(sinusoidal_time_embedding::<E>(input.t, d));
    let temb = motion::mlp_forward(tape, temb_sin, &mlp_nodes(lease, h.time));

    let text_nodes = match input.text {
        Some(ids) => {
            let mut padded: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
            padded.resize(cfg.text_len, 0); // pad id 0
            tape.select_rows(lease.n(h.text_embed), Arc::new(padded))
        }
        None => lease.n(h.text_null),
    };

    let task_row = tape.select_rows(lease.n(h.task_embed), Arc::new(vec![input.task.index()]));
    let task_vec = motion::mlp_forward(tape, task_row, &mlp_nodes(lease, h.task_mlp));

    // Per-stream token embeddings plus rotation tables.
    let rope_cfg = cfg.rope();
    let mut video_stream: Option<StreamState<E>> = None;
    if let Some(v) = input.video {
        let vnode = tape.constant(v.clone());
        let tokens = linear(tape, lease, h.video_patch, vnode);
        let x = tape.add_rowvec(tokens, task_vec);
        let (cos, sin) = rope::rotation_tables::<E>(&model.video_positions, &rope_cfg);
        video_stream = Some(StreamState { x, cos, sin });
    }
    let mut motion_stream: Option<StreamState<E>> = None;
    if let Some(m) = input.motion {
        let groups = GroupNodes {
            pos: tape.constant(m.pos.clone()),
            rot: tape.constant(m.rot.clone()),
            shape: tape.constant(m.shape.clone()),
        };
        let enc = CodecNodes {
            pos: mlp_nodes(lease, h.motion_enc[0]),
            rot: mlp_nodes(lease, h.motion_enc[1]),
            shape: mlp_nodes(lease, h.motion_enc[2]),
        };
        let tokens = motion::encode_motion_tokens(tape, groups, &enc, cfg.frames);
        let x = tape.add_rowvec(tokens, task_vec);
        let (cos, sin) = rope::rotation_tables::<E>(&model.motion_positions, &rope_cfg);
        motion_stream = Some(StreamState { x, cos, sin });
    }

    let mut attn_maps: Vec<Tensor<E>> = Vec::new();

    for block in &h.blocks {
        if !block.dual {
            // Video-only block; the motion stream passes through untouched.
            if let Some(vs) = video_stream.as_mut() {
                vs.x = stream_block(tape, lease, &block.video, vs, temb, text_nodes, cfg)?;
            }
            continue;
        }
        match (video_stream.as_mut(), motion_stream.as_mut()) {
            (Some(vs), Some(ms)) => {
                let (nv, nm) = (tape.shape(vs.x)[0], tape.shape(ms.x)[0]);
                let (new_v, new_m, probs) =
                    dual_block(tape, lease, block, vs, ms, temb, text_nodes, cfg)?;
                vs.x = new_v;
                ms.x = new_m;
                if let Some(p) = probs {
                    attn_maps.push(cross_modal_map(&p, cfg.heads, nv, nm));
                }
            }
            (Some(vs), None) => {
                vs.x = stream_block(tape, lease, &block.video, vs, temb, text_nodes, cfg)?;
            }
            (None, Some(ms)) => {
                ms.x = stream_block(tape, lease, &block.motion, ms, temb, text_nodes, cfg)?;
            }
            (None, None) => unreachable!(),
        }
    }

    // Output heads.
    let video_velocity = video_stream.map(|vs| linear(tape, lease, h.video_unpatch, vs.x));
    let motion_velocity = motion_stream.map(|ms| {
        let dec = CodecNodes {
            pos: mlp_nodes(lease, h.motion_dec[0]),
            rot: mlp_nodes(lease, h.motion_dec[1]),
            shape: mlp_nodes(lease, h.motion_dec[2]),
        };
        motion::decode_motion_tokens(tape, ms.x, &dec, cfg.frames)
    });

    Ok(ForwardOutput { video_velocity, motion_velocity, attn_maps })
}

/// Single-stream block body (video-only blocks, or a dual block when the
/// other modality is absent). Returns the updated stream.
#[allow(clippy::too_many_arguments)]
fn stream_block<E: Scalar>(
    tape: &Tape<E>,
    lease: &Lease,
    ids: &StreamIds,
    state: &StreamState<E>,
    temb: NodeId,
    text: NodeId,
    cfg: &ModelConfig,
) -> Result<NodeId> {
    let d = cfg.dim;
    let m = modulation(tape, lease, ids.modulation, temb, d);
    let x = state.x;

    let hattn = adaln(tape, x, m[0], m[1]);
    let q = tape.rope(linear(tape, lease, ids.q, hattn), state.cos.clone(), state.sin.clone(), cfg.heads);
    let k = tape.rope(linear(tape, lease, ids.k, hattn), state.cos.clone(), state.sin.clone(), cfg.heads);
    let v = linear(tape, lease, ids.v, hattn);
    let attn = tape.attention(q, k, v, cfg.heads);
    let attn = linear(tape, lease, ids.o, attn);
    let x = tape.add(x, tape.mul_rowvec(attn, m[2]));

    let x = cross_attention(tape, lease, ids, x, text, cfg);

    let hffn = adaln(tape, x, m[3], m[4]);
    let ffn = ffn_forward(tape, lease, ids, hffn);
    let x = tape.add(x, tape.mul_rowvec(ffn, m[5]));
    Ok(x)
}

/// Dual block: joint self-attention over the concatenated sequence, then
/// per-modality cross-attention and FFN.
#[allow(clippy::too_many_arguments)]
fn dual_block<E: Scalar>(
    tape: &Tape<E>,
    lease: &Lease,
    block: &BlockIds,
    vs: &StreamState<E>,
    ms: &StreamState<E>,
    temb: NodeId,
    text: NodeId,
    cfg: &ModelConfig,
) -> Result<(NodeId, NodeId, Option<Tensor<E>>)> {
    let d = cfg.dim;
    let mv = modulation(tape, lease, block.video.modulation, temb, d);
    let mm = if block.motion.modulation.w == block.video.modulation.w {
        mv
    } else {
        modulation(tape, lease, block.motion.modulation, temb, d)
    };

    let nv = tape.shape(vs.x)[0];
    let nm = tape.shape(ms.x)[0];

    // Modality-specific projections of the adaLN-normalized streams.
    let hv = adaln(tape, vs.x, mv[0], mv[1]);
    let hm = adaln(tape, ms.x, mm[0], mm[1]);
    let qv = tape.rope(linear(tape, lease, block.video.q, hv), vs.cos.clone(), vs.sin.clone(), cfg.heads);
    let kv = tape.rope(linear(tape, lease, block.video.k, hv), vs.cos.clone(), vs.sin.clone(), cfg.heads);
    let vv = linear(tape, lease, block.video.v, hv);
    let qm = tape.rope(linear(tape, lease, block.motion.q, hm), ms.cos.clone(), ms.sin.clone(), cfg.heads);
    let km = tape.rope(linear(tape, lease, block.motion.k, hm), ms.cos.clone(), ms.sin.clone(), cfg.heads);
    let vm = linear(tape, lease, block.motion.v, hm);

    // Sequence-level concatenation and joint attention.
    let q = tape.concat_rows(qv, qm);
    let k = tape.concat_rows(kv, km);
    let v = tape.concat_rows(vv, vm);
    let joint = tape.attention(q, k, v, cfg.heads);
    let probs = tape.attention_probs(joint);

    // Disentangle and close out each stream independently.
    let attn_v = linear(tape, lease, block.video.o, tape.slice_rows(joint, 0, nv));
    let attn_m = linear(tape, lease, block.motion.o, tape.slice_rows(joint, nv, nm));
    let xv = tape.add(vs.x, tape.mul_rowvec(attn_v, mv[2]));
    let xm = tape.add(ms.x, tape.mul_rowvec(attn_m, mm[2]));

    let xv = cross_attention(tape, lease, &block.video, xv, text, cfg);
    let xm = cross_attention(tape, lease, &block.motion, xm, text, cfg);

    let hv2 = adaln(tape, xv, mv[3], mv[4]);
    let xv = tape.add(xv, tape.mul_rowvec(ffn_forward(tape, lease, &block.video, hv2), mv[5]));
    let hm2 = adaln(tape, xm, mm[3], mm[4]);
    let xm = tape.add(xm, tape.mul_rowvec(ffn_forward(tape, lease, &block.motion, hm2), mm[5]));

    Ok((xv, xm, probs))
}

fn cross_attention<E: Scalar>(
    tape: &Tape<E>,
    lease: &Lease,
    ids: &StreamIds,
    x: NodeId,
    text: NodeId,
    cfg: &ModelConfig,
) -> NodeId {
    let h = tape.layernorm_rows(x, LN_EPS);
    let q = linear(tape, lease, ids.cross_q, h);
    let k = linear(tape, lease, ids.cross_k, text);
    let v = linear(tape, lease, ids.cross_v, text);
    let attn = tape.attention(q, k, v, cfg.heads);
    tape.add(x, linear(tape, lease, ids.cross_o, attn))
}

fn ffn_forward<E: Scalar>(tape: &Tape<E>, lease: &Lease, ids: &StreamIds, x: NodeId) -> NodeId {
    let h = tape.gelu(linear(tape, lease, ids.ffn.fc1, x));
    linear(tape, lease, ids.ffn.fc2, h)
}

/// Head-averaged video-query x motion-key slice of a joint-attention
/// probability tensor [heads, n, n].
fn cross_modal_map<E: Scalar>(probs: &Tensor<E>, heads: usize, nv: usize, nm: usize) -> Tensor<E> {
    let n = nv + nm;
    let mut out = Tensor::zeros(&[nv, nm]);
    let inv_h = E::from_f64(1.0 / heads as f64);
    for h in 0..heads {
        let base = h * n * n;
        for qi in 0..nv {
            for kj in 0..nm {
                let p = probs.data()[base + qi * n + nv + kj];
                out.data_mut()[qi * nm + kj] += p * inv_h;
            }
        }
    }
    out
}
