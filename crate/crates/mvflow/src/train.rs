//! Flow-matching training: the velocity objective, shifted timestep
//! sampling, and the two-phase multi-task schedule.
//!
//! Phase 1 trains the motion branch alone (video inputs omitted, video
//! parameters untouched). Phase 2 trains on paired data, drawing one of
//! three paradigms per example; conditioning modalities are fed clean and
//! never contribute to the loss. All randomness is derived statelessly from
//! (seed, phase, step, example index), so runs are reproducible and
//! resumable from any step.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::data::DatasetRecord;
use crate::error::{Error, Result};
use crate::model::{ForwardInput, Model, ModelConfig, TaskMode};
use crate::motion::{clip_to_groups, MotionGroups};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::ParamId;
use crate::rng::{stream, tag, uniform_f64, uniform_usize, NormalSource};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::video::patchify;

pub const TRAIN_TIMESTEPS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub phase1_steps: usize,
    pub phase2_steps: usize,
    pub paradigm_probs: [f64; 3],
    pub p_text: f64,
    pub p_motion: f64,
    pub p_video: f64,
    pub shift: f64,
    pub batch_size: usize,
    pub lambda_motion: f64,
    pub seed: u64,
    /// Ablation: start phase 2 from scratch instead of the phase-1 weights.
    pub skip_phase1: bool,
    /// Pin every example to one paradigm instead of sampling.
    pub force_paradigm: Option<TaskMode>,
    /// Concentrate training timesteps at the noise end of the shifted grid
    /// (the regime the sampler's early steps depend on) rather than the
    /// data end. Measured on the toy geometry, the data-side density never
    /// improves sampled quality; see the config for the flag to flip it.
    pub noise_side_time: bool,
    /// Global-norm gradient clipping; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            phase1_steps: 300,
            phase2_steps: 2000,
            paradigm_probs: [1.0 / 3.0; 3],
            p_text: 0.1,
            p_motion: 0.1,
            p_video: 0.1,
            shift: 8.0,
            batch_size: 1,
            lambda_motion: 1.0,
            seed: 0,
            skip_phase1: false,
            force_paradigm: None,
            noise_side_time: true,
            grad_clip: None,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        let psum: f64 = self.paradigm_probs.iter().sum();
        if self.paradigm_probs.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (psum - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "paradigm probabilities {:?} must lie in [0,1] and sum to 1",
                self.paradigm_probs
            )));
        }
        for (name, p) in [("p_text", self.p_text), ("p_motion", self.p_motion), ("p_video", self.p_video)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0,1]")));
            }
        }
        if self.shift < 1.0 {
            return Err(Error::Config(format!("shift {} must be >= 1", self.shift)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.lambda_motion < 0.0 {
            return Err(Error::Config("lambda_motion must be non-negative".into()));
        }
        Ok(())
    }
}

// ---- flow-matching primitives ----

/// x_t = t x1 + (1 - t) x0.
pub fn interpolate<E: Scalar>(x0: &Tensor<E>, x1: &Tensor<E>, t: f64) -> Result<Tensor<E>> {
    if x0.shape() != x1.shape() {
        return Err(Error::Shape(format!(
            "interpolate shapes {:?} vs {:?}",
            x0.shape(),
            x1.shape()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Data(format!("t = {t} outside [0,1]")));
    }
    let tc = E::from_f64(t);
    let one_m = E::from_f64(1.0 - t);
    let mut out = Tensor::zeros(x0.shape());
    for ((o, &a), &b) in out.data_mut().iter_mut().zip(x0.data()).zip(x1.data()) {
        *o = tc * b + one_m * a;
    }
    Ok(out)
}

pub fn interpolate_groups<E: Scalar>(
    x0: &MotionGroups<E>,
    x1: &MotionGroups<E>,
    t: f64,
) -> Result<MotionGroups<E>> {
    Ok(MotionGroups {
        pos: interpolate(&x0.pos, &x1.pos, t)?,
        rot: interpolate(&x0.rot, &x1.rot, t)?,
        shape: interpolate(&x0.shape, &x1.shape, t)?,
    })
}

/// The timestep shift t = s u / (1 + (s - 1) u); identity at s = 1,
/// fixed points at u = 0 and u = 1.
pub fn shift_time(u: f64, s: f64) -> f64 {
    s * u / (1.0 + (s - 1.0) * u)
}

/// Draw u uniformly on the 1000-point grid {k/999} and shift it.
pub fn sample_train_timestep(rng: &mut ChaCha8Rng, shift: f64) -> f64 {
    let k = uniform_usize(rng, TRAIN_TIMESTEPS);
    let u = k as f64 / (TRAIN_TIMESTEPS - 1) as f64;
    shift_time(u, shift)
}

/// Mirrored draw: density concentrated at the noise end (low t) instead of
/// the data end. Same grid, same fixed points, same identity at s = 1;
/// algebraically t = u / (s - (s-1) u) = 1 - shift(1 - u).
pub fn sample_train_timestep_noise_side(rng: &mut ChaCha8Rng, shift: f64) -> f64 {
    let k = uniform_usize(rng, TRAIN_TIMESTEPS);
    let u = k as f64 / (TRAIN_TIMESTEPS - 1) as f64;
    1.0 - shift_time(1.0 - u, shift)
}

/// Masked flow-matching loss: mean over masked elements of
/// (pred - (x1 - x0))^2. The mask selects generated-modality elements.
pub fn fm_loss<E: Scalar>(
    tape: &Tape<E>,
    pred: NodeId,
    x0: &Tensor<E>,
    x1: &Tensor<E>,
    mask: &Tensor<E>,
) -> Result<NodeId> {
    let shape = tape.shape(pred);
    if x0.shape() != shape.as_slice() || x1.shape() != shape.as_slice() || mask.shape() != shape.as_slice()
    {
        return Err(Error::Shape("fm_loss operands must share the prediction shape".into()));
    }
    let count = mask.data().iter().filter(|&&m| m != E::ZERO).count();
    if count == 0 {
        return Err(Error::Data("fm_loss mask selects no elements".into()));
    }
    let mut target = Tensor::zeros(&shape);
    for ((t, &a), &b) in target.data_mut().iter_mut().zip(x0.data()).zip(x1.data()) {
        *t = b - a;
    }
    let diff = tape.sub(pred, tape.constant(target));
    let masked = tape.mul(diff, tape.constant(mask.clone()));
    let sq = tape.mul(masked, masked);
    Ok(tape.scale(tape.sum_all(sq), E::ONE / E::from_f64(count as f64)))
}

// ---- paradigm sampling and condition dropping ----

pub fn sample_paradigm(rng: &mut ChaCha8Rng, probs: &[f64; 3]) -> TaskMode {
    let u = uniform_f64(rng);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return TaskMode::ALL[i];
        }
    }
    TaskMode::VideoToMotion
}

/// Which conditions are dropped for one training example.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConditionDrops {
    pub text: bool,
    pub motion: bool,
    pub video: bool,
}

/// Paradigm-specific dropping: joint drops text only; motion-to-video drops
/// text and the motion condition independently; video-to-motion always
/// drops text and drops the video condition randomly.
pub fn drop_conditions(rng: &mut ChaCha8Rng, mode: TaskMode, plan: &TrainPlan) -> ConditionDrops {
    match mode {
        TaskMode::Joint => ConditionDrops {
            text: uniform_f64(rng) < plan.p_text,
            motion: false,
            video: false,
        },
        TaskMode::MotionToVideo => ConditionDrops {
            text: uniform_f64(rng) < plan.p_text,
            motion: uniform_f64(rng) < plan.p_motion,
            video: false,
        },
        TaskMode::VideoToMotion => ConditionDrops {
            text: true,
            motion: false,
            video: uniform_f64(rng) < plan.p_video,
        },
    }
}

// ---- per-example input construction ----

/// Everything the model sees for one phase-2 example, derived statelessly
/// from (seed, step, dataset index).
pub struct Phase2Inputs<E: Scalar> {
    pub paradigm: TaskMode,
    pub drops: ConditionDrops,
    pub t: f64,
    /// (input, noise) for the video modality; noise present iff generated.
    pub video_in: Option<Tensor<E>>,
    pub video_noise: Option<Tensor<E>>,
    pub motion_in: Option<MotionGroups<E>>,
    pub motion_noise: Option<MotionGroups<E>>,
    pub text: Option<Vec<u16>>,
}

fn randn_like<E: Scalar>(shape: &[usize], rng: ChaCha8Rng) -> Tensor<E> {
    let mut t = Tensor::zeros(shape);
    NormalSource::new(rng).fill(t.data_mut());
    t
}

/// Unit-Gaussian motion groups matching the shapes of `like`.
pub fn randn_groups_like<E: Scalar>(like: &MotionGroups<E>, rng: ChaCha8Rng) -> MotionGroups<E> {
    let mut src = NormalSource::new(rng);
    let mut draw = |shape: &[usize]| {
        let mut t = Tensor::zeros(shape);
        src.fill(t.data_mut());
        t
    };
    MotionGroups {
        pos: draw(like.pos.shape()),
        rot: draw(like.rot.shape()),
        shape: draw(like.shape.shape()),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn phase2_example_inputs<E: Scalar>(
    plan: &TrainPlan,
    step: usize,
    index: u64,
    clean_video: &Tensor<E>,
    clean_motion: &MotionGroups<E>,
    caption: &[u16],
) -> Phase2Inputs<E> {
    let tags = |what: &str| {
        stream(plan.seed, &[tag("phase2"), step as u64, index, tag(what)])
    };
    let paradigm = match plan.force_paradigm {
        Some(p) => p,
        None => sample_paradigm(&mut tags("paradigm"), &plan.paradigm_probs),
    };
    let drops = drop_conditions(&mut tags("drop"), paradigm, plan);
    let t = if plan.noise_side_time {
        sample_train_timestep_noise_side(&mut tags("t"), plan.shift)
    } else {
        sample_train_timestep(&mut tags("t"), plan.shift)
    };

    let mut inputs = Phase2Inputs {
        paradigm,
        drops,
        t,
        video_in: None,
        video_noise: None,
        motion_in: None,
        motion_noise: None,
        text: if drops.text { None } else { Some(caption.to_vec()) },
    };
    match paradigm {
        TaskMode::Joint => {
            let nv = randn_like(clean_video.shape(), tags("video-noise"));
            inputs.video_in = Some(interpolate(&nv, clean_video, t).unwrap());
            inputs.video_noise = Some(nv);
            let nm = randn_groups_like(clean_motion, tags("motion-noise"));
            inputs.motion_in = Some(interpolate_groups(&nm, clean_motion, t).unwrap());
            inputs.motion_noise = Some(nm);
        }
        TaskMode::MotionToVideo => {
            let nv = randn_like(clean_video.shape(), tags("video-noise"));
            inputs.video_in = Some(interpolate(&nv, clean_video, t).unwrap());
            inputs.video_noise = Some(nv);
            if !drops.motion {
                // Condition kept clean: no noise injection.
                inputs.motion_in = Some(clean_motion.clone());
            }
        }
        TaskMode::VideoToMotion => {
            let nm = randn_groups_like(clean_motion, tags("motion-noise"));
            inputs.motion_in = Some(interpolate_groups(&nm, clean_motion, t).unwrap());
            inputs.motion_noise = Some(nm);
            if !drops.video {
                inputs.video_in = Some(clean_video.clone());
            }
        }
    }
    inputs
}

// ---- trainer ----

/// One metrics row; the CSV schema is step,phase,paradigm,loss,wall_ms.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: usize,
    pub phase: u32,
    pub paradigm: String,
    pub loss: f64,
    pub wall_ms: f64,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str = "step,phase,paradigm,loss,wall_ms";

    pub fn to_csv_row(&self) -> String {
        format!("{},{},{},{:.9e},{:.3}", self.step, self.phase, self.paradigm, self.loss, self.wall_ms)
    }

    /// The row without its timing column, for determinism comparisons.
    pub fn deterministic_part(&self) -> String {
        format!("{},{},{},{:.9e}", self.step, self.phase, self.paradigm, self.loss)
    }
}

pub struct Trainer<E: Scalar> {
    pub model: Model<E>,
    pub opt: AdamW<E>,
    pub plan: TrainPlan,
    /// Highest fully completed phase (0 = fresh).
    pub completed_phase: u32,
}

impl<E: Scalar> Trainer<E> {
    pub fn new(model: Model<E>, opt_cfg: AdamWConfig, plan: TrainPlan) -> Result<Self> {
        plan.validate()?;
        Ok(Self { model, opt: AdamW::new(opt_cfg), plan, completed_phase: 0 })
    }

    fn batch_indices(&self, phase: u32, step: usize, n: usize) -> Vec<u64> {
        let mut rng = stream(self.plan.seed, &[tag("batch"), phase as u64, step as u64]);
        let mut idx: Vec<u64> =
            (0..self.plan.batch_size).map(|_| uniform_usize(&mut rng, n) as u64).collect();
        // Fixed accumulation order makes the loss independent of batch
        // permutation.
        idx.sort_unstable();
        idx
    }

    /// One motion-only step: the video branch receives no inputs and no
    /// updates. Returns the batch-mean loss.
    pub fn phase1_step(&mut self, records: &[DatasetRecord], step: usize) -> Result<StepRecord> {
        let start = Instant::now();
        let indices = self.batch_indices(1, step, records.len());
        let mut grad_acc: Vec<(ParamId, Tensor<E>)> = Vec::new();
        let mut loss_acc = 0.0;
        for &index in &indices {
            let record = &records[index as usize];
            let clean: MotionGroups<E> =
                self.model.stats.normalize(&clip_to_groups(&record.motion));
            let tags = |what: &str| {
                stream(self.plan.seed, &[tag("phase1"), step as u64, index, tag(what)])
            };
            let t = if self.plan.noise_side_time {
                sample_train_timestep_noise_side(&mut tags("t"), self.plan.shift)
            } else {
                sample_train_timestep(&mut tags("t"), self.plan.shift)
            };
            let noise = randn_groups_like(&clean, tags("motion-noise"));
            let noisy = interpolate_groups(&noise, &clean, t)?;
            let text = if uniform_f64(&mut tags("drop")) < self.plan.p_text {
                None
            } else {
                Some(record.caption.clone())
            };

            let tape = Tape::new();
            let lease = self.model.lease(&tape, |name| !crate::model::is_video_branch(name));
            let out = self.model.forward(
                &tape,
                &lease,
                &ForwardInput {
                    video: None,
                    motion: Some(&noisy),
                    text: text.as_deref(),
                    t,
                    task: TaskMode::Joint,
                },
            )?;
            let pred = out.motion_velocity.ok_or_else(|| {
                Error::Data("phase-1 forward produced no motion prediction".into())
            })?;
            let loss = motion_group_loss(&tape, &pred, &noise, &clean)?;
            loss_acc += tape.item(loss).to_f64();
            let grads = tape.backward(loss)?;
            accumulate_grads(&self.model, &grads, &mut grad_acc);
        }
        self.finish_step(&mut grad_acc, indices.len())?;
        Ok(StepRecord {
            step,
            phase: 1,
            paradigm: "motion".into(),
            loss: loss_acc / indices.len() as f64,
            wall_ms: start.elapsed().as_secs_f64() * 1000.0,
        })
    }

    /// One multi-task step on paired data.
    pub fn phase2_step(&mut self, records: &[DatasetRecord], step: usize) -> Result<StepRecord> {
        let start = Instant::now();
        let indices = self.batch_indices(2, step, records.len());
        let stride = self.model.cfg.stride;
        let mut grad_acc: Vec<(ParamId, Tensor<E>)> = Vec::new();
        let mut loss_acc = 0.0;
        let mut paradigm_label = String::new();
        for &index in &indices {
            let record = &records[index as usize];
            if record.motion.frames.len() != self.model.cfg.frames {
                return Err(Error::Data(format!(
                    "record {} frame count {} != configured {}",
                    index,
                    record.motion.frames.len(),
                    self.model.cfg.frames
                )));
            }
            let clean_video: Tensor<E> = patchify(&record.video, stride)?;
            let clean_motion: MotionGroups<E> =
                self.model.stats.normalize(&clip_to_groups(&record.motion));
            let inputs = phase2_example_inputs(
                &self.plan,
                step,
                index,
                &clean_video,
                &clean_motion,
                &record.caption,
            );
            if !paradigm_label.is_empty() {
                paradigm_label.push('+');
            }
            paradigm_label.push_str(inputs.paradigm.label());

            let tape = Tape::new();
            let lease = self.model.lease(&tape, |_| true);
            let out = self.model.forward(
                &tape,
                &lease,
                &ForwardInput {
                    video: inputs.video_in.as_ref(),
                    motion: inputs.motion_in.as_ref(),
                    text: inputs.text.as_deref(),
                    t: inputs.t,
                    task: inputs.paradigm,
                },
            )?;

            // Loss over generated modalities only, pooled across elements.
            let mut sq_terms: Vec<(NodeId, f64)> = Vec::new();
            let mut total_elems = 0usize;
            if let Some(nv) = &inputs.video_noise {
                let pred = out
                    .video_velocity
                    .ok_or_else(|| Error::Data("missing video prediction".into()))?;
                sq_terms.push((sq_err_sum(&tape, pred, nv, &clean_video), 1.0));
                total_elems += clean_video.numel();
            }
            if let Some(nm) = &inputs.motion_noise {
                let pred = out
                    .motion_velocity
                    .ok_or_else(|| Error::Data("missing motion prediction".into()))?;
                for (p, n, c) in [
                    (pred.pos, &nm.pos, &clean_motion.pos),
                    (pred.rot, &nm.rot, &clean_motion.rot),
                    (pred.shape, &nm.shape, &clean_motion.shape),
                ] {
                    sq_terms.push((sq_err_sum(&tape, p, n, c), self.plan.lambda_motion));
                }
                total_elems += clean_motion.numel();
            }
            let mut loss = None;
            for (term, weight) in sq_terms {
                let scaled = tape.scale(term, E::from_f64(weight / total_elems as f64));
                loss = Some(match loss {
                    None => scaled,
                    Some(acc) => tape.add(acc, scaled),
                });
            }
            let loss = loss.ok_or_else(|| Error::Data("no generated modality in step".into()))?;
            loss_acc += tape.item(loss).to_f64();
            let grads = tape.backward(loss)?;
            accumulate_grads(&self.model, &grads, &mut grad_acc);
        }
        self.finish_step(&mut grad_acc, indices.len())?;
        Ok(StepRecord {
            step,
            phase: 2,
            paradigm: paradigm_label,
            loss: loss_acc / indices.len() as f64,
            wall_ms: start.elapsed().as_secs_f64() * 1000.0,
        })
    }

    fn finish_step(&mut self, grad_acc: &mut Vec<(ParamId, Tensor<E>)>, batch: usize) -> Result<()> {
        let inv = E::from_f64(1.0 / batch as f64);
        for (_, g) in grad_acc.iter_mut() {
            for v in g.data_mut() {
                *v *= inv;
            }
        }
        if let Some(limit) = self.plan.grad_clip {
            let mut norm2 = 0.0f64;
            for (_, g) in grad_acc.iter() {
                for v in g.data() {
                    norm2 += v.to_f64() * v.to_f64();
                }
            }
            let norm = norm2.sqrt();
            if norm > limit {
                let scale = E::from_f64(limit / norm);
                for (_, g) in grad_acc.iter_mut() {
                    for v in g.data_mut() {
                        *v *= scale;
                    }
                }
            }
        }
        self.opt.step(&mut self.model.params, grad_acc)
    }
}

/// Sum of squared velocity errors for one tensor: sum((pred - (x1-x0))^2).
fn sq_err_sum<E: Scalar>(tape: &Tape<E>, pred: NodeId, x0: &Tensor<E>, x1: &Tensor<E>) -> NodeId {
    let mut target = Tensor::zeros(x0.shape());
    for ((t, &a), &b) in target.data_mut().iter_mut().zip(x0.data()).zip(x1.data()) {
        *t = b - a;
    }
    let diff = tape.sub(pred, tape.constant(target));
    tape.sum_all(tape.mul(diff, diff))
}

/// Pooled mean over the three motion groups.
fn motion_group_loss<E: Scalar>(
    tape: &Tape<E>,
    pred: &crate::motion::GroupNodes,
    noise: &MotionGroups<E>,
    clean: &MotionGroups<E>,
) -> Result<NodeId> {
    let total = clean.numel();
    let parts = [
        (pred.pos, &noise.pos, &clean.pos),
        (pred.rot, &noise.rot, &clean.rot),
        (pred.shape, &noise.shape, &clean.shape),
    ];
    let mut loss = None;
    for (p, n, c) in parts {
        let term = sq_err_sum(tape, p, n, c);
        let scaled = tape.scale(term, E::from_f64(1.0 / total as f64));
        loss = Some(match loss {
            None => scaled,
            Some(acc) => tape.add(acc, scaled),
        });
    }
    Ok(loss.unwrap())
}

fn accumulate_grads<E: Scalar>(
    model: &Model<E>,
    grads: &crate::tape::Gradients<E>,
    acc: &mut Vec<(ParamId, Tensor<E>)>,
) {
    if acc.is_empty() {
        for (id, _, tensor) in model.params.iter() {
            if grads.contains(id) {
                acc.push((id, grads.get(id, tensor.shape())));
            }
        }
        return;
    }
    for (id, g) in acc.iter_mut() {
        if grads.contains(*id) {
            let newg = grads.get(*id, g.shape());
            for (a, &v) in g.data_mut().iter_mut().zip(newg.data()) {
                *a += v;
            }
        }
    }
    // Parameters that first appear in a later example of the batch.
    for (id, _, tensor) in model.params.iter() {
        if grads.contains(id) && !acc.iter().any(|(a, _)| *a == id) {
            acc.push((id, grads.get(id, tensor.shape())));
        }
    }
}

/// Convenience: config-driven trainer on a fresh model.
pub fn fresh_trainer<E: Scalar>(
    cfg: &ModelConfig,
    opt_cfg: AdamWConfig,
    plan: TrainPlan,
    records: &[DatasetRecord],
) -> Result<Trainer<E>> {
    let mut model = Model::init(cfg, plan.seed)?;
    model.stats = crate::motion::NormStats::from_clips(records.iter().map(|r| &r.motion));
    Trainer::new(model, opt_cfg, plan)
}
