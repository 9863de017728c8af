//! Guided Euler sampling over the learned flow.
//!
//! The schedule maps a uniform grid through the same shift used in
//! training; integration runs noise (t=0) to data (t=1). Each paradigm has
//! its own guidance rule over a fixed set of model evaluations per step:
//! joint generation blends conditional/unconditional text (2 evaluations),
//! motion-to-video adds a motion-guidance term (3), video-to-motion guides
//! with the video condition only (2). Condition payloads are encoded once
//! and fed unchanged to every step.

use crate::error::{Error, Result};
use crate::model::{ForwardInput, Model, Prediction, TaskMode};
use crate::motion::{clip_to_groups, groups_to_clip, MotionClip, MotionGroups};
use crate::rng::{stream, tag, NormalSource};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::shift_time;
use crate::video::{patchify, unpatchify, VideoClip};

#[derive(Clone, Debug)]
pub struct SampleSpec {
    pub mode: TaskMode,
    pub steps: usize,
    pub shift: f64,
    /// Text guidance scale.
    pub omega1: f64,
    /// Motion/video guidance scale.
    pub omega2: f64,
    pub seed: u64,
    pub text: Option<Vec<u16>>,
    pub cond_motion: Option<MotionClip>,
    pub cond_video: Option<VideoClip>,
}

impl SampleSpec {
    pub fn new(mode: TaskMode) -> Self {
        Self {
            mode,
            steps: 50,
            shift: 8.0,
            omega1: 6.0,
            omega2: 1.5,
            seed: 0,
            text: None,
            cond_motion: None,
            cond_video: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Sampling("steps must be >= 1".into()));
        }
        if self.shift < 1.0 {
            return Err(Error::Sampling(format!("shift {} must be >= 1", self.shift)));
        }
        if self.omega1 < 0.0 || self.omega2 < 0.0 {
            return Err(Error::Sampling("guidance scales must be non-negative".into()));
        }
        match self.mode {
            TaskMode::Joint => {}
            TaskMode::MotionToVideo => {
                if self.cond_motion.is_none() {
                    return Err(Error::Sampling(
                        "motion-to-video sampling needs a motion condition".into(),
                    ));
                }
            }
            TaskMode::VideoToMotion => {
                if self.cond_video.is_none() {
                    return Err(Error::Sampling(
                        "video-to-motion sampling needs a video condition".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Strictly increasing schedule 0 = t_0 < ... < t_steps = 1: the uniform
/// grid u_i = i/steps mapped through the timestep shift.
pub fn make_schedule(steps: usize, shift: f64) -> Vec<f64> {
    (0..=steps).map(|i| shift_time(i as f64 / steps as f64, shift)).collect()
}

/// x' = x + (t_next - t_now) * v.
pub fn euler_step<E: Scalar>(x: &Tensor<E>, v: &Tensor<E>, t_now: f64, t_next: f64) -> Tensor<E> {
    assert!(t_next > t_now, "euler_step needs increasing time");
    let dt = E::from_f64(t_next - t_now);
    let mut out = x.clone();
    for (o, &vv) in out.data_mut().iter_mut().zip(v.data()) {
        *o = vv.mul_add(dt, *o);
    }
    out
}

// ---- guidance rules ----

/// u_null + w1 (u_cond - u_null); collapses to u_cond at w1 = 1.
pub fn guide_joint<E: Scalar>(u_cond: &Tensor<E>, u_null: &Tensor<E>, omega1: f64) -> Tensor<E> {
    assert_eq!(u_cond.shape(), u_null.shape(), "guidance shape mismatch");
    let w = E::from_f64(omega1);
    let mut out = Tensor::zeros(u_cond.shape());
    for ((o, &c), &n) in out.data_mut().iter_mut().zip(u_cond.data()).zip(u_null.data()) {
        *o = n + w * (c - n);
    }
    out
}

/// u_00 + w1 (u_my - u_m0) + w2 (u_m0 - u_00): text guidance around the
/// motion-conditioned point plus motion guidance around the unconditional.
pub fn guide_m2v<E: Scalar>(
    u_00: &Tensor<E>,
    u_my: &Tensor<E>,
    u_m0: &Tensor<E>,
    omega1: f64,
    omega2: f64,
) -> Tensor<E> {
    assert!(
        u_00.shape() == u_my.shape() && u_00.shape() == u_m0.shape(),
        "guidance shape mismatch"
    );
    let w1 = E::from_f64(omega1);
    let w2 = E::from_f64(omega2);
    let mut out = Tensor::zeros(u_00.shape());
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let base = u_00.data()[i];
        let my = u_my.data()[i];
        let m0 = u_m0.data()[i];
        *o = base + w1 * (my - m0) + w2 * (m0 - base);
    }
    out
}

/// u_0m + w2 (u_xm - u_0m); text never participates in this mode.
pub fn guide_v2m<E: Scalar>(u_0m: &Tensor<E>, u_xm: &Tensor<E>, omega2: f64) -> Tensor<E> {
    assert_eq!(u_0m.shape(), u_xm.shape(), "guidance shape mismatch");
    let w = E::from_f64(omega2);
    let mut out = Tensor::zeros(u_0m.shape());
    for ((o, &b), &x) in out.data_mut().iter_mut().zip(u_0m.data()).zip(u_xm.data()) {
        *o = b + w * (x - b);
    }
    out
}

fn guide_groups<E: Scalar>(
    f: impl Fn(&Tensor<E>, &Tensor<E>) -> Tensor<E>,
    a: &MotionGroups<E>,
    b: &MotionGroups<E>,
) -> MotionGroups<E> {
    MotionGroups { pos: f(&a.pos, &b.pos), rot: f(&a.rot, &b.rot), shape: f(&a.shape, &b.shape) }
}

// ---- the model abstraction the sampler drives ----

/// A velocity field the sampler can query; the real model implements it,
/// tests drive the sampler with instrumented stubs.
pub trait VelocityModel<E: Scalar> {
    fn velocity(&self, input: &ForwardInput<E>) -> Result<Prediction<E>>;
}

impl<E: Scalar> VelocityModel<E> for Model<E> {
    fn velocity(&self, input: &ForwardInput<E>) -> Result<Prediction<E>> {
        self.predict(input)
    }
}

/// Everything the sampler needs besides the velocity field itself.
pub struct SampleContext {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps: u32,
    pub stride: usize,
    pub stats: crate::motion::NormStats,
}

impl SampleContext {
    pub fn of_model<E: Scalar>(model: &Model<E>) -> Self {
        Self {
            frames: model.cfg.frames,
            height: model.cfg.height,
            width: model.cfg.width,
            fps: model.cfg.fps,
            stride: model.cfg.stride,
            stats: model.stats.clone(),
        }
    }
}

pub struct SampleOutput {
    pub video: Option<VideoClip>,
    pub motion: Option<MotionClip>,
    /// Model evaluations per sampler step (2 joint, 3 m2v, 2 v2m).
    pub evals_per_step: usize,
}

fn noise_video<E: Scalar>(ctx: &SampleContext, seed: u64) -> Result<Tensor<E>> {
    let geo = crate::video::LatentGeometry::of(ctx.frames, ctx.height, ctx.width, ctx.stride)?;
    let mut t = Tensor::zeros(&[geo.tokens(), geo.patch_dim()]);
    NormalSource::new(stream(seed, &[tag("video-noise")])).fill(t.data_mut());
    Ok(t)
}

fn noise_motion<E: Scalar>(ctx: &SampleContext, seed: u64) -> MotionGroups<E> {
    let f = ctx.frames;
    let mut src = NormalSource::new(stream(seed, &[tag("motion-noise")]));
    let mut draw = |shape: &[usize]| {
        let mut t = Tensor::zeros(shape);
        src.fill(t.data_mut());
        t
    };
    MotionGroups {
        pos: draw(&[f * crate::motion::POSITION_TOKENS, 3]),
        rot: draw(&[f * crate::motion::ROTATION_TOKENS, 6]),
        shape: draw(&[f, 10]),
    }
}

/// Run the guided sampler. Deterministic given (seed, weights, spec).
pub fn generate<E: Scalar, M: VelocityModel<E>>(
    model: &M,
    ctx: &SampleContext,
    spec: &SampleSpec,
) -> Result<SampleOutput> {
    spec.validate()?;
    let schedule = make_schedule(spec.steps, spec.shift);
    let text = spec.text.as_deref();

    // Condition payloads are encoded once; the tensors are reused by every
    // step untouched.
    let cond_motion: Option<MotionGroups<E>> = match &spec.cond_motion {
        Some(clip) => {
            clip.validate()?;
            if clip.frames.len() != ctx.frames {
                return Err(Error::Sampling(format!(
                    "motion condition has {} frames, expected {}",
                    clip.frames.len(),
                    ctx.frames
                )));
            }
            Some(ctx.stats.normalize(&clip_to_groups(clip)))
        }
        None => None,
    };
    let cond_video: Option<Tensor<E>> = match &spec.cond_video {
        Some(clip) => {
            if clip.frames() != ctx.frames || clip.height != ctx.height || clip.width != ctx.width {
                return Err(Error::Sampling("video condition geometry mismatch".into()));
            }
            Some(patchify(clip, ctx.stride)?)
        }
        None => None,
    };

    match spec.mode {
        TaskMode::Joint => {
            let mut x = noise_video::<E>(ctx, spec.seed)?;
            let mut m = noise_motion::<E>(ctx, spec.seed);
            for i in 0..spec.steps {
                let (t_now, t_next) = (schedule[i], schedule[i + 1]);
                let cond = model.velocity(&ForwardInput {
                    video: Some(&x),
                    motion: Some(&m),
                    text,
                    t: t_now,
                    task: TaskMode::Joint,
                })?;
                let null = model.velocity(&ForwardInput {
                    video: Some(&x),
                    motion: Some(&m),
                    text: None,
                    t: t_now,
                    task: TaskMode::Joint,
                })?;
                let vid = guide_joint(
                    &require(cond.video_velocity, "video")?,
                    &require(null.video_velocity, "video")?,
                    spec.omega1,
                );
                let mot = guide_groups(
                    |a, b| guide_joint(a, b, spec.omega1),
                    &require(cond.motion_velocity, "motion")?,
                    &require(null.motion_velocity, "motion")?,
                );
                x = euler_step(&x, &vid, t_now, t_next);
                m = MotionGroups {
                    pos: euler_step(&m.pos, &mot.pos, t_now, t_next),
                    rot: euler_step(&m.rot, &mot.rot, t_now, t_next),
                    shape: euler_step(&m.shape, &mot.shape, t_now, t_next),
                };
            }
            Ok(SampleOutput {
                video: Some(decode_video(ctx, &x)?),
                motion: Some(decode_motion(ctx, &m)),
                evals_per_step: 2,
            })
        }
        TaskMode::MotionToVideo => {
            let mcond = cond_motion.as_ref().expect("validated above");
            let mut x = noise_video::<E>(ctx, spec.seed)?;
            for i in 0..spec.steps {
                let (t_now, t_next) = (schedule[i], schedule[i + 1]);
                let u_my = model.velocity(&ForwardInput {
                    video: Some(&x),
                    motion: Some(mcond),
                    text,
                    t: t_now,
                    task: TaskMode::MotionToVideo,
                })?;
                let u_m0 = model.velocity(&ForwardInput {
                    video: Some(&x),
                    motion: Some(mcond),
                    text: None,
                    t: t_now,
                    task: TaskMode::MotionToVideo,
                })?;
                let u_00 = model.velocity(&ForwardInput {
                    video: Some(&x),
                    motion: None,
                    text: None,
                    t: t_now,
                    task: TaskMode::MotionToVideo,
                })?;
                let vid = guide_m2v(
                    &require(u_00.video_velocity, "video")?,
                    &require(u_my.video_velocity, "video")?,
                    &require(u_m0.video_velocity, "video")?,
                    spec.omega1,
                    spec.omega2,
                );
                x = euler_step(&x, &vid, t_now, t_next);
            }
            Ok(SampleOutput {
                video: Some(decode_video(ctx, &x)?),
                motion: None,
                evals_per_step: 3,
            })
        }
        TaskMode::VideoToMotion => {
            let vcond = cond_video.as_ref().expect("validated above");
            let mut m = noise_motion::<E>(ctx, spec.seed);
            for i in 0..spec.steps {
                let (t_now, t_next) = (schedule[i], schedule[i + 1]);
                let u_xm = model.velocity(&ForwardInput {
                    video: Some(vcond),
                    motion: Some(&m),
                    text: None,
                    t: t_now,
                    task: TaskMode::VideoToMotion,
                })?;
                let u_0m = model.velocity(&ForwardInput {
                    video: None,
                    motion: Some(&m),
                    text: None,
                    t: t_now,
                    task: TaskMode::VideoToMotion,
                })?;
                let mot = guide_groups(
                    |a, b| guide_v2m(a, b, spec.omega2),
                    &require(u_0m.motion_velocity, "motion")?,
                    &require(u_xm.motion_velocity, "motion")?,
                );
                m = MotionGroups {
                    pos: euler_step(&m.pos, &mot.pos, t_now, t_next),
                    rot: euler_step(&m.rot, &mot.rot, t_now, t_next),
                    shape: euler_step(&m.shape, &mot.shape, t_now, t_next),
                };
            }
            Ok(SampleOutput {
                video: None,
                motion: Some(decode_motion(ctx, &m)),
                evals_per_step: 2,
            })
        }
    }
}

fn require<T>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Sampling(format!("model returned no {what} prediction")))
}

fn decode_video<E: Scalar>(ctx: &SampleContext, x: &Tensor<E>) -> Result<VideoClip> {
    unpatchify(x, ctx.frames, ctx.height, ctx.width, ctx.stride, ctx.fps)
}

fn decode_motion<E: Scalar>(ctx: &SampleContext, m: &MotionGroups<E>) -> MotionClip {
    groups_to_clip(&ctx.stats.denormalize(m), ctx.fps)
}

/// Note: `guide_v2m`'s unconditional base is the video-dropped point
/// u(0, m, 0); a text-guided variant is deliberately not offered because
/// the paradigm trains with text always dropped.
#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::uniform_f64;
    use std::cell::Cell;

    fn randt(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = stream(seed, &[tag("sampling-tests")]);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| uniform_f64(&mut rng) * 2.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn schedule_shapes() {
        let s = make_schedule(4, 1.0);
        let want = [0.0, 0.25, 0.5, 0.75, 1.0];
        for (a, b) in s.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
        for (steps, shift) in [(1usize, 8.0), (50, 8.0), (7, 3.0)] {
            let s = make_schedule(steps, shift);
            assert_eq!(s.len(), steps + 1);
            assert_eq!(s[0], 0.0);
            assert!((s[steps] - 1.0).abs() < 1e-15);
            for w in s.windows(2) {
                assert!(w[1] > w[0]);
            }
        }
        // shift 8, steps 2: midpoint 8*.5/4.5
        let s = make_schedule(2, 8.0);
        assert!((s[1] - 8.0 * 0.5 / 4.5).abs() < 1e-15);
    }

    #[test]
    fn euler_zero_velocity_keeps_state() {
        let x = randt(&[3, 4], 1);
        let v = Tensor::zeros(&[3, 4]);
        assert_eq!(euler_step(&x, &v, 0.2, 0.7), x);
    }

    #[test]
    fn euler_exact_on_constant_velocity() {
        // v = x1 - x0 integrates exactly along the full schedule.
        let x0 = randt(&[4, 5], 2);
        let x1 = randt(&[4, 5], 3);
        let mut v = Tensor::zeros(&[4, 5]);
        for ((o, &a), &b) in v.data_mut().iter_mut().zip(x0.data()).zip(x1.data()) {
            *o = b - a;
        }
        let sched = make_schedule(50, 8.0);
        let mut x = x0.clone();
        for i in 0..50 {
            x = euler_step(&x, &v, sched[i], sched[i + 1]);
        }
        assert!(x.max_abs_diff(&x1) < 1e-12);
    }

    #[test]
    fn euler_tracks_contracting_oracle_field() {
        // v(x, t) = (x1 - x)/(1 - t): the flow from any x0 to x1. The last
        // step has dt = 1 - t_now exactly, so Euler lands on x1.
        let x0 = randt(&[6, 3], 4);
        let x1 = randt(&[6, 3], 5);
        let sched = make_schedule(50, 8.0);
        let mut x = x0.clone();
        for i in 0..50 {
            let t = sched[i];
            let mut v = Tensor::zeros(&[6, 3]);
            for ((o, &cur), &target) in v.data_mut().iter_mut().zip(x.data()).zip(x1.data()) {
                *o = (target - cur) / (1.0 - t);
            }
            x = euler_step(&x, &v, sched[i], sched[i + 1]);
        }
        let mut rms = 0.0;
        for (a, b) in x.data().iter().zip(x1.data()) {
            rms += (a - b) * (a - b);
        }
        rms = (rms / x.numel() as f64).sqrt();
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn guidance_collapses_at_unit_scale() {
        let a = randt(&[2, 3], 6);
        let b = randt(&[2, 3], 7);
        let c = randt(&[2, 3], 8);
        assert_eq!(guide_joint(&a, &b, 1.0), a);
        assert_eq!(guide_joint(&a, &b, 0.0), b);
        assert_eq!(guide_v2m(&a, &b, 1.0), b);
        assert_eq!(guide_v2m(&a, &b, 0.0), a);
        // m2v telescopes to u_my at w1 = w2 = 1.
        let g = guide_m2v(&a, &b, &c, 1.0, 1.0);
        assert!(g.max_abs_diff(&b) < 1e-15);
        let g = guide_m2v(&a, &b, &c, 0.0, 0.0);
        assert_eq!(g, a);
    }

    #[test]
    fn guidance_stub_arithmetic() {
        let one = |v: f64| Tensor::<f64>::full(&[1], v);
        // joint: 1 + 6*(2-1) = 7
        assert_eq!(guide_joint(&one(2.0), &one(1.0), 6.0).item(), 7.0);
        // m2v: 0 + 2*(3-2) + 1*(2-0) = 4
        assert_eq!(guide_m2v(&one(0.0), &one(3.0), &one(2.0), 2.0, 1.0).item(), 4.0);
        // v2m: 1 + 2*(5-1) = 9
        assert_eq!(guide_v2m(&one(1.0), &one(5.0), 2.0).item(), 9.0);
    }

    #[test]
    fn m2v_guidance_asymmetric_in_scales() {
        let a = randt(&[2, 2], 9);
        let b = randt(&[2, 2], 10);
        let c = randt(&[2, 2], 11);
        let g12 = guide_m2v(&a, &b, &c, 2.0, 0.5);
        let g21 = guide_m2v(&a, &b, &c, 0.5, 2.0);
        assert!(g12.max_abs_diff(&g21) > 1e-9);
    }

    /// Instrumented stub: constant per-modality velocities, counts calls,
    /// and records the motion/video inputs it saw.
    struct StubModel {
        calls: Cell<usize>,
        motion_inputs: std::cell::RefCell<Vec<Option<MotionGroups<f64>>>>,
        video_inputs: std::cell::RefCell<Vec<Option<Tensor<f64>>>>,
    }

    impl StubModel {
        fn new() -> Self {
            Self {
                calls: Cell::new(0),
                motion_inputs: Default::default(),
                video_inputs: Default::default(),
            }
        }
    }

    impl VelocityModel<f64> for StubModel {
        fn velocity(&self, input: &ForwardInput<f64>) -> Result<Prediction<f64>> {
            self.calls.set(self.calls.get() + 1);
            self.motion_inputs.borrow_mut().push(input.motion.cloned());
            self.video_inputs.borrow_mut().push(input.video.cloned());
            Ok(Prediction {
                video_velocity: input.video.map(|v| Tensor::full(v.shape(), 0.25)),
                motion_velocity: input.motion.map(|m| MotionGroups {
                    pos: Tensor::full(m.pos.shape(), -0.5),
                    rot: Tensor::full(m.rot.shape(), 0.125),
                    shape: Tensor::full(m.shape.shape(), 1.0),
                }),
            })
        }
    }

    fn toy_ctx() -> SampleContext {
        SampleContext {
            frames: 5,
            height: 8,
            width: 8,
            fps: 16,
            stride: 4,
            stats: crate::motion::NormStats::identity(),
        }
    }

    fn cond_motion_clip(ctx: &SampleContext) -> MotionClip {
        crate::data::gen_motion_clip(crate::data::MotionKind::Wave, 3, ctx.frames, ctx.fps).unwrap()
    }

    fn cond_video_clip(ctx: &SampleContext) -> VideoClip {
        let clip = cond_motion_clip(ctx);
        crate::data::render_clip(&clip, 3, ctx.height, ctx.width).unwrap()
    }

    #[test]
    fn per_step_model_call_counts() {
        let ctx = toy_ctx();
        let steps = 7;

        let stub = StubModel::new();
        let mut spec = SampleSpec::new(TaskMode::Joint);
        spec.steps = steps;
        generate(&stub, &ctx, &spec).unwrap();
        assert_eq!(stub.calls.get(), 2 * steps);

        let stub = StubModel::new();
        let mut spec = SampleSpec::new(TaskMode::MotionToVideo);
        spec.steps = steps;
        spec.cond_motion = Some(cond_motion_clip(&ctx));
        generate(&stub, &ctx, &spec).unwrap();
        assert_eq!(stub.calls.get(), 3 * steps);

        let stub = StubModel::new();
        let mut spec = SampleSpec::new(TaskMode::VideoToMotion);
        spec.steps = steps;
        spec.cond_video = Some(cond_video_clip(&ctx));
        generate(&stub, &ctx, &spec).unwrap();
        assert_eq!(stub.calls.get(), 2 * steps);
    }

    #[test]
    fn condition_payload_bit_identical_across_steps() {
        let ctx = toy_ctx();
        let stub = StubModel::new();
        let mut spec = SampleSpec::new(TaskMode::MotionToVideo);
        spec.steps = 5;
        spec.cond_motion = Some(cond_motion_clip(&ctx));
        generate(&stub, &ctx, &spec).unwrap();
        let inputs = stub.motion_inputs.borrow();
        // Calls 1 and 2 of each step carry the clean condition; call 3 has
        // motion dropped.
        let reference = inputs[0].as_ref().unwrap();
        for step in 0..5 {
            assert_eq!(inputs[3 * step].as_ref().unwrap(), reference);
            assert_eq!(inputs[3 * step + 1].as_ref().unwrap(), reference);
            assert!(inputs[3 * step + 2].is_none());
        }

        // v2m: the video payload is identical at every step.
        let stub = StubModel::new();
        let mut spec = SampleSpec::new(TaskMode::VideoToMotion);
        spec.steps = 4;
        spec.cond_video = Some(cond_video_clip(&ctx));
        generate(&stub, &ctx, &spec).unwrap();
        let vids = stub.video_inputs.borrow();
        let reference = vids[0].as_ref().unwrap();
        for step in 0..4 {
            assert_eq!(vids[2 * step].as_ref().unwrap(), reference);
            assert!(vids[2 * step + 1].is_none());
        }
    }

    #[test]
    fn missing_condition_payload_is_an_error() {
        let ctx = toy_ctx();
        let stub = StubModel::new();
        assert!(generate(&stub, &ctx, &SampleSpec::new(TaskMode::MotionToVideo)).is_err());
        assert!(generate(&stub, &ctx, &SampleSpec::new(TaskMode::VideoToMotion)).is_err());
        let mut bad = SampleSpec::new(TaskMode::Joint);
        bad.steps = 0;
        assert!(generate(&stub, &ctx, &bad).is_err());
    }

    #[test]
    fn joint_output_shapes_and_determinism() {
        let ctx = toy_ctx();
        let stub = StubModel::new();
        let mut spec = SampleSpec::new(TaskMode::Joint);
        spec.steps = 3;
        spec.seed = 9;
        let a = generate(&stub, &ctx, &spec).unwrap();
        let b = generate(&stub, &ctx, &spec).unwrap();
        let av = a.video.unwrap();
        let bv = b.video.unwrap();
        assert_eq!(av, bv, "same spec twice must be bit-identical");
        assert_eq!(av.frames(), ctx.frames);
        assert_eq!(av.height, ctx.height);
        let am = a.motion.unwrap();
        assert_eq!(am.frames.len(), ctx.frames);
        assert_eq!(am.fps, ctx.fps);
        assert_eq!(a.evals_per_step, 2);

        let mut spec2 = spec.clone();
        spec2.seed = 10;
        let c = generate(&stub, &ctx, &spec2).unwrap();
        assert_ne!(c.video.unwrap(), av, "different seeds must differ");
    }
}
