//! Model-level contracts: attention against a brute-force reference,
//! identity-at-init structure, conditioning behavior, and an end-to-end
//! gradient spot check in f64.

use mvflow::model::{ForwardInput, Model, ModelConfig, TaskMode};
use mvflow::motion::{MotionClip, MotionFrame, MotionGroups};
use mvflow::rng::{stream, tag, uniform_f64, NormalSource};
use mvflow::tape::Tape;
use mvflow::tensor::Tensor;

fn randt(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut src = NormalSource::new(stream(seed, &[tag("model-tests")]));
    let mut t = Tensor::zeros(shape);
    src.fill(t.data_mut());
    t
}

/// Plain O(n^2) multi-head attention, loops only.
fn naive_attention(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, heads: usize) -> Tensor<f64> {
    let (n, d) = q.rows_cols();
    let (m, _) = k.rows_cols();
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = Tensor::zeros(&[n, d]);
    for h in 0..heads {
        for i in 0..n {
            let mut scores = vec![0.0; m];
            for (j, s) in scores.iter_mut().enumerate() {
                let mut acc = 0.0;
                for c in 0..hd {
                    acc += q.data()[i * d + h * hd + c] * k.data()[j * d + h * hd + c];
                }
                *s = acc * scale;
            }
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - mx).exp();
                z += *s;
            }
            for s in scores.iter_mut() {
                *s /= z;
            }
            for c in 0..hd {
                let mut acc = 0.0;
                for (j, s) in scores.iter().enumerate() {
                    acc += s * v.data()[j * d + h * hd + c];
                }
                out.data_mut()[i * d + h * hd + c] = acc;
            }
        }
    }
    out
}

#[test]
fn attention_matches_naive_reference() {
    let q = randt(&[12, 16], 1);
    let k = randt(&[12, 16], 2);
    let v = randt(&[12, 16], 3);
    let tape = Tape::inference();
    let out = tape.tensor(tape.attention(
        tape.constant(q.clone()),
        tape.constant(k.clone()),
        tape.constant(v.clone()),
        4,
    ));
    let want = naive_attention(&q, &k, &v, 4);
    assert!(out.max_abs_diff(&want) < 1e-5);
}

#[test]
fn identical_keys_average_the_values() {
    // All keys equal -> uniform softmax -> every output row is the mean value.
    let q = randt(&[5, 8], 4);
    let krow = randt(&[1, 8], 5);
    let mut k = Tensor::zeros(&[7, 8]);
    for r in 0..7 {
        k.data_mut()[r * 8..(r + 1) * 8].copy_from_slice(krow.data());
    }
    let v = randt(&[7, 8], 6);
    let tape = Tape::inference();
    let out = tape.tensor(tape.attention(
        tape.constant(q),
        tape.constant(k),
        tape.constant(v.clone()),
        2,
    ));
    let mut mean = vec![0.0; 8];
    for r in 0..7 {
        for c in 0..8 {
            mean[c] += v.data()[r * 8 + c] / 7.0;
        }
    }
    for r in 0..5 {
        for c in 0..8 {
            assert!((out.data()[r * 8 + c] - mean[c]).abs() < 1e-10);
        }
    }
}

#[test]
fn attention_is_set_like_given_positions() {
    // Permuting queries permutes outputs; permuting keys/values together
    // leaves outputs unchanged (up to float tolerance from summation order).
    let q = randt(&[6, 8], 7);
    let k = randt(&[6, 8], 8);
    let v = randt(&[6, 8], 9);
    let perm = [3usize, 0, 5, 1, 4, 2];
    let permute = |t: &Tensor<f64>| {
        let mut out = Tensor::zeros(&[6, 8]);
        for (dst, &src) in perm.iter().enumerate() {
            out.data_mut()[dst * 8..(dst + 1) * 8].copy_from_slice(&t.data()[src * 8..(src + 1) * 8]);
        }
        out
    };
    let run = |q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>| {
        let tape = Tape::inference();
        tape.tensor(tape.attention(
            tape.constant(q.clone()),
            tape.constant(k.clone()),
            tape.constant(v.clone()),
            2,
        ))
    };
    let base = run(&q, &k, &v);
    let qperm = run(&permute(&q), &k, &v);
    assert!(permute(&base).max_abs_diff(&qperm) < 1e-12);
    let kvperm = run(&q, &permute(&k), &permute(&v));
    assert!(base.max_abs_diff(&kvperm) < 1e-9);
}

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        dim: 8,
        heads: 1,
        layers: 2,
        dual_layers: 1,
        vocab_size: 8,
        text_len: 4,
        stride: 2,
        frames: 5,
        height: 8,
        width: 8,
        fps: 16,
        theta: 10_000.0,
        collision_mode: false,
        unscaled_time: false,
        share_modality_weights: false,
    }
}

fn motion_input(cfg: &ModelConfig, seed: u64) -> MotionGroups<f64> {
    let clip = MotionClip {
        frames: (0..cfg.frames)
            .map(|i| {
                let mut f = MotionFrame::zero();
                let mut rng = stream(seed, &[i as u64]);
                f.root = [
                    uniform_f64(&mut rng) as f32,
                    uniform_f64(&mut rng) as f32,
                    uniform_f64(&mut rng) as f32,
                ];
                f.joints[0] = f.root;
                f
            })
            .collect(),
        fps: cfg.fps,
    };
    mvflow::motion::clip_to_groups(&clip)
}

fn video_input(cfg: &ModelConfig, seed: u64) -> Tensor<f64> {
    let geo = cfg.geometry().unwrap();
    randt(&[geo.tokens(), geo.patch_dim()], seed)
}

#[test]
fn forward_shape_contracts() {
    let cfg = tiny_cfg();
    let model = Model::<f64>::init(&cfg, 3).unwrap();
    let video = video_input(&cfg, 40);
    let motion = motion_input(&cfg, 41);
    let text = [1u16, 2, 3];

    let pred = model
        .predict(&ForwardInput {
            video: Some(&video),
            motion: Some(&motion),
            text: Some(&text),
            t: 0.3,
            task: TaskMode::Joint,
        })
        .unwrap();
    assert_eq!(pred.video_velocity.as_ref().unwrap().shape(), video.shape());
    let mv = pred.motion_velocity.as_ref().unwrap();
    assert_eq!(mv.pos.shape(), motion.pos.shape());
    assert_eq!(mv.rot.shape(), motion.rot.shape());
    assert_eq!(mv.shape.shape(), motion.shape.shape());

    // Motion-only call returns no video prediction.
    let pred = model
        .predict(&ForwardInput {
            video: None,
            motion: Some(&motion),
            text: None,
            t: 0.5,
            task: TaskMode::Joint,
        })
        .unwrap();
    assert!(pred.video_velocity.is_none());
    assert!(pred.motion_velocity.is_some());

    // Video-only call returns no motion prediction.
    let pred = model
        .predict(&ForwardInput {
            video: Some(&video),
            motion: None,
            text: None,
            t: 0.5,
            task: TaskMode::MotionToVideo,
        })
        .unwrap();
    assert!(pred.video_velocity.is_some());
    assert!(pred.motion_velocity.is_none());

    // Both absent is an error.
    assert!(model
        .predict(&ForwardInput {
            video: None,
            motion: None,
            text: None,
            t: 0.5,
            task: TaskMode::Joint,
        })
        .is_err());
}

#[test]
fn blocks_with_zero_gates_are_identities() {
    // With the modulation parameters (and cross output) zeroed, every block
    // is exactly the identity, so depth must not change the outputs.
    let shallow_cfg = ModelConfig { layers: 1, dual_layers: 1, ..tiny_cfg() };
    let deep_cfg = ModelConfig { layers: 3, dual_layers: 2, ..tiny_cfg() };
    let mut shallow = Model::<f64>::init(&shallow_cfg, 11).unwrap();
    let mut deep = Model::<f64>::init(&deep_cfg, 11).unwrap();
    for model in [&mut shallow, &mut deep] {
        let names: Vec<String> = model.params.iter().map(|(_, n, _)| n.to_string()).collect();
        for n in names {
            if n.ends_with("mod.b") || n.ends_with("mod.w") {
                let id = model.params.id(&n).unwrap();
                let shape = model.params.tensor(id).shape().to_vec();
                model.params.set(id, Tensor::zeros(&shape));
            }
        }
    }
    let video = video_input(&shallow_cfg, 50);
    let motion = motion_input(&shallow_cfg, 51);
    let input = ForwardInput {
        video: Some(&video),
        motion: Some(&motion),
        text: Some(&[1, 2]),
        t: 0.7,
        task: TaskMode::Joint,
    };
    let a = shallow.predict(&input).unwrap();
    let b = deep.predict(&input).unwrap();
    assert_eq!(a.video_velocity.unwrap(), b.video_velocity.unwrap());
    assert_eq!(a.motion_velocity.unwrap().pos, b.motion_velocity.unwrap().pos);
}

#[test]
fn timestep_changes_modulation_for_random_weights() {
    let cfg = tiny_cfg();
    let mut model = Model::<f64>::init(&cfg, 13).unwrap();
    // Zero-init modulation hides t; randomize it to expose the dependence.
    for name in ["blocks.0.video.mod.w", "blocks.1.video.mod.w", "blocks.1.motion.mod.w"] {
        let id = model.params.id(name).unwrap();
        let shape = model.params.tensor(id).shape().to_vec();
        model.params.set(id, randt(&shape, 500 + id as u64));
    }
    let video = video_input(&cfg, 60);
    let motion = motion_input(&cfg, 61);
    let run = |t: f64| {
        model
            .predict(&ForwardInput {
                video: Some(&video),
                motion: Some(&motion),
                text: None,
                t,
                task: TaskMode::Joint,
            })
            .unwrap()
            .video_velocity
            .unwrap()
    };
    let at0 = run(0.0);
    let at1 = run(1.0);
    assert!(at0.max_abs_diff(&at1) > 1e-6, "t must influence adaLN");
}

#[test]
fn task_hint_behavior() {
    let cfg = tiny_cfg();
    let mut model = Model::<f64>::init(&cfg, 17).unwrap();
    let video = video_input(&cfg, 70);
    let motion = motion_input(&cfg, 71);
    let run = |m: &Model<f64>, task: TaskMode| {
        m.predict(&ForwardInput {
            video: Some(&video),
            motion: Some(&motion),
            text: None,
            t: 0.4,
            task,
        })
        .unwrap()
        .video_velocity
        .unwrap()
    };

    // Random projection: different tasks give different outputs.
    let joint = run(&model, TaskMode::Joint);
    let m2v = run(&model, TaskMode::MotionToVideo);
    assert!(joint.max_abs_diff(&m2v) > 1e-9);

    // Zeroed final projection: the hint vanishes.
    for name in ["task.mlp.fc2.w", "task.mlp.fc2.b"] {
        let id = model.params.id(name).unwrap();
        let shape = model.params.tensor(id).shape().to_vec();
        model.params.set(id, Tensor::zeros(&shape));
    }
    let joint = run(&model, TaskMode::Joint);
    let m2v = run(&model, TaskMode::MotionToVideo);
    assert_eq!(joint, m2v);
}

#[test]
fn broadcast_hint_is_token_independent() {
    // inject(b + c) - inject(b) must be the same row for every token.
    let x = randt(&[7, 8], 80);
    let r = randt(&[8], 81);
    let tape = Tape::inference();
    let xb = tape.constant(x.clone());
    let rb = tape.constant(r);
    let out = tape.tensor(tape.add_rowvec(xb, rb));
    let mut first_delta = vec![0.0; 8];
    for c in 0..8 {
        first_delta[c] = out.data()[c] - x.data()[c];
    }
    for row in 1..7 {
        for c in 0..8 {
            let delta = out.data()[row * 8 + c] - x.data()[row * 8 + c];
            assert!((delta - first_delta[c]).abs() < 1e-15);
        }
    }
}

/// Weighted scalar readout of a full forward, used by the gradient checks.
fn weighted_loss(model: &Model<f64>, video: &Tensor<f64>, motion: &MotionGroups<f64>) -> f64 {
    let wv = randt(&[video.shape()[0], video.shape()[1]], 901);
    let wp = randt(motion.pos.shape(), 902);
    let wr = randt(motion.rot.shape(), 903);
    let ws = randt(motion.shape.shape(), 904);
    let pred = model
        .predict(&ForwardInput {
            video: Some(video),
            motion: Some(motion),
            text: Some(&[1, 2, 3]),
            t: 0.37,
            task: TaskMode::Joint,
        })
        .unwrap();
    let dotsum = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    };
    let mv = pred.motion_velocity.unwrap();
    dotsum(&pred.video_velocity.unwrap(), &wv)
        + dotsum(&mv.pos, &wp)
        + dotsum(&mv.rot, &wr)
        + dotsum(&mv.shape, &ws)
}

#[test]
fn end_to_end_gradient_spot_check() {
    let cfg = tiny_cfg();
    let mut model = Model::<f64>::init(&cfg, 19).unwrap();
    // Break the identity-at-init structure so gradients flow everywhere.
    let names: Vec<String> = model.params.iter().map(|(_, n, _)| n.to_string()).collect();
    for n in &names {
        if n.ends_with("mod.w") || n.ends_with("cross.o.w") {
            let id = model.params.id(n).unwrap();
            let shape = model.params.tensor(id).shape().to_vec();
            let mut t = randt(&shape, 600 + id as u64);
            for v in t.data_mut() {
                *v *= 0.05;
            }
            model.params.set(id, t);
        }
    }
    let video = video_input(&cfg, 90);
    let motion = motion_input(&cfg, 91);

    // Analytic gradients via the tape.
    let tape = Tape::new();
    let lease = model.lease(&tape, |_| true);
    let out = model
        .forward(
            &tape,
            &lease,
            &ForwardInput {
                video: Some(&video),
                motion: Some(&motion),
                text: Some(&[1, 2, 3]),
                t: 0.37,
                task: TaskMode::Joint,
            },
        )
        .unwrap();
    let wv = randt(&[video.shape()[0], video.shape()[1]], 901);
    let wp = randt(motion.pos.shape(), 902);
    let wr = randt(motion.rot.shape(), 903);
    let ws = randt(motion.shape.shape(), 904);
    let vloss = tape.sum_all(tape.mul(out.video_velocity.unwrap(), tape.constant(wv)));
    let g = out.motion_velocity.unwrap();
    let ploss = tape.sum_all(tape.mul(g.pos, tape.constant(wp)));
    let rloss = tape.sum_all(tape.mul(g.rot, tape.constant(wr)));
    let sloss = tape.sum_all(tape.mul(g.shape, tape.constant(ws)));
    let loss = tape.add(tape.add(vloss, ploss), tape.add(rloss, sloss));
    let grads = tape.backward(loss).unwrap();

    // Spot-check a spread of parameters against finite differences.
    let check_names = [
        "video.patch.w",
        "video.unpatch.b",
        "motion.enc.pos.fc1.w",
        "motion.dec.rot.fc2.w",
        "blocks.0.video.attn.q.w",
        "blocks.1.motion.ffn.fc1.w",
        "blocks.1.video.attn.o.w",
        "blocks.1.motion.mod.w",
        "time.fc1.w",
        "text.embed",
        "task.embed",
    ];
    let mut rng = stream(77, &[tag("spot")]);
    for name in check_names {
        let pid = model.params.id(name).unwrap();
        let full = model.params.tensor(pid).clone();
        let analytic = grads.get(pid, full.shape());
        // A handful of random elements per parameter.
        for _ in 0..4 {
            let idx = (uniform_f64(&mut rng) * full.numel() as f64) as usize;
            let saved = full.data()[idx];
            let eps = 1e-4;
            let mut probe = full.clone();
            probe.data_mut()[idx] = saved + eps;
            model.params.set(pid, probe.clone());
            let hi = weighted_loss(&model, &video, &motion);
            probe.data_mut()[idx] = saved - eps;
            model.params.set(pid, probe.clone());
            let lo = weighted_loss(&model, &video, &motion);
            probe.data_mut()[idx] = saved;
            model.params.set(pid, probe);
            let fd = (hi - lo) / (2.0 * eps);
            let an = analytic.data()[idx];
            let denom = an.abs().max(fd.abs()).max(1e-3);
            assert!(
                ((an - fd) / denom).abs() < 1e-5,
                "{name}[{idx}]: analytic {an} vs fd {fd}"
            );
        }
    }
}
