//! Codec-level contracts that need a tape: zero-weight projections, the
//! identity patch embedding, token-count validation, and a small
//! reconstruction training run through the motion projectors.

use mvflow::data::{gen_motion_clip, MotionKind};
use mvflow::kernels::MatLayout;
use mvflow::motion::{
    clip_to_groups, decode_motion_tokens, encode_motion_tokens, frames_for_tokens, CodecNodes,
    GroupNodes, MlpNodes, MotionGroups, TOKENS_PER_FRAME,
};
use mvflow::optim::{AdamW, AdamWConfig};
use mvflow::params::ParamSet;
use mvflow::rng::{stream, tag};
use mvflow::tape::{NodeId, Tape};
use mvflow::tensor::Tensor;

const D: usize = 16;
const HIDDEN: usize = 64;

struct CodecParams {
    ps: ParamSet<f64>,
}

impl CodecParams {
    /// Six projector MLPs (three encode, three decode) with optionally
    /// zeroed weights.
    fn new(seed: u64, zero: bool) -> Self {
        let mut ps = ParamSet::new();
        let dims = [(3usize, "pos"), (6, "rot"), (10, "shape")];
        for (ch, name) in dims {
            for (prefix, din, dout) in
                [("enc", ch, D), ("dec", D, ch)]
            {
                let mk = |ps: &mut ParamSet<f64>, pname: &str, shape: &[usize]| {
                    let t = if zero {
                        Tensor::zeros(shape)
                    } else {
                        Tensor::randn(shape, 0.05, stream(seed, &[tag(pname)]))
                    };
                    ps.insert(pname, t);
                };
                mk(&mut ps, &format!("{prefix}.{name}.fc1.w"), &[din, HIDDEN]);
                mk(&mut ps, &format!("{prefix}.{name}.fc1.b"), &[HIDDEN]);
                mk(&mut ps, &format!("{prefix}.{name}.fc2.w"), &[HIDDEN, dout]);
                mk(&mut ps, &format!("{prefix}.{name}.fc2.b"), &[dout]);
            }
        }
        Self { ps }
    }

    fn lease(&self, tape: &Tape<f64>, trainable: bool) -> (CodecNodes, CodecNodes) {
        let mut node = |name: &str| {
            let id = self.ps.id(name).unwrap();
            if trainable {
                tape.param(id, self.ps.tensor(id).clone())
            } else {
                tape.constant(self.ps.tensor(id).clone())
            }
        };
        let mut mlp = |prefix: &str| MlpNodes {
            fc1_w: node(&format!("{prefix}.fc1.w")),
            fc1_b: node(&format!("{prefix}.fc1.b")),
            fc2_w: node(&format!("{prefix}.fc2.w")),
            fc2_b: node(&format!("{prefix}.fc2.b")),
        };
        (
            CodecNodes { pos: mlp("enc.pos"), rot: mlp("enc.rot"), shape: mlp("enc.shape") },
            CodecNodes { pos: mlp("dec.pos"), rot: mlp("dec.rot"), shape: mlp("dec.shape") },
        )
    }
}

fn lease_groups(tape: &Tape<f64>, g: &MotionGroups<f64>) -> GroupNodes {
    GroupNodes {
        pos: tape.constant(g.pos.clone()),
        rot: tape.constant(g.rot.clone()),
        shape: tape.constant(g.shape.clone()),
    }
}

#[test]
fn token_counts_for_paper_and_toy_frame_budgets() {
    let params = CodecParams::new(1, false);
    for frames in [1usize, 81] {
        let clip = gen_motion_clip(MotionKind::Wave, 5, frames.max(5), 16).unwrap();
        // Trim or keep to the target frame count (1 is below the generator's
        // minimum, so slice the clip).
        let clip = mvflow::motion::MotionClip {
            frames: clip.frames.into_iter().take(frames).collect(),
            fps: 16,
        };
        let groups: MotionGroups<f64> = clip_to_groups(&clip);
        let tape = Tape::inference();
        let (enc, _dec) = params.lease(&tape, false);
        let tokens = encode_motion_tokens(&tape, lease_groups(&tape, &groups), &enc, frames);
        assert_eq!(tape.shape(tokens), vec![frames * TOKENS_PER_FRAME, D]);
    }
}

#[test]
fn zero_weights_give_zero_tokens_and_zero_clip() {
    let params = CodecParams::new(2, true);
    let clip = gen_motion_clip(MotionKind::Walk, 3, 5, 16).unwrap();
    let groups: MotionGroups<f64> = clip_to_groups(&clip);
    let tape = Tape::inference();
    let (enc, dec) = params.lease(&tape, false);
    let tokens = encode_motion_tokens(&tape, lease_groups(&tape, &groups), &enc, 5);
    assert!(tape.tensor(tokens).data().iter().all(|&v| v == 0.0));

    // 51 zero tokens through a zero decoder give an all-zero 1-frame clip.
    let zero_tokens = tape.constant(Tensor::zeros(&[TOKENS_PER_FRAME, D]));
    let out = decode_motion_tokens(&tape, zero_tokens, &dec, 1);
    for node in [out.pos, out.rot, out.shape] {
        assert!(tape.tensor(node).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn token_count_must_be_multiple_of_51() {
    assert_eq!(frames_for_tokens(51).unwrap(), 1);
    assert_eq!(frames_for_tokens(4131).unwrap(), 81);
    assert!(frames_for_tokens(103).is_err());
    assert!(frames_for_tokens(0).is_err());
}

#[test]
fn reconstruction_error_decreases_under_joint_training() {
    // Train the six projectors end to end on a reconstruction objective.
    let mut params = CodecParams::new(3, false);
    let clips: Vec<_> = (0..4)
        .map(|i| gen_motion_clip(MotionKind::ALL[i % 6], 20 + i as u64, 5, 16).unwrap())
        .collect();
    let groups: Vec<MotionGroups<f64>> = clips.iter().map(clip_to_groups).collect();
    let mut opt = AdamW::new(AdamWConfig { lr: 3e-3, weight_decay: 0.0, ..Default::default() });

    let mut losses = Vec::new();
    for step in 0..150 {
        let tape = Tape::new();
        let (enc, dec) = params.lease(&tape, true);
        let g = &groups[step % groups.len()];
        let tokens = encode_motion_tokens(&tape, lease_groups(&tape, g), &enc, 5);
        let recon = decode_motion_tokens(&tape, tokens, &dec, 5);
        let mut loss: Option<NodeId> = None;
        for (pred, target) in
            [(recon.pos, &g.pos), (recon.rot, &g.rot), (recon.shape, &g.shape)]
        {
            let diff = tape.sub(pred, tape.constant(target.clone()));
            let term = tape.mean_all(tape.mul(diff, diff));
            loss = Some(match loss {
                None => term,
                Some(acc) => tape.add(acc, term),
            });
        }
        let loss = loss.unwrap();
        losses.push(tape.item(loss));
        let grads = tape.backward(loss).unwrap();
        let updates: Vec<_> = params
            .ps
            .matching(|_| true)
            .into_iter()
            .map(|id| (id, grads.get(id, params.ps.tensor(id).shape())))
            .collect();
        opt.step(&mut params.ps, &updates).unwrap();
    }
    let early: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let late: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(
        late < 0.2 * early,
        "reconstruction should improve: early {early:.5} late {late:.5}"
    );
}

#[test]
fn identity_patch_embedding_passes_patches_through() {
    // Square embedding with identity weights: grid equals raw patches.
    let clip = gen_motion_clip(MotionKind::Squat, 9, 5, 16).unwrap();
    let video = mvflow::data::render_clip(&clip, 9, 8, 8).unwrap();
    let patches: Tensor<f64> = mvflow::video::patchify(&video, 2).unwrap();
    let pd = patches.shape()[1];
    let mut eye = Tensor::<f64>::zeros(&[pd, pd]);
    for i in 0..pd {
        eye.data_mut()[i * pd + i] = 1.0;
    }
    let tape = Tape::inference();
    let p = tape.constant(patches.clone());
    let grid = tape.matmul(p, tape.constant(eye), MatLayout::Nn);
    assert_eq!(tape.tensor(grid), patches);

    // Zero embedding gives a zero grid.
    let zero = tape.constant(Tensor::zeros(&[pd, pd]));
    let grid = tape.matmul(p, zero, MatLayout::Nn);
    assert!(tape.tensor(grid).data().iter().all(|&v| v == 0.0));
}

#[test]
fn all_motion_kinds_are_kinematically_smooth() {
    // Bounded third difference: jerk stays modest for every generator kind.
    for kind in MotionKind::ALL {
        for seed in [1u64, 9] {
            let clip = gen_motion_clip(kind, seed, 17, 16).unwrap();
            let j = mvflow::eval::jerk(&clip).unwrap();
            assert!(j.is_finite() && j < 2000.0, "{kind:?} jerk {j}");
        }
    }
}
