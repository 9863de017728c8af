//! Finite-difference verification of every differentiable op.
//!
//! Each case rebuilds the same computation as a closure over plain tensors,
//! runs the tape backward, and compares against central differences in f64.

use std::sync::Arc;

use mvflow::kernels::MatLayout;
use mvflow::optim::{finite_diff_grad, grad_mismatch};
use mvflow::params::ParamSet;
use mvflow::rng::{stream, tag, uniform_f64};
use mvflow::tape::{NodeId, Tape};
use mvflow::tensor::Tensor;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-5;

fn randt(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = stream(seed, &[tag("gradcheck")]);
    let n = shape.iter().product();
    let data = (0..n).map(|_| uniform_f64(&mut rng) * 2.0 - 1.0).collect();
    Tensor::new(shape, data).unwrap()
}

/// Check d loss / d inputs[target] where loss = sum(build(inputs) .* weights).
fn check<F>(name: &str, inputs: &[Tensor<f64>], target: usize, build: F)
where
    F: Fn(&Tape<f64>, &[NodeId]) -> NodeId,
{
    // Weighted sum makes the incoming gradient non-uniform.
    let probe_shape = {
        let tape = Tape::new();
        let ids: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        tape.shape(build(&tape, &ids))
    };
    let weights = randt(&probe_shape, 999);

    let loss_of = |replacement: &Tensor<f64>| -> f64 {
        let tape = Tape::inference();
        let ids: Vec<_> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| tape.constant(if i == target { replacement.clone() } else { t.clone() }))
            .collect();
        let out = build(&tape, &ids);
        let w = tape.constant(weights.clone());
        tape.item(tape.sum_all(tape.mul(out, w)))
    };

    let tape = Tape::new();
    let mut ps = ParamSet::new();
    let pid = ps.insert("x", inputs[target].clone());
    let ids: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i == target {
                tape.param(pid, t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect();
    let out = build(&tape, &ids);
    let w = tape.constant(weights.clone());
    let loss = tape.sum_all(tape.mul(out, w));
    let grads = tape.backward(loss).unwrap();
    let analytic = grads.get(pid, inputs[target].shape());

    let numeric = finite_diff_grad(|x| loss_of(x), &inputs[target], EPS);
    let err = grad_mismatch(&analytic, &numeric);
    assert!(err <= TOL, "{name}: gradient mismatch {err}");
}

#[test]
fn sum_of_linear_map_gives_ones() {
    let tape = Tape::new();
    let mut ps = ParamSet::new();
    let w = Tensor::new(&[3], vec![0.5f64, -2.0, 7.0]).unwrap();
    let pid = ps.insert("w", w.clone());
    let node = tape.param(pid, w);
    let loss = tape.sum_all(node);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(pid, &[3]).data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn elementwise_square_grad_is_two_x() {
    let tape = Tape::new();
    let mut ps = ParamSet::new();
    let w = Tensor::new(&[2], vec![2.0f64, -1.0]).unwrap();
    let pid = ps.insert("w", w.clone());
    let node = tape.param(pid, w);
    let sq = tape.mul(node, node); // aliased input: grads accumulate twice
    let loss = tape.sum_all(sq);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(pid, &[2]).data(), &[4.0, -2.0]);
}

#[test]
fn unreachable_parameter_maps_to_zero() {
    let tape = Tape::new();
    let mut ps = ParamSet::new();
    let a = ps.insert("a", Tensor::scalar(1.0f64));
    let b = ps.insert("b", Tensor::<f64>::zeros(&[2, 2]));
    let na = tape.param(a, Tensor::scalar(1.0));
    let _nb = tape.param(b, Tensor::zeros(&[2, 2]));
    let loss = tape.sum_all(na);
    let grads = tape.backward(loss).unwrap();
    assert!(!grads.contains(b));
    assert_eq!(grads.get(b, &[2, 2]), Tensor::zeros(&[2, 2]));
}

#[test]
fn non_scalar_loss_is_an_error() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2, 2]));
    assert!(tape.backward(x).is_err());
}

#[test]
fn elementwise_ops() {
    let a = randt(&[4, 5], 1);
    let b = randt(&[4, 5], 2);
    for target in 0..2 {
        check("add", &[a.clone(), b.clone()], target, |t, ids| t.add(ids[0], ids[1]));
        check("sub", &[a.clone(), b.clone()], target, |t, ids| t.sub(ids[0], ids[1]));
        check("mul", &[a.clone(), b.clone()], target, |t, ids| t.mul(ids[0], ids[1]));
    }
    check("scale", &[a.clone()], 0, |t, ids| t.scale(ids[0], -1.7));
    check("add_scalar", &[a], 0, |t, ids| t.add_scalar(ids[0], 0.3));
}

#[test]
fn rowvec_broadcasts() {
    let x = randt(&[6, 4], 3);
    let r = randt(&[4], 4);
    for target in 0..2 {
        check("add_rowvec", &[x.clone(), r.clone()], target, |t, ids| t.add_rowvec(ids[0], ids[1]));
        check("mul_rowvec", &[x.clone(), r.clone()], target, |t, ids| t.mul_rowvec(ids[0], ids[1]));
    }
}

#[test]
fn matmul_layouts() {
    let cases = [
        (MatLayout::Nn, [3usize, 4], [4usize, 5]),
        (MatLayout::Nt, [3, 4], [5, 4]),
        (MatLayout::Tn, [4, 3], [4, 5]),
    ];
    for (layout, sa, sb) in cases {
        let a = randt(&sa, 5);
        let b = randt(&sb, 6);
        for target in 0..2 {
            check(&format!("matmul {layout:?}"), &[a.clone(), b.clone()], target, move |t, ids| {
                t.matmul(ids[0], ids[1], layout)
            });
        }
    }
}

#[test]
fn nonlinearities() {
    let x = randt(&[5, 6], 7);
    check("gelu", &[x.clone()], 0, |t, ids| t.gelu(ids[0]));
    check("softmax", &[x.clone()], 0, |t, ids| t.softmax_rows(ids[0]));
    check("layernorm", &[x], 0, |t, ids| t.layernorm_rows(ids[0], 1e-5));
}

#[test]
fn structural_ops() {
    let a = randt(&[3, 4], 8);
    let b = randt(&[2, 4], 9);
    for target in 0..2 {
        check("concat_rows", &[a.clone(), b.clone()], target, |t, ids| {
            t.concat_rows(ids[0], ids[1])
        });
    }
    check("slice_rows", &[a.clone()], 0, |t, ids| t.slice_rows(ids[0], 1, 2));
    check("slice_cols", &[a.clone()], 0, |t, ids| t.slice_cols(ids[0], 1, 2));
    // Duplicated indices exercise the scatter-add.
    let idx = Arc::new(vec![2usize, 0, 2, 1, 2]);
    check("select_rows", &[a], 0, move |t, ids| t.select_rows(ids[0], idx.clone()));
}

#[test]
fn rope_rotation() {
    let x = randt(&[5, 8], 10); // 2 heads x head_dim 4
    let mut rng = stream(77, &[]);
    let angles: Vec<f64> = (0..5 * 2).map(|_| uniform_f64(&mut rng) * 6.0 - 3.0).collect();
    let cos = Arc::new(Tensor::new(&[5, 2], angles.iter().map(|a| a.cos()).collect()).unwrap());
    let sin = Arc::new(Tensor::new(&[5, 2], angles.iter().map(|a| a.sin()).collect()).unwrap());
    check("rope", &[x], 0, move |t, ids| t.rope(ids[0], cos.clone(), sin.clone(), 2));
}

#[test]
fn fused_attention() {
    let q = randt(&[4, 8], 11);
    let k = randt(&[6, 8], 12);
    let v = randt(&[6, 8], 13);
    for target in 0..3 {
        check("attention", &[q.clone(), k.clone(), v.clone()], target, |t, ids| {
            t.attention(ids[0], ids[1], ids[2], 2)
        });
    }
}

#[test]
fn two_layer_network_matches_finite_differences() {
    // The spec's random 2-layer network case: x -> gelu(x W1 + b1) W2 -> loss
    let x = randt(&[3, 4], 20);
    let w1 = randt(&[4, 6], 21);
    let b1 = randt(&[6], 22);
    let w2 = randt(&[6, 2], 23);
    let build = |t: &Tape<f64>, ids: &[NodeId]| {
        let h = t.gelu(t.add_rowvec(t.matmul(ids[0], ids[1], MatLayout::Nn), ids[2]));
        t.matmul(h, ids[3], MatLayout::Nn)
    };
    for target in 0..4 {
        check("two_layer", &[x.clone(), w1.clone(), b1.clone(), w2.clone()], target, build);
    }
}

#[test]
fn toy_attention_block_self_consistency() {
    // LayerNorm -> projections -> rope -> attention -> output projection,
    // checked end to end against finite differences.
    let x = randt(&[5, 8], 30);
    let wq = randt(&[8, 8], 31);
    let wk = randt(&[8, 8], 32);
    let wv = randt(&[8, 8], 33);
    let wo = randt(&[8, 8], 34);
    let angles: Vec<f64> = (0..5 * 2).map(|i| i as f64 * 0.37).collect();
    let cos = Arc::new(Tensor::new(&[5, 2], angles.iter().map(|a| a.cos()).collect()).unwrap());
    let sin = Arc::new(Tensor::new(&[5, 2], angles.iter().map(|a| a.sin()).collect()).unwrap());
    let build = move |t: &Tape<f64>, ids: &[NodeId]| {
        let h = t.layernorm_rows(ids[0], 1e-5);
        let q = t.rope(t.matmul(h, ids[1], MatLayout::Nn), cos.clone(), sin.clone(), 2);
        let k = t.rope(t.matmul(h, ids[2], MatLayout::Nn), cos.clone(), sin.clone(), 2);
        let v = t.matmul(h, ids[3], MatLayout::Nn);
        let attn = t.attention(q, k, v, 2);
        let out = t.matmul(attn, ids[4], MatLayout::Nn);
        t.add(ids[0], out)
    };
    for target in 0..5 {
        check(
            "toy_block",
            &[x.clone(), wq.clone(), wk.clone(), wv.clone(), wo.clone()],
            target,
            build.clone(),
        );
    }
}

#[test]
fn randomized_shapes_small_axes() {
    // Invariant sweep: random small shapes, several ops, seeded.
    let mut rng = stream(55, &[tag("shapes")]);
    for round in 0..6 {
        let n = 1 + (uniform_f64(&mut rng) * 7.0) as usize;
        let d = 1 + (uniform_f64(&mut rng) * 7.0) as usize;
        let a = randt(&[n, d], 100 + round);
        let b = randt(&[n, d], 200 + round);
        check("sweep add", &[a.clone(), b.clone()], 0, |t, ids| t.add(ids[0], ids[1]));
        check("sweep mul", &[a.clone(), b.clone()], 1, |t, ids| t.mul(ids[0], ids[1]));
        check("sweep softmax", &[a.clone()], 0, |t, ids| t.softmax_rows(ids[0]));
        check("sweep layernorm", &[a], 0, |t, ids| t.layernorm_rows(ids[0], 1e-5));
    }
}
