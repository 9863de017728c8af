//! Microbenchmarks of the hot tape ops at acceptance geometry.
use std::time::Instant;

use mvflow::kernels::{self, MatLayout};
use mvflow::rng::stream;
use mvflow::tape::Tape;
use mvflow::tensor::Tensor;

fn time_ms(mut f: impl FnMut(), reps: usize) -> f64 {
    let start = Instant::now();
    for _ in 0..reps {
        f();
    }
    start.elapsed().as_secs_f64() * 1000.0 / reps as f64
}

fn main() {
    let n = 1187usize;
    let d = 64usize;
    let q = Tensor::<f32>::randn(&[n, d], 1.0, stream(1, &[]));
    let k = Tensor::<f32>::randn(&[n, d], 1.0, stream(2, &[]));
    let v = Tensor::<f32>::randn(&[n, d], 1.0, stream(3, &[]));
    let w = Tensor::<f32>::randn(&[d, d], 0.02, stream(4, &[]));
    let wf = Tensor::<f32>::randn(&[d, 4 * d], 0.02, stream(5, &[]));

    // Raw kernels.
    let mut out = vec![0.0f32; n * d];
    let t = time_ms(|| kernels::matmul(MatLayout::Nn, q.data(), w.data(), n, d, d, &mut out), 50);
    println!("matmul NN {n}x{d}x{d}: {t:.2} ms");
    let mut out4 = vec![0.0f32; n * 4 * d];
    let t = time_ms(|| kernels::matmul(MatLayout::Nn, q.data(), wf.data(), n, d, 4 * d, &mut out4), 50);
    println!("matmul NN {n}x{d}x{}: {t:.2} ms", 4 * d);
    let mut scores = vec![0.0f32; n * n];
    let t = time_ms(|| kernels::matmul(MatLayout::Nt, q.data(), k.data(), n, 16, n, &mut scores), 20);
    println!("matmul NT {n}x16x{n} (scores): {t:.2} ms");
    let t = time_ms(|| kernels::softmax_rows(&mut scores, n), 20);
    println!("softmax {n}x{n}: {t:.2} ms");
    let mut av = vec![0.0f32; n * 16];
    let t = time_ms(|| kernels::matmul(MatLayout::Nn, scores.as_slice(), v.data(), n, n, 16, &mut av), 20);
    println!("matmul NN {n}x{n}x16 (AV): {t:.2} ms");
    let t = time_ms(|| kernels::matmul(MatLayout::Tn, scores.as_slice(), q.data(), n, n, 16, &mut av), 20);
    println!("matmul TN {n}x{n}x16 (dK): {t:.2} ms");

    // Fused attention forward (with probs kept) + backward-ish sizes.
    let t = time_ms(
        || {
            let tape = Tape::inference();
            let qn = tape.constant(q.clone());
            let kn = tape.constant(k.clone());
            let vn = tape.constant(v.clone());
            let _ = tape.attention(qn, kn, vn, 4);
        },
        10,
    );
    println!("attention fwd (no probs): {t:.2} ms");

    let t = time_ms(
        || {
            let tape = Tape::new();
            let mut ps = mvflow::params::ParamSet::new();
            let pid = ps.insert("q", q.clone());
            let qn = tape.param(pid, q.clone());
            let kn = tape.constant(k.clone());
            let vn = tape.constant(v.clone());
            let a = tape.attention(qn, kn, vn, 4);
            let loss = tape.sum_all(a);
            let _ = tape.backward(loss).unwrap();
        },
        10,
    );
    println!("attention fwd+bwd: {t:.2} ms");

    // GELU on the FFN activation size.
    let big = Tensor::<f32>::randn(&[n, 4 * d], 1.0, stream(6, &[]));
    let t = time_ms(
        || {
            let tape = Tape::inference();
            let b = tape.constant(big.clone());
            let _ = tape.gelu(b);
        },
        20,
    );
    println!("gelu {n}x{}: {t:.2} ms", 4 * d);
}
