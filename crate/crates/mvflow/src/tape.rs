//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records one forward computation as an append-only list of
//! nodes; inputs always refer to earlier nodes, so the graph is acyclic by
//! construction. [`Tape::backward`] walks the list in reverse and returns the
//! gradient of a scalar loss with respect to every leased parameter.
//!
//! Op constructors panic on shape mismatches (caller contract violations);
//! higher-level modules validate user input before touching the tape.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{self, MatLayout};
use crate::params::ParamId;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<E: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, E),
    AddRowVec(NodeId, NodeId),
    MulRowVec(NodeId, NodeId),
    MatMul { a: NodeId, b: NodeId, layout: MatLayout },
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    LayerNormRows { x: NodeId, inv_std: Vec<E> },
    SumAll(NodeId),
    ConcatRows(NodeId, NodeId),
    SliceRows { x: NodeId, start: usize },
    SliceCols { x: NodeId, start: usize },
    SelectRows { x: NodeId, indices: Arc<Vec<usize>> },
    Rope { x: NodeId, cos: Arc<Tensor<E>>, sin: Arc<Tensor<E>>, heads: usize },
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, probs: Option<Tensor<E>> },
}

struct Node<E: Scalar> {
    value: Tensor<E>,
    op: Op<E>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Gradient of the loss w.r.t. each leased parameter.
pub struct Gradients<E: Scalar> {
    by_param: Vec<Option<Tensor<E>>>,
}

impl<E: Scalar> Gradients<E> {
    /// Parameters unreachable from the loss get a zero gradient of the
    /// requested shape.
    pub fn get(&self, id: ParamId, shape: &[usize]) -> Tensor<E> {
        match self.by_param.get(id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.by_param.get(id).is_some_and(|g| g.is_some())
    }
}

pub struct Tape<E: Scalar> {
    nodes: RefCell<Vec<Node<E>>>,
    grad_enabled: bool,
    capture_attn: bool,
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: true, capture_attn: false }
    }

    /// A tape that records values only; backward intermediates are dropped.
    pub fn inference() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: false, capture_attn: false }
    }

    pub fn with_attn_capture(mut self) -> Self {
        self.capture_attn = true;
        self
    }

    fn push(&self, value: Tensor<E>, op: Op<E>, needs_grad: bool, param: Option<ParamId>) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad: needs_grad && self.grad_enabled, param });
        NodeId(nodes.len() - 1)
    }

    pub fn constant(&self, value: Tensor<E>) -> NodeId {
        self.push(value, Op::Leaf, false, None)
    }

    /// Lease a parameter onto the tape as a differentiable leaf.
    pub fn param(&self, id: ParamId, value: Tensor<E>) -> NodeId {
        self.push(value, Op::Leaf, true, Some(id))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self, id: NodeId) -> Vec<usize> {
        self.nodes.borrow()[id.0].value.shape().to_vec()
    }

    pub fn tensor(&self, id: NodeId) -> Tensor<E> {
        self.nodes.borrow()[id.0].value.clone()
    }

    pub fn item(&self, id: NodeId) -> E {
        self.nodes.borrow()[id.0].value.item()
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id.0].needs_grad
    }

    // ---- elementwise ----

    pub fn add(&self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(ta.shape(), tb.shape(), "add shape mismatch");
            let mut out = Tensor::zeros(ta.shape());
            kernels::zip(ta.data(), tb.data(), out.data_mut(), |x, y| x + y);
            out
        };
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng, None)
    }

    pub fn sub(&self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(ta.shape(), tb.shape(), "sub shape mismatch");
            let mut out = Tensor::zeros(ta.shape());
            kernels::zip(ta.data(), tb.data(), out.data_mut(), |x, y| x - y);
            out
        };
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), ng, None)
    }

    pub fn mul(&self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            assert_eq!(ta.shape(), tb.shape(), "mul shape mismatch");
            let mut out = Tensor::zeros(ta.shape());
            kernels::zip(ta.data(), tb.data(), out.data_mut(), |x, y| x * y);
            out
        };
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng, None)
    }

    pub fn scale(&self, a: NodeId, c: E) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let mut out = Tensor::zeros(ta.shape());
            kernels::map(ta.data(), out.data_mut(), |x| x * c);
            out
        };
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, c), ng, None)
    }

    /// Constant offset; gradients pass through unchanged.
    pub fn add_scalar(&self, a: NodeId, c: E) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let mut out = Tensor::zeros(ta.shape());
            kernels::map(ta.data(), out.data_mut(), |x| x + c);
            out
        };
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, E::ONE), ng, None)
    }

    // ---- broadcast over rows ----

    /// x: [n, d] plus a row vector of d elements added to every row.
    pub fn add_rowvec(&self, x: NodeId, r: NodeId) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let (tx, tr) = (&nodes[x.0].value, &nodes[r.0].value);
            let (n, d) = tx.rows_cols();
            assert_eq!(tr.numel(), d, "add_rowvec width mismatch");
            let mut out = Tensor::zeros(tx.shape());
            let rs = tr.data();
            for (orow, xrow) in out.data_mut().chunks_mut(d).zip(tx.data().chunks(d)) {
                for ((o, &xv), &rv) in orow.iter_mut().zip(xrow).zip(rs) {
                    *o = xv + rv;
                }
            }
            let _ = n;
            out
        };
        let ng = self.needs(x) || self.needs(r);
        self.push(out, Op::AddRowVec(x, r), ng, None)
    }

    pub fn mul_rowvec(&self, x: NodeId, r: NodeId) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let (tx, tr) = (&nodes[x.0].value, &nodes[r.0].value);
            let (_, d) = tx.rows_cols();
            assert_eq!(tr.numel(), d, "mul_rowvec width mismatch");
            let mut out = Tensor::zeros(tx.shape());
            let rs = tr.data();
            for (orow, xrow) in out.data_mut().chunks_mut(d).zip(tx.data().chunks(d)) {
                for ((o, &xv), &rv) in orow.iter_mut().zip(xrow).zip(rs) {
                    *o = xv * rv;
                }
            }
            out
        };
        let ng = self.needs(x) || self.needs(r);
        self.push(out, Op::MulRowVec(x, r), ng, None)
    }

    // ---- linear algebra ----

    pub fn matmul(&self, a: NodeId, b: NodeId, layout: MatLayout) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (ar, ac) = ta.rows_cols();
            let (br, bc) = tb.rows_cols();
            let (m, k, n) = match layout {
                MatLayout::Nn => {
                    assert_eq!(ac, br, "matmul NN inner mismatch");
                    (ar, ac, bc)
                }
                MatLayout::Nt => {
                    assert_eq!(ac, bc, "matmul NT inner mismatch");
                    (ar, ac, br)
                }
                MatLayout::Tn => {
                    assert_eq!(ar, br, "matmul TN inner mismatch");
                    (ac, ar, bc)
                }
            };
            let mut out = Tensor::zeros(&[m, n]);
            kernels::matmul(layout, ta.data(), tb.data(), m, k, n, out.data_mut());
            out
        };
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul { a, b, layout }, ng, None)
    }

    // ---- nonlinearities ----

    pub fn gelu(&self, x: NodeId) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            let mut out = Tensor::zeros(tx.shape());
            kernels::map(tx.data(), out.data_mut(), gelu_fwd);
            out
        };
        let ng = self.needs(x);
        self.push(out, Op::Gelu(x), ng, None)
    }

    pub fn softmax_rows(&self, x: NodeId) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            let (_, d) = tx.rows_cols();
            let mut out = tx.clone();
            kernels::softmax_rows(out.data_mut(), d);
            out
        };
        let ng = self.needs(x);
        self.push(out, Op::SoftmaxRows(x), ng, None)
    }

    pub fn layernorm_rows(&self, x: NodeId, eps: f64) -> NodeId {
        let eps = E::from_f64(eps);
        let (out, inv_std) = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            let (n, d) = tx.rows_cols();
            let mut out = Tensor::zeros(tx.shape());
            let mut inv_std = vec![E::ZERO; n];
            let inv_d = E::ONE / E::from_f64(d as f64);
            for ((orow, xrow), is) in
                out.data_mut().chunks_mut(d).zip(tx.data().chunks(d)).zip(inv_std.iter_mut())
            {
                let mut mean = E::ZERO;
                for &v in xrow {
                    mean += v;
                }
                mean *= inv_d;
                let mut var = E::ZERO;
                for &v in xrow {
                    let c = v - mean;
                    var = var + c * c;
                }
                var *= inv_d;
                let istd = E::ONE / (var + eps).sqrt();
                *is = istd;
                for (o, &v) in orow.iter_mut().zip(xrow) {
                    *o = (v - mean) * istd;
                }
            }
            (out, inv_std)
        };
        let ng = self.needs(x);
        let saved = if ng { inv_std } else { Vec::new() };
        self.push(out, Op::LayerNormRows { x, inv_std: saved }, ng, None)
    }

    // ---- reductions ----

    pub fn sum_all(&self, x: NodeId) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            Tensor::scalar(kernels::sum_all(nodes[x.0].value.data()))
        };
        let ng = self.needs(x);
        self.push(out, Op::SumAll(x), ng, None)
    }

    pub fn mean_all(&self, x: NodeId) -> NodeId {
        let n = self.nodes.borrow()[x.0].value.numel();
        let s = self.sum_all(x);
        self.scale(s, E::ONE / E::from_f64(n as f64))
    }

    // ---- structure ----

    pub fn concat_rows(&self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (ar, ac) = ta.rows_cols();
            let (br, bc) = tb.rows_cols();
            assert_eq!(ac, bc, "concat_rows width mismatch");
            let mut data = Vec::with_capacity((ar + br) * ac);
            data.extend_from_slice(ta.data());
            data.extend_from_slice(tb.data());
            Tensor::new(&[ar + br, ac], data).unwrap()
        };
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::ConcatRows(a, b), ng, None)
    }

    pub fn slice_rows(&self, x: NodeId, start: usize, len: usize) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            let (n, d) = tx.rows_cols();
            assert!(start + len <= n, "slice_rows out of range");
            Tensor::new(&[len, d], tx.data()[start * d..(start + len) * d].to_vec()).unwrap()
        };
        let ng = self.needs(x);
        self.push(out, Op::SliceRows { x, start }, ng, None)
    }

    pub fn slice_cols(&self, x: NodeId, start: usize, len: usize) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            let (n, d) = tx.rows_cols();
            assert!(start + len <= d, "slice_cols out of range");
            let mut data = Vec::with_capacity(n * len);
            for row in tx.data().chunks(d) {
                data.extend_from_slice(&row[start..start + len]);
            }
            Tensor::new(&[n, len], data).unwrap()
        };
        let ng = self.needs(x);
        self.push(out, Op::SliceCols { x, start }, ng, None)
    }

    /// Gather rows by index (duplicates allowed); backward scatter-adds.
    /// Covers both token-layout permutations and embedding-table lookups.
    pub fn select_rows(&self, x: NodeId, indices: Arc<Vec<usize>>) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            let (n, d) = tx.rows_cols();
            let mut data = Vec::with_capacity(indices.len() * d);
            for &i in indices.iter() {
                assert!(i < n, "select_rows index {i} out of {n}");
                data.extend_from_slice(&tx.data()[i * d..(i + 1) * d]);
            }
            Tensor::new(&[indices.len(), d], data).unwrap()
        };
        let ng = self.needs(x);
        self.push(out, Op::SelectRows { x, indices }, ng, None)
    }

    // ---- positional / attention ----

    /// Rotate adjacent channel pairs within each head by per-row angles.
    /// cos/sin: [n, head_dim/2], shared across heads.
    pub fn rope(&self, x: NodeId, cos: Arc<Tensor<E>>, sin: Arc<Tensor<E>>, heads: usize) -> NodeId {
        let out = {
            let nodes = self.nodes.borrow();
            let tx = &nodes[x.0].value;
            let (n, d) = tx.rows_cols();
            assert_eq!(d % heads, 0, "rope head split");
            let hd = d / heads;
            assert_eq!(hd % 2, 0, "rope needs even head_dim");
            assert_eq!(cos.shape(), &[n, hd / 2], "rope table shape");
            let mut out = tx.clone();
            rope_forward(out.data_mut(), cos.data(), sin.data(), n, d, heads, false);
            out
        };
        let ng = self.needs(x);
        self.push(out, Op::Rope { x, cos, sin, heads }, ng, None)
    }

    /// Fused multi-head scaled-dot-product attention over the full sequence.
    /// q: [n, d], k/v: [m, d]; softmax over keys per head.
    pub fn attention(&self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> NodeId {
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        let keep_probs = (self.grad_enabled && ng) || self.capture_attn;
        let (out, probs) = {
            let nodes = self.nodes.borrow();
            let (tq, tk, tv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
            let (n, d) = tq.rows_cols();
            let (m, dk) = tk.rows_cols();
            let (mv, dv) = tv.rows_cols();
            assert!(d == dk && d == dv && m == mv, "attention shape mismatch");
            assert_eq!(d % heads, 0, "attention head split");
            attention_forward(tq, tk, tv, n, m, d, heads, keep_probs)
        };
        self.push(out, Op::Attention { q, k, v, heads, probs }, ng, None)
    }

    /// Saved softmax probabilities of an attention node: [heads, n, m],
    /// present when gradients or capture were enabled.
    pub fn attention_probs(&self, id: NodeId) -> Option<Tensor<E>> {
        match &self.nodes.borrow()[id.0].op {
            Op::Attention { probs, .. } => probs.clone(),
            _ => None,
        }
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Returns per-parameter gradients;
    /// parameters not reachable from the loss are reported as zeros by
    /// [`Gradients::get`].
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<E>> {
        let nodes = self.nodes.borrow();
        if !nodes[loss.0].value.is_scalar() {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        if !self.grad_enabled {
            return Err(Error::Autodiff("backward on an inference tape".into()));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(E::ONE));

        for i in (0..=loss.0).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop_node(&nodes, i, &g, &mut grads);
            if nodes[i].param.is_some() {
                grads[i] = Some(g); // keep for the caller
            }
        }

        let max_pid = nodes.iter().filter_map(|n| n.param).max().map_or(0, |p| p + 1);
        let mut by_param: Vec<Option<Tensor<E>>> = (0..max_pid).map(|_| None).collect();
        for (i, node) in nodes.iter().enumerate() {
            if let Some(pid) = node.param {
                if let Some(g) = grads[i].take() {
                    match &mut by_param[pid] {
                        slot @ None => *slot = Some(g),
                        Some(acc) => accumulate_into(acc, &g),
                    }
                }
            }
        }
        Ok(Gradients { by_param })
    }
}

fn gelu_fwd<E: Scalar>(x: E) -> E {
    // tanh approximation of GELU
    let c = E::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = E::from_f64(0.044715);
    let half = E::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (E::ONE + u.tanh())
}

fn gelu_bwd<E: Scalar>(x: E) -> E {
    let c = E::from_f64(0.797_884_560_802_865_4);
    let a = E::from_f64(0.044715);
    let half = E::from_f64(0.5);
    let three = E::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = E::ONE - t * t;
    half * (E::ONE + t) + half * x * sech2 * c * (E::ONE + three * a * x * x)
}

fn rope_forward<E: Scalar>(
    data: &mut [E],
    cos: &[E],
    sin: &[E],
    n: usize,
    d: usize,
    heads: usize,
    inverse: bool,
) {
    let hd = d / heads;
    let pairs = hd / 2;
    for row in 0..n {
        let base = row * d;
        for h in 0..heads {
            let hoff = base + h * hd;
            for j in 0..pairs {
                let c = cos[row * pairs + j];
                let s = if inverse { -sin[row * pairs + j] } else { sin[row * pairs + j] };
                let x0 = data[hoff + 2 * j];
                let x1 = data[hoff + 2 * j + 1];
                data[hoff + 2 * j] = x0 * c - x1 * s;
                data[hoff + 2 * j + 1] = x0 * s + x1 * c;
            }
        }
    }
}

fn copy_cols<E: Scalar>(src: &[E], rows: usize, stride: usize, c0: usize, width: usize) -> Vec<E> {
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        out.extend_from_slice(&src[r * stride + c0..r * stride + c0 + width]);
    }
    out
}

fn copy_cols_scaled<E: Scalar>(
    src: &[E],
    rows: usize,
    stride: usize,
    c0: usize,
    width: usize,
    scale: E,
) -> Vec<E> {
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        out.extend(src[r * stride + c0..r * stride + c0 + width].iter().map(|&v| v * scale));
    }
    out
}

fn add_into_cols<E: Scalar>(dst: &mut [E], rows: usize, stride: usize, c0: usize, src: &[E], width: usize) {
    for r in 0..rows {
        let d = &mut dst[r * stride + c0..r * stride + c0 + width];
        for (o, &v) in d.iter_mut().zip(&src[r * width..(r + 1) * width]) {
            *o += v;
        }
    }
}

fn attention_forward<E: Scalar>(
    tq: &Tensor<E>,
    tk: &Tensor<E>,
    tv: &Tensor<E>,
    n: usize,
    m: usize,
    d: usize,
    heads: usize,
    keep_probs: bool,
) -> (Tensor<E>, Option<Tensor<E>>) {
    let hd = d / heads;
    let alpha = E::from_f64(1.0 / (hd as f64).sqrt());
    let mut out = Tensor::zeros(&[n, d]);
    let mut probs = if keep_probs { Some(Tensor::zeros(&[heads, n, m])) } else { None };
    let mut scratch = vec![E::ZERO; n * m];
    for h in 0..heads {
        // 1/sqrt(hd) folds into the Q copy, sparing an n*m pass.
        let qh = copy_cols_scaled(tq.data(), n, d, h * hd, hd, alpha);
        let kh = copy_cols(tk.data(), m, d, h * hd, hd);
        let vh = copy_cols(tv.data(), m, d, h * hd, hd);
        // Scores as Q K^T via a materialized transpose: the wide NN kernel
        // is far friendlier to caches than per-pair dot products.
        let kh_t = kernels::transpose(&kh, m, hd);
        let scores: &mut [E] = match probs.as_mut() {
            Some(p) => &mut p.data_mut()[h * n * m..(h + 1) * n * m],
            None => &mut scratch,
        };
        kernels::matmul(MatLayout::Nn, &qh, &kh_t, n, hd, m, scores);
        kernels::softmax_rows(scores, m);
        let mut oh = vec![E::ZERO; n * hd];
        kernels::matmul(MatLayout::Nn, scores, &vh, n, m, hd, &mut oh);
        add_into_cols(out.data_mut(), n, d, h * hd, &oh, hd);
    }
    (out, probs)
}

fn accumulate_into<E: Scalar>(acc: &mut Tensor<E>, g: &Tensor<E>) {
    assert_eq!(acc.shape(), g.shape());
    for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += v;
    }
}

fn add_grad<E: Scalar>(
    nodes: &[Node<E>],
    grads: &mut [Option<Tensor<E>>],
    target: NodeId,
    g: Tensor<E>,
) {
    if !nodes[target.0].needs_grad {
        return;
    }
    match &mut grads[target.0] {
        slot @ None => *slot = Some(g),
        Some(acc) => accumulate_into(acc, &g),
    }
}

fn backprop_node<E: Scalar>(
    nodes: &[Node<E>],
    i: usize,
    g: &Tensor<E>,
    grads: &mut [Option<Tensor<E>>],
) {
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            add_grad(nodes, grads, *a, g.clone());
            add_grad(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            add_grad(nodes, grads, *a, g.clone());
            add_grad(nodes, grads, *b, g.map_values(|v| -v));
        }
        Op::Mul(a, b) => {
            if nodes[a.0].needs_grad {
                let mut ga = Tensor::zeros(g.shape());
                kernels::zip(g.data(), nodes[b.0].value.data(), ga.data_mut(), |x, y| x * y);
                add_grad(nodes, grads, *a, ga);
            }
            if nodes[b.0].needs_grad {
                let mut gb = Tensor::zeros(g.shape());
                kernels::zip(g.data(), nodes[a.0].value.data(), gb.data_mut(), |x, y| x * y);
                add_grad(nodes, grads, *b, gb);
            }
        }
        Op::Scale(a, c) => {
            let c = *c;
            add_grad(nodes, grads, *a, g.map_values(|v| v * c));
        }
        Op::AddRowVec(x, r) => {
            add_grad(nodes, grads, *x, g.clone());
            if nodes[r.0].needs_grad {
                let (_, d) = nodes[x.0].value.rows_cols();
                let mut gr = Tensor::zeros(nodes[r.0].value.shape());
                for row in g.data().chunks(d) {
                    for (o, &v) in gr.data_mut().iter_mut().zip(row) {
                        *o += v;
                    }
                }
                add_grad(nodes, grads, *r, gr);
            }
        }
        Op::MulRowVec(x, r) => {
            let (_, d) = nodes[x.0].value.rows_cols();
            if nodes[x.0].needs_grad {
                let mut gx = Tensor::zeros(g.shape());
                let rv = nodes[r.0].value.data();
                for (grow, orow) in g.data().chunks(d).zip(gx.data_mut().chunks_mut(d)) {
                    for ((o, &gv), &r) in orow.iter_mut().zip(grow).zip(rv) {
                        *o = gv * r;
                    }
                }
                add_grad(nodes, grads, *x, gx);
            }
            if nodes[r.0].needs_grad {
                let mut gr = Tensor::zeros(nodes[r.0].value.shape());
                let xv = nodes[x.0].value.data();
                for (grow, xrow) in g.data().chunks(d).zip(xv.chunks(d)) {
                    for ((o, &gv), &x) in gr.data_mut().iter_mut().zip(grow).zip(xrow) {
                        *o += gv * x;
                    }
                }
                add_grad(nodes, grads, *r, gr);
            }
        }
        Op::MatMul { a, b, layout } => {
            let ta = &nodes[a.0].value;
            let tb = &nodes[b.0].value;
            let (gr, gc) = g.rows_cols();
            match layout {
                MatLayout::Nn => {
                    // C = A B: dA = G B^T, dB = A^T G
                    let (ar, ac) = ta.rows_cols();
                    let (br, bc) = tb.rows_cols();
                    if nodes[a.0].needs_grad {
                        let mut ga = Tensor::zeros(&[ar, ac]);
                        kernels::matmul(MatLayout::Nt, g.data(), tb.data(), gr, gc, br, ga.data_mut());
                        add_grad(nodes, grads, *a, ga);
                    }
                    if nodes[b.0].needs_grad {
                        let mut gb = Tensor::zeros(&[br, bc]);
                        kernels::matmul(MatLayout::Tn, ta.data(), g.data(), ac, ar, gc, gb.data_mut());
                        add_grad(nodes, grads, *b, gb);
                    }
                }
                MatLayout::Nt => {
                    // C = A B^T: dA = G B, dB = G^T A
                    let (ar, ac) = ta.rows_cols();
                    let (br, bc) = tb.rows_cols();
                    if nodes[a.0].needs_grad {
                        let mut ga = Tensor::zeros(&[ar, ac]);
                        kernels::matmul(MatLayout::Nn, g.data(), tb.data(), gr, gc, bc, ga.data_mut());
                        add_grad(nodes, grads, *a, ga);
                    }
                    if nodes[b.0].needs_grad {
                        let mut gb = Tensor::zeros(&[br, bc]);
                        kernels::matmul(MatLayout::Tn, g.data(), ta.data(), gc, gr, ac, gb.data_mut());
                        add_grad(nodes, grads, *b, gb);
                    }
                }
                MatLayout::Tn => {
                    // C = A^T B: dA = B G^T, dB = A G
                    let (ar, ac) = ta.rows_cols(); // stored [k, m]
                    let (br, bc) = tb.rows_cols();
                    if nodes[a.0].needs_grad {
                        let mut ga = Tensor::zeros(&[ar, ac]);
                        kernels::matmul(MatLayout::Nt, tb.data(), g.data(), br, bc, gr, ga.data_mut());
                        add_grad(nodes, grads, *a, ga);
                    }
                    if nodes[b.0].needs_grad {
                        let mut gb = Tensor::zeros(&[br, bc]);
                        kernels::matmul(MatLayout::Nn, ta.data(), g.data(), ar, ac, gc, gb.data_mut());
                        add_grad(nodes, grads, *b, gb);
                    }
                }
            }
        }
        Op::Gelu(x) => {
            let mut gx = Tensor::zeros(g.shape());
            kernels::zip(g.data(), nodes[x.0].value.data(), gx.data_mut(), |gv, xv| {
                gv * gelu_bwd(xv)
            });
            add_grad(nodes, grads, *x, gx);
        }
        Op::SoftmaxRows(x) => {
            let y = &nodes[i].value;
            let (_, d) = y.rows_cols();
            let mut gx = Tensor::zeros(g.shape());
            for ((grow, yrow), orow) in
                g.data().chunks(d).zip(y.data().chunks(d)).zip(gx.data_mut().chunks_mut(d))
            {
                let mut dotv = E::ZERO;
                for (&gv, &yv) in grow.iter().zip(yrow) {
                    dotv = dotv + gv * yv;
                }
                for ((o, &gv), &yv) in orow.iter_mut().zip(grow).zip(yrow) {
                    *o = yv * (gv - dotv);
                }
            }
            add_grad(nodes, grads, *x, gx);
        }
        Op::LayerNormRows { x, inv_std } => {
            let y = &nodes[i].value;
            let (_, d) = y.rows_cols();
            let inv_d = E::ONE / E::from_f64(d as f64);
            let mut gx = Tensor::zeros(g.shape());
            for (((grow, yrow), orow), &istd) in g
                .data()
                .chunks(d)
                .zip(y.data().chunks(d))
                .zip(gx.data_mut().chunks_mut(d))
                .zip(inv_std.iter())
            {
                let mut mean_g = E::ZERO;
                let mut mean_gy = E::ZERO;
                for (&gv, &yv) in grow.iter().zip(yrow) {
                    mean_g += gv;
                    mean_gy = mean_gy + gv * yv;
                }
                mean_g *= inv_d;
                mean_gy *= inv_d;
                for ((o, &gv), &yv) in orow.iter_mut().zip(grow).zip(yrow) {
                    *o = istd * (gv - mean_g - yv * mean_gy);
                }
            }
            add_grad(nodes, grads, *x, gx);
        }
        Op::SumAll(x) => {
            let gv = g.item();
            add_grad(nodes, grads, *x, Tensor::full(nodes[x.0].value.shape(), gv));
        }
        Op::ConcatRows(a, b) => {
            let (ar, ac) = nodes[a.0].value.rows_cols();
            let (br, _) = nodes[b.0].value.rows_cols();
            if nodes[a.0].needs_grad {
                let ga = Tensor::new(&[ar, ac], g.data()[..ar * ac].to_vec()).unwrap();
                add_grad(nodes, grads, *a, ga);
            }
            if nodes[b.0].needs_grad {
                let gb = Tensor::new(&[br, ac], g.data()[ar * ac..].to_vec()).unwrap();
                add_grad(nodes, grads, *b, gb);
            }
        }
        Op::SliceRows { x, start } => {
            let (n, d) = nodes[x.0].value.rows_cols();
            let (gn, _) = g.rows_cols();
            let mut gx = Tensor::zeros(&[n, d]);
            gx.data_mut()[start * d..(start + gn) * d].copy_from_slice(g.data());
            add_grad(nodes, grads, *x, gx);
        }
        Op::SliceCols { x, start } => {
            let (n, d) = nodes[x.0].value.rows_cols();
            let (_, gw) = g.rows_cols();
            let mut gx = Tensor::zeros(&[n, d]);
            for (r, grow) in g.data().chunks(gw).enumerate() {
                gx.data_mut()[r * d + start..r * d + start + gw].copy_from_slice(grow);
            }
            add_grad(nodes, grads, *x, gx);
        }
        Op::SelectRows { x, indices } => {
            let (n, d) = nodes[x.0].value.rows_cols();
            let mut gx = Tensor::zeros(&[n, d]);
            for (&idx, grow) in indices.iter().zip(g.data().chunks(d)) {
                let dst = &mut gx.data_mut()[idx * d..(idx + 1) * d];
                for (o, &v) in dst.iter_mut().zip(grow) {
                    *o += v;
                }
            }
            add_grad(nodes, grads, *x, gx);
        }
        Op::Rope { x, cos, sin, heads } => {
            let (n, d) = g.rows_cols();
            let mut gx = g.clone();
            rope_forward(gx.data_mut(), cos.data(), sin.data(), n, d, *heads, true);
            add_grad(nodes, grads, *x, gx);
        }
        Op::Attention { q, k, v, heads, probs } => {
            let probs = probs.as_ref().expect("attention probs were not kept for backward");
            let tq = &nodes[q.0].value;
            let tk = &nodes[k.0].value;
            let tv = &nodes[v.0].value;
            let (n, d) = tq.rows_cols();
            let (m, _) = tk.rows_cols();
            let heads = *heads;
            let hd = d / heads;
            let alpha = E::from_f64(1.0 / (hd as f64).sqrt());

            let mut gq = Tensor::zeros(&[n, d]);
            let mut gk = Tensor::zeros(&[m, d]);
            let mut gv = Tensor::zeros(&[m, d]);
            let mut dp = vec![E::ZERO; n * m];
            let mut dvh_t = vec![E::ZERO; hd * m];
            let mut dqh = vec![E::ZERO; n * hd];
            let mut dkh_t = vec![E::ZERO; hd * m];
            for h in 0..heads {
                let ph = &probs.data()[h * n * m..(h + 1) * n * m];
                let goh = copy_cols(g.data(), n, d, h * hd, hd);
                // Forward used Q scaled by alpha; mirroring that here keeps
                // dS free of the scale (it lands on dQ and dK symmetrically).
                let qh = copy_cols_scaled(tq.data(), n, d, h * hd, hd, alpha);
                let kh = copy_cols(tk.data(), m, d, h * hd, hd);
                let vh = copy_cols(tv.data(), m, d, h * hd, hd);
                // dV_h = P^T dO_h, computed transposed so the long dimension
                // streams through the wide NN kernel: dV^T = dO^T P.
                let goh_t = kernels::transpose(&goh, n, hd);
                kernels::matmul(MatLayout::Nn, &goh_t, ph, hd, n, m, &mut dvh_t);
                let dvh = kernels::transpose(&dvh_t, hd, m);
                add_into_cols(gv.data_mut(), m, d, h * hd, &dvh, hd);
                // dP = dO_h V_h^T, then dS = P .* (dP - rowsum(dP .* P))
                let vh_t = kernels::transpose(&vh, m, hd);
                kernels::matmul(MatLayout::Nn, &goh, &vh_t, n, hd, m, &mut dp);
                for (dprow, prow) in dp.chunks_mut(m).zip(ph.chunks(m)) {
                    let mut rowdot = E::ZERO;
                    for (&dpv, &pv) in dprow.iter().zip(prow) {
                        rowdot = rowdot + dpv * pv;
                    }
                    for (dpv, &pv) in dprow.iter_mut().zip(prow) {
                        *dpv = pv * (*dpv - rowdot);
                    }
                }
                // dQ_h = alpha dS K_h ; dK_h = dS^T (alpha Q_h) as dK^T = Q^T dS.
                kernels::matmul(MatLayout::Nn, &dp, &kh, n, m, hd, &mut dqh);
                for v in dqh.iter_mut() {
                    *v *= alpha;
                }
                add_into_cols(gq.data_mut(), n, d, h * hd, &dqh, hd);
                let qh_t = kernels::transpose(&qh, n, hd);
                kernels::matmul(MatLayout::Nn, &qh_t, &dp, hd, n, m, &mut dkh_t);
                let dkh = kernels::transpose(&dkh_t, hd, m);
                add_into_cols(gk.data_mut(), m, d, h * hd, &dkh, hd);
            }
            add_grad(nodes, grads, *q, gq);
            add_grad(nodes, grads, *k, gk);
            add_grad(nodes, grads, *v, gv);
        }
    }
}
