//! Dense compute kernels.
//!
//! Every kernel has a sequential core; with the `parallel` feature the
//! public entry points fan work out over rayon when it is large enough to
//! pay for the bridge. Parallelism is always over independent output rows,
//! with a fixed sequential reduction order inside each row, so the parallel
//! and sequential paths produce bitwise-identical results.

use crate::scalar::Scalar;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Work below this many output elements stays sequential.
const PAR_MIN: usize = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatLayout {
    /// C[m,n] = A[m,k] B[k,n]
    Nn,
    /// C[m,n] = A[m,k] B[n,k]^T
    Nt,
    /// C[m,n] = A[k,m]^T B[k,n]
    Tn,
}

// Hot loops use plain mul+add: `mul_add` lowers to a libm call on targets
// without native FMA, which is ruinous, while mul+add autovectorizes
// everywhere.

#[inline(always)]
fn axpy<E: Scalar>(out: &mut [E], a: E, x: &[E]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = *o + v * a;
    }
}

/// Dot product with eight independent accumulators; the summation order is
/// fixed by the code, not the thread count, so results never depend on
/// parallelism.
#[inline(always)]
fn dot<E: Scalar>(a: &[E], b: &[E]) -> E {
    let mut acc = [E::ZERO; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (ai, bi) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for j in 0..8 {
            acc[j] = acc[j] + ai[j] * bi[j];
        }
    }
    let mut tail = E::ZERO;
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    (((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]))) + tail
}

/// Narrow output rows accumulate in a fixed-size local so the whole row
/// lives in registers across the k loop.
fn mm_row_nn_narrow<E: Scalar, const W: usize>(i: usize, out_row: &mut [E], a: &[E], b: &[E], k: usize) {
    let mut acc = [E::ZERO; W];
    let a_row = &a[i * k..(i + 1) * k];
    for (kk, &av) in a_row.iter().enumerate() {
        let brow = &b[kk * W..(kk + 1) * W];
        for j in 0..W {
            acc[j] = acc[j] + av * brow[j];
        }
    }
    out_row.copy_from_slice(&acc);
}

fn mm_row_nn<E: Scalar>(i: usize, out_row: &mut [E], a: &[E], b: &[E], k: usize, n: usize) {
    match n {
        8 => return mm_row_nn_narrow::<E, 8>(i, out_row, a, b, k),
        16 => return mm_row_nn_narrow::<E, 16>(i, out_row, a, b, k),
        32 => return mm_row_nn_narrow::<E, 32>(i, out_row, a, b, k),
        _ => {}
    }
    out_row.fill(E::ZERO);
    let a_row = &a[i * k..(i + 1) * k];
    for (kk, &av) in a_row.iter().enumerate() {
        axpy(out_row, av, &b[kk * n..kk * n + n]);
    }
}

/// Row-major transpose into a fresh buffer.
pub fn transpose<E: Scalar>(src: &[E], rows: usize, cols: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

fn mm_row_nt<E: Scalar>(i: usize, out_row: &mut [E], a: &[E], b: &[E], k: usize) {
    let a_row = &a[i * k..(i + 1) * k];
    for (j, o) in out_row.iter_mut().enumerate() {
        *o = dot(a_row, &b[j * k..(j + 1) * k]);
    }
}

/// Transposed-A product over one contiguous column block of C:
/// C[i, j0..j1] = sum_k A[k,i] B[k, j0..j1]. The k-outer order keeps the
/// block of C cache-resident while A and B stream through once.
fn mm_tn_block<E: Scalar>(
    out: &mut [E],
    j0: usize,
    a: &[E],
    b: &[E],
    k: usize,
    m: usize,
    n: usize,
) {
    let width = out.len() / m;
    out.fill(E::ZERO);
    for kk in 0..k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_blk = &b[kk * n + j0..kk * n + j0 + width];
        for (i, &av) in a_row.iter().enumerate() {
            axpy(&mut out[i * width..(i + 1) * width], av, b_blk);
        }
    }
}

fn scatter_block<E: Scalar>(dst: &mut [E], block: &[E], j0: usize, m: usize, n: usize) {
    let width = block.len() / m;
    for i in 0..m {
        dst[i * n + j0..i * n + j0 + width].copy_from_slice(&block[i * width..(i + 1) * width]);
    }
}

pub fn matmul_seq<E: Scalar>(layout: MatLayout, a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(out.len(), m * n);
    match layout {
        MatLayout::Nn => {
            for (i, row) in out.chunks_mut(n).enumerate() {
                mm_row_nn(i, row, a, b, k, n);
            }
        }
        MatLayout::Nt => {
            for (i, row) in out.chunks_mut(n).enumerate() {
                mm_row_nt(i, row, a, b, k);
            }
        }
        MatLayout::Tn => {
            let mut block = vec![E::ZERO; m * n.min(TN_BLOCK)];
            let mut j0 = 0;
            while j0 < n {
                let width = (n - j0).min(TN_BLOCK);
                block.truncate(m * width);
                mm_tn_block(&mut block, j0, a, b, k, m, n);
                scatter_block(out, &block, j0, m, n);
                j0 += width;
            }
        }
    }
}

/// Column-block width for the transposed-A kernel; 64 columns keeps the
/// working set of C under 32 KB for m <= 128.
const TN_BLOCK: usize = 64;

#[cfg(feature = "parallel")]
pub fn matmul_par<E: Scalar>(layout: MatLayout, a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(out.len(), m * n);
    match layout {
        MatLayout::Nn => out
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| mm_row_nn(i, row, a, b, k, n)),
        MatLayout::Nt => out
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| mm_row_nt(i, row, a, b, k)),
        MatLayout::Tn => {
            // Each task owns a column block; element sums stay in k order,
            // so the result is bitwise independent of the threading.
            let blocks: Vec<(usize, usize)> = {
                let mut v = Vec::new();
                let mut j0 = 0;
                while j0 < n {
                    v.push((j0, (n - j0).min(TN_BLOCK)));
                    j0 += TN_BLOCK;
                }
                v
            };
            let results: Vec<(usize, usize, Vec<E>)> = blocks
                .par_iter()
                .map(|&(j0, width)| {
                    let mut block = vec![E::ZERO; m * width];
                    mm_tn_block(&mut block, j0, a, b, k, m, n);
                    (j0, width, block)
                })
                .collect();
            for (j0, _width, block) in results {
                scatter_block(out, &block, j0, m, n);
            }
        }
    }
}

pub fn matmul<E: Scalar>(layout: MatLayout, a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    #[cfg(feature = "parallel")]
    if m * n >= PAR_MIN && m > 1 {
        matmul_par(layout, a, b, m, k, n, out);
        return;
    }
    matmul_seq(layout, a, b, m, k, n, out);
}

fn softmax_row<E: Scalar>(row: &mut [E]) {
    let mut max = row[0];
    for &v in row.iter() {
        max = max.maximum(v);
    }
    // Exponentiate and accumulate the sum in one pass.
    let mut acc = [E::ZERO; 8];
    let chunks = row.len() / 8;
    for i in 0..chunks {
        let blk = &mut row[i * 8..i * 8 + 8];
        for j in 0..8 {
            blk[j] = (blk[j] - max).exp();
            acc[j] = acc[j] + blk[j];
        }
    }
    let mut sum = E::ZERO;
    for i in chunks * 8..row.len() {
        row[i] = (row[i] - max).exp();
        sum = sum + row[i];
    }
    for a in acc {
        sum = sum + a;
    }
    let inv = E::ONE / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub fn softmax_rows_seq<E: Scalar>(x: &mut [E], cols: usize) {
    for row in x.chunks_mut(cols) {
        softmax_row(row);
    }
}

#[cfg(feature = "parallel")]
pub fn softmax_rows_par<E: Scalar>(x: &mut [E], cols: usize) {
    x.par_chunks_mut(cols).for_each(|row| softmax_row(row));
}

pub fn softmax_rows<E: Scalar>(x: &mut [E], cols: usize) {
    #[cfg(feature = "parallel")]
    if x.len() >= PAR_MIN {
        softmax_rows_par(x, cols);
        return;
    }
    softmax_rows_seq(x, cols);
}

/// out[i] = f(a[i]) over independent chunks.
pub fn map_seq<E: Scalar, F: Fn(E) -> E + Sync>(a: &[E], out: &mut [E], f: F) {
    for (o, &v) in out.iter_mut().zip(a) {
        *o = f(v);
    }
}

#[cfg(feature = "parallel")]
pub fn map_par<E: Scalar, F: Fn(E) -> E + Sync>(a: &[E], out: &mut [E], f: F) {
    out.par_chunks_mut(4096)
        .zip(a.par_chunks(4096))
        .for_each(|(oc, ac)| {
            for (o, &v) in oc.iter_mut().zip(ac) {
                *o = f(v);
            }
        });
}

pub fn map<E: Scalar, F: Fn(E) -> E + Sync>(a: &[E], out: &mut [E], f: F) {
    #[cfg(feature = "parallel")]
    if a.len() >= PAR_MIN {
        map_par(a, out, f);
        return;
    }
    map_seq(a, out, f);
}

/// out[i] = f(a[i], b[i]).
pub fn zip_seq<E: Scalar, F: Fn(E, E) -> E + Sync>(a: &[E], b: &[E], out: &mut [E], f: F) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = f(x, y);
    }
}

#[cfg(feature = "parallel")]
pub fn zip_par<E: Scalar, F: Fn(E, E) -> E + Sync>(a: &[E], b: &[E], out: &mut [E], f: F) {
    out.par_chunks_mut(4096)
        .zip(a.par_chunks(4096))
        .zip(b.par_chunks(4096))
        .for_each(|((oc, ac), bc)| {
            for ((o, &x), &y) in oc.iter_mut().zip(ac).zip(bc) {
                *o = f(x, y);
            }
        });
}

pub fn zip<E: Scalar, F: Fn(E, E) -> E + Sync>(a: &[E], b: &[E], out: &mut [E], f: F) {
    #[cfg(feature = "parallel")]
    if a.len() >= PAR_MIN {
        zip_par(a, b, out, f);
        return;
    }
    zip_seq(a, b, out, f);
}

/// Fixed left-to-right sum; the reduction order never depends on threading.
pub fn sum_all<E: Scalar>(a: &[E]) -> E {
    let mut acc = E::ZERO;
    for &v in a {
        acc += v;
    }
    acc
}

/// Run `f(row_index)` for each index in 0..rows, parallel when warranted.
/// `f` must write only to state it owns per index.
pub fn for_each_index_seq<F: Fn(usize) + Sync>(rows: usize, f: F) {
    for i in 0..rows {
        f(i);
    }
}

#[cfg(feature = "parallel")]
pub fn for_each_index_par<F: Fn(usize) + Sync + Send>(rows: usize, f: F) {
    (0..rows).into_par_iter().for_each(f);
}

pub fn for_each_index<F: Fn(usize) + Sync + Send>(rows: usize, work_per_row: usize, f: F) {
    #[cfg(feature = "parallel")]
    if rows * work_per_row >= PAR_MIN && rows > 1 {
        for_each_index_par(rows, f);
        return;
    }
    for_each_index_seq(rows, f);
}
