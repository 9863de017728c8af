//! Quantitative checks: pose-recovery error, cross-modal attention
//! alignment, and motion smoothness.

use crate::error::{Error, Result};
use crate::motion::{MotionClip, JOINTS};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MM_PER_M: f64 = 1000.0;

/// Mean per-joint position error in millimeters, after aligning the root
/// joint translation per frame.
pub fn mpjpe(pred: &MotionClip, gt: &MotionClip) -> Result<f64> {
    check_clips(pred, gt)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (pf, gf) in pred.frames.iter().zip(&gt.frames) {
        for j in 0..JOINTS {
            let mut d2 = 0.0;
            for c in 0..3 {
                let p = (pf.joints[j][c] - pf.joints[0][c]) as f64;
                let g = (gf.joints[j][c] - gf.joints[0][c]) as f64;
                d2 += (p - g) * (p - g);
            }
            sum += d2.sqrt();
            n += 1;
        }
    }
    Ok(sum / n as f64 * MM_PER_M)
}

/// MPJPE after the optimal per-frame similarity transform
/// (rotation + scale + translation via orthogonal Procrustes).
pub fn pa_mpjpe(pred: &MotionClip, gt: &MotionClip) -> Result<f64> {
    check_clips(pred, gt)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (pf, gf) in pred.frames.iter().zip(&gt.frames) {
        let p: Vec<[f64; 3]> =
            pf.joints.iter().map(|j| [j[0] as f64, j[1] as f64, j[2] as f64]).collect();
        let g: Vec<[f64; 3]> =
            gf.joints.iter().map(|j| [j[0] as f64, j[1] as f64, j[2] as f64]).collect();
        let aligned = procrustes_align(&p, &g);
        for (a, b) in aligned.iter().zip(&g) {
            let mut d2 = 0.0;
            for c in 0..3 {
                d2 += (a[c] - b[c]) * (a[c] - b[c]);
            }
            sum += d2.sqrt();
            n += 1;
        }
    }
    Ok(sum / n as f64 * MM_PER_M)
}

fn check_clips(pred: &MotionClip, gt: &MotionClip) -> Result<()> {
    if pred.frames.len() != gt.frames.len() {
        return Err(Error::Data(format!(
            "frame count mismatch: {} vs {}",
            pred.frames.len(),
            gt.frames.len()
        )));
    }
    if pred.frames.is_empty() {
        return Err(Error::Data("empty clips".into()));
    }
    Ok(())
}

fn centroid(pts: &[[f64; 3]]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for p in pts {
        for i in 0..3 {
            c[i] += p[i];
        }
    }
    for v in c.iter_mut() {
        *v /= pts.len() as f64;
    }
    c
}

/// Map `p` onto `g` with the least-squares similarity transform
/// s R (p - mean_p) + mean_g.
pub fn procrustes_align(p: &[[f64; 3]], g: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let pc = centroid(p);
    let gc = centroid(g);
    // Cross-covariance H = sum (p - pc)(g - gc)^T and the spread of p.
    let mut h = [[0.0f64; 3]; 3];
    let mut p_var = 0.0;
    for (pp, gg) in p.iter().zip(g) {
        let dp = [pp[0] - pc[0], pp[1] - pc[1], pp[2] - pc[2]];
        let dg = [gg[0] - gc[0], gg[1] - gc[1], gg[2] - gc[2]];
        for i in 0..3 {
            for j in 0..3 {
                h[i][j] += dp[i] * dg[j];
            }
        }
        p_var += dp[0] * dp[0] + dp[1] * dp[1] + dp[2] * dp[2];
    }
    let (u, sigma, v) = svd3(&h);
    // Reflection guard: flip the smallest singular direction if needed.
    let d = det3(&matmul3(&v, &transpose3(&u)));
    let sgn = if d < 0.0 { -1.0 } else { 1.0 };
    let r = matmul3(&v, &matmul3(&diag3(1.0, 1.0, sgn), &transpose3(&u)));
    let trace = sigma[0] + sigma[1] + sgn * sigma[2];
    let scale = if p_var > 1e-12 { trace / p_var } else { 1.0 };
    p.iter()
        .map(|pp| {
            let dp = [pp[0] - pc[0], pp[1] - pc[1], pp[2] - pc[2]];
            let rp = apply3(&r, &dp);
            [
                scale * rp[0] + gc[0],
                scale * rp[1] + gc[1],
                scale * rp[2] + gc[2],
            ]
        })
        .collect()
}

type Mat3 = [[f64; 3]; 3];

fn transpose3(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

fn matmul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, brow) in b.iter().enumerate() {
                out[i][j] += a[i][k] * brow[j];
            }
        }
    }
    out
}

fn diag3(a: f64, b: f64, c: f64) -> Mat3 {
    [[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]]
}

fn apply3(m: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: &mut [f64; 3]) -> f64 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n > 1e-300 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Jacobi eigendecomposition of a symmetric 3x3 matrix: A = Q diag(e) Q^T,
/// eigenvalues descending.
fn sym_eig3(a: &Mat3) -> (Mat3, [f64; 3]) {
    let mut m = *a;
    let mut q = diag3(1.0, 1.0, 1.0);
    for _ in 0..60 {
        // Largest off-diagonal element.
        let (mut p, mut r) = (0, 1);
        let mut big = m[0][1].abs();
        if m[0][2].abs() > big {
            big = m[0][2].abs();
            p = 0;
            r = 2;
        }
        if m[1][2].abs() > big {
            big = m[1][2].abs();
            p = 1;
            r = 2;
        }
        if big < 1e-14 {
            break;
        }
        let app = m[p][p];
        let arr = m[r][r];
        let apr = m[p][r];
        let theta = 0.5 * (arr - app) / apr;
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        let mut rot = diag3(1.0, 1.0, 1.0);
        rot[p][p] = c;
        rot[r][r] = c;
        rot[p][r] = s;
        rot[r][p] = -s;
        m = matmul3(&transpose3(&rot), &matmul3(&m, &rot));
        q = matmul3(&q, &rot);
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());
    let evals = [m[order[0]][order[0]], m[order[1]][order[1]], m[order[2]][order[2]]];
    let mut qq = [[0.0; 3]; 3];
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..3 {
            qq[i][dst] = q[i][src];
        }
    }
    (qq, evals)
}

/// SVD of a 3x3 matrix via the eigendecomposition of A^T A; handles
/// rank-deficient inputs by completing the basis with cross products.
pub fn svd3(a: &Mat3) -> (Mat3, [f64; 3], Mat3) {
    let ata = matmul3(&transpose3(a), a);
    let (v, evals) = sym_eig3(&ata);
    let sigma = [
        evals[0].max(0.0).sqrt(),
        evals[1].max(0.0).sqrt(),
        evals[2].max(0.0).sqrt(),
    ];
    let mut ucols: [[f64; 3]; 3] = [[0.0; 3]; 3];
    let mut have = [false; 3];
    for k in 0..3 {
        if sigma[k] > 1e-12 {
            let vk = [v[0][k], v[1][k], v[2][k]];
            let mut uk = apply3(a, &vk);
            for x in uk.iter_mut() {
                *x /= sigma[k];
            }
            normalize(&mut uk);
            ucols[k] = uk;
            have[k] = true;
        }
    }
    // Complete missing directions orthogonally.
    for k in 0..3 {
        if !have[k] {
            let mut cand = if have[(k + 1) % 3] && have[(k + 2) % 3] {
                cross(&ucols[(k + 1) % 3], &ucols[(k + 2) % 3])
            } else if have[(k + 1) % 3] || have[(k + 2) % 3] {
                let base = if have[(k + 1) % 3] { ucols[(k + 1) % 3] } else { ucols[(k + 2) % 3] };
                let probe =
                    if base[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
                cross(&base, &probe)
            } else {
                [
                    [1.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0],
                    [0.0, 0.0, 1.0],
                ][k]
            };
            normalize(&mut cand);
            ucols[k] = cand;
            have[k] = true;
        }
    }
    let mut u = [[0.0; 3]; 3];
    for k in 0..3 {
        for i in 0..3 {
            u[i][k] = ucols[k][i];
        }
    }
    (u, sigma, v)
}

// ---- attention alignment ----

/// Per-layer and aggregate statistics of the video-query x motion-key
/// attention mass against the 4:1 temporal diagonal.
#[derive(Clone, Debug)]
pub struct AttnAlignmentReport {
    /// E[|t_video - frame_motion / 4|] under the attention distribution.
    pub mean_offset: f64,
    /// Fraction of mass within one latent step of the diagonal.
    pub diagonal_mass: f64,
    /// (mean_offset, diagonal_mass) per captured layer.
    pub per_layer: Vec<(f64, f64)>,
}

/// Scores head-averaged cross-modal maps (one per dual block).
/// `video_t[i]` is the temporal latent coordinate of video token row i;
/// `motion_frame[j]` the source frame of motion token column j. Rows are
/// renormalized so each video query contributes a conditional distribution
/// over motion keys.
pub fn attn_diagonal_score<E: Scalar>(
    maps: &[Tensor<E>],
    video_t: &[usize],
    motion_frame: &[usize],
) -> Result<AttnAlignmentReport> {
    if maps.is_empty() {
        return Err(Error::Data("no cross-modal attention maps captured".into()));
    }
    let mut per_layer = Vec::with_capacity(maps.len());
    for map in maps {
        let (nv, nm) = map.rows_cols();
        if nv != video_t.len() || nm != motion_frame.len() {
            return Err(Error::Shape(format!(
                "map {nv}x{nm} does not match {} video / {} motion tokens",
                video_t.len(),
                motion_frame.len()
            )));
        }
        let mut offset_sum = 0.0;
        let mut mass_sum = 0.0;
        let mut rows = 0usize;
        for (i, &tv) in video_t.iter().enumerate() {
            let row = &map.data()[i * nm..(i + 1) * nm];
            let total: f64 = row.iter().map(|v| v.to_f64()).sum();
            if total <= 1e-12 {
                continue;
            }
            let mut off = 0.0;
            let mut near = 0.0;
            for (j, &fm) in motion_frame.iter().enumerate() {
                let p = row[j].to_f64() / total;
                let delta = (tv as f64 - fm as f64 / 4.0).abs();
                off += p * delta;
                if delta <= 1.0 {
                    near += p;
                }
            }
            offset_sum += off;
            mass_sum += near;
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::Data("attention map carries no mass".into()));
        }
        per_layer.push((offset_sum / rows as f64, mass_sum / rows as f64));
    }
    let mean_offset = per_layer.iter().map(|p| p.0).sum::<f64>() / per_layer.len() as f64;
    let diagonal_mass = per_layer.iter().map(|p| p.1).sum::<f64>() / per_layer.len() as f64;
    Ok(AttnAlignmentReport { mean_offset, diagonal_mass, per_layer })
}

// ---- smoothness ----

/// Mean L2 norm of the third finite difference of joint positions,
/// scaled by fps^3 (m/s^3).
pub fn jerk(clip: &MotionClip) -> Result<f64> {
    let f = clip.frames.len();
    if f < 4 {
        return Err(Error::Data(format!("jerk needs at least 4 frames, got {f}")));
    }
    let fps3 = (clip.fps as f64).powi(3);
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in 0..f - 3 {
        for j in 0..JOINTS {
            let mut d2 = 0.0;
            for c in 0..3 {
                let x0 = clip.frames[k].joints[j][c] as f64;
                let x1 = clip.frames[k + 1].joints[j][c] as f64;
                let x2 = clip.frames[k + 2].joints[j][c] as f64;
                let x3 = clip.frames[k + 3].joints[j][c] as f64;
                let d3 = x3 - 3.0 * x2 + 3.0 * x1 - x0;
                d2 += d3 * d3;
            }
            sum += d2.sqrt();
            n += 1;
        }
    }
    Ok(sum / n as f64 * fps3)
}
