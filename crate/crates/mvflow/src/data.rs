//! Synthetic paired corpus: procedural skeleton motions, stick-figure
//! rendering with per-joint marker colors, templated captions, and the
//! binary dataset container.
//!
//! Determinism contract: every record is a pure function of
//! (kind, seed, geometry), so corpora regenerate bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::motion::{matrix_to_rot6d, MotionClip, MotionFrame, JOINTS};
use crate::rng::{stream, tag, uniform_f64};
use crate::video::VideoClip;

// ---- skeleton ----

pub const PARENTS: [usize; JOINTS] = [
    0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

/// Bone offset from parent in the parent's frame, meters. Pelvis entry is
/// the rest height of the root above the ground plane.
const OFFSETS: [[f64; 3]; JOINTS] = [
    [0.0, 0.95, 0.0],    // 0 pelvis (root rest position)
    [0.09, -0.05, 0.0],  // 1 left hip
    [-0.09, -0.05, 0.0], // 2 right hip
    [0.0, 0.12, 0.0],    // 3 spine1
    [0.0, -0.40, 0.0],   // 4 left knee
    [0.0, -0.40, 0.0],   // 5 right knee
    [0.0, 0.12, 0.0],    // 6 spine2
    [0.0, -0.40, 0.0],   // 7 left ankle
    [0.0, -0.40, 0.0],   // 8 right ankle
    [0.0, 0.12, 0.0],    // 9 spine3
    [0.0, -0.05, 0.10],  // 10 left foot
    [0.0, -0.05, 0.10],  // 11 right foot
    [0.0, 0.10, 0.0],    // 12 neck
    [0.07, 0.08, 0.0],   // 13 left collar
    [-0.07, 0.08, 0.0],  // 14 right collar
    [0.0, 0.14, 0.0],    // 15 head
    [0.10, 0.0, 0.0],    // 16 left shoulder
    [-0.10, 0.0, 0.0],   // 17 right shoulder
    [0.24, 0.0, 0.0],    // 18 left elbow
    [-0.24, 0.0, 0.0],   // 19 right elbow
    [0.22, 0.0, 0.0],    // 20 left wrist
    [-0.22, 0.0, 0.0],   // 21 right wrist
    [0.08, 0.0, 0.0],    // 22 left hand
    [-0.08, 0.0, 0.0],   // 23 right hand
];

pub const L_SHOULDER: usize = 16;
pub const L_ELBOW: usize = 18;
pub const L_WRIST: usize = 20;
pub const L_HAND: usize = 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MotionKind {
    Wave,
    Walk,
    Squat,
    Spin,
    Jump,
    Idle,
}

impl MotionKind {
    pub const ALL: [MotionKind; 6] = [
        MotionKind::Wave,
        MotionKind::Walk,
        MotionKind::Squat,
        MotionKind::Spin,
        MotionKind::Jump,
        MotionKind::Idle,
    ];

    pub fn index(self) -> usize {
        match self {
            MotionKind::Wave => 0,
            MotionKind::Walk => 1,
            MotionKind::Squat => 2,
            MotionKind::Spin => 3,
            MotionKind::Jump => 4,
            MotionKind::Idle => 5,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or_else(|| Error::Data(format!("bad motion kind {i}")))
    }

    pub fn label(self) -> &'static str {
        match self {
            MotionKind::Wave => "wave",
            MotionKind::Walk => "walk",
            MotionKind::Squat => "squat",
            MotionKind::Spin => "spin",
            MotionKind::Jump => "jump",
            MotionKind::Idle => "idle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::Data(format!("unknown motion kind '{s}'")))
    }
}

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
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

fn apply3(m: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Per-kind randomized motion parameters, drawn once per clip.
struct MotionParams {
    amp: f64,
    freq: f64,
    phase: f64,
    extra: f64,
}

fn draw_params(kind: MotionKind, seed: u64) -> MotionParams {
    let mut rng = stream(seed, &[tag("motion-params"), kind.index() as u64]);
    let mut range = |lo: f64, hi: f64| lo + uniform_f64(&mut rng) * (hi - lo);
    match kind {
        MotionKind::Wave => MotionParams {
            amp: range(0.5, 0.8),
            freq: range(1.2, 2.0),
            phase: range(0.0, std::f64::consts::TAU),
            extra: range(0.3, 0.5),
        },
        MotionKind::Walk => MotionParams {
            amp: range(0.35, 0.55), // leg swing, radians
            freq: range(1.2, 1.8),
            phase: 0.0,
            extra: range(0.28, 0.42), // speed m/s
        },
        MotionKind::Squat => MotionParams {
            amp: range(0.18, 0.30), // root dip, meters
            freq: range(0.7, 1.1),
            phase: 0.0,
            extra: range(0.5, 0.9), // knee bend, radians
        },
        MotionKind::Spin => MotionParams {
            amp: 0.0,
            freq: range(0.3, 0.6), // revolutions per second
            phase: range(0.0, std::f64::consts::TAU),
            extra: 0.0,
        },
        MotionKind::Jump => MotionParams {
            amp: range(0.12, 0.22), // hop height
            freq: range(1.0, 1.5),
            phase: 0.0,
            extra: range(0.3, 0.6), // knee flex
        },
        MotionKind::Idle => MotionParams { amp: 0.0, freq: 0.0, phase: 0.0, extra: 0.0 },
    }
}

/// Forward kinematics over the fixed skeleton with per-kind joint-angle
/// programs. Joint positions come out of the same pass as the rotations,
/// so rigid limb lengths hold by construction.
pub fn gen_motion_clip(kind: MotionKind, seed: u64, frames: usize, fps: u32) -> Result<MotionClip> {
    if frames == 0 || frames % 4 != 1 {
        return Err(Error::Data(format!("frame count {frames} must be 1 mod 4")));
    }
    let p = draw_params(kind, seed);
    let mut beta = [0.0f32; 10];
    {
        let mut rng = stream(seed, &[tag("beta"), kind.index() as u64]);
        for v in beta.iter_mut() {
            *v = (uniform_f64(&mut rng) * 0.4 - 0.2) as f32;
        }
    }

    let walk_span = p.extra * (frames.max(2) - 1) as f64 / fps as f64;
    let mut clip = MotionClip { frames: Vec::with_capacity(frames), fps };
    for fi in 0..frames {
        let tau = fi as f64 / fps as f64;
        let cycle = std::f64::consts::TAU * p.freq * tau + p.phase;

        let mut local = [IDENTITY; JOINTS];
        let mut root = [0.0, OFFSETS[0][1], 0.0];
        let mut root_rot = IDENTITY;
        match kind {
            MotionKind::Idle => {}
            MotionKind::Wave => {
                // Raise the left arm and oscillate the forearm.
                local[L_SHOULDER] = rot_z(1.1 + 0.15 * cycle.sin());
                local[L_ELBOW] = rot_z(p.amp * cycle.sin() + p.extra);
                local[L_WRIST] = rot_z(0.4 * p.amp * (cycle + 0.8).sin());
            }
            MotionKind::Walk => {
                let swing = p.amp * cycle.sin();
                local[1] = rot_z(swing); // left hip
                local[2] = rot_z(-swing); // right hip
                local[4] = rot_z((p.amp * 0.9) * (1.0 - cycle.cos()) * 0.5); // left knee
                local[5] = rot_z((p.amp * 0.9) * (1.0 + cycle.cos()) * 0.5); // right knee
                local[L_SHOULDER] = rot_z(-0.5 * swing);
                local[17] = rot_z(-0.5 * swing);
                root[0] = -walk_span / 2.0 + p.extra * tau;
                root[1] += 0.02 * (2.0 * cycle).sin();
            }
            MotionKind::Squat => {
                let dip = 0.5 * (1.0 - cycle.cos());
                root[1] -= p.amp * dip;
                let bend = p.extra * dip;
                local[1] = rot_z(bend); // thighs splay
                local[2] = rot_z(-bend);
                local[4] = rot_z(-1.6 * bend); // knees fold back
                local[5] = rot_z(1.6 * bend);
            }
            MotionKind::Spin => {
                root_rot = rot_y(std::f64::consts::TAU * p.freq * tau + p.phase);
                // Arms slightly out so the spin reads in projection.
                local[L_SHOULDER] = rot_z(0.5);
                local[17] = rot_z(-0.5);
            }
            MotionKind::Jump => {
                let s = cycle.sin();
                let lift = s * s;
                root[1] += p.amp * lift;
                let flex = p.extra * (1.0 - lift);
                local[1] = rot_z(flex * 0.4);
                local[2] = rot_z(-flex * 0.4);
                local[4] = rot_z(-flex);
                local[5] = rot_z(flex);
                local[L_SHOULDER] = rot_z(0.4 + 0.6 * lift);
                local[17] = rot_z(-0.4 - 0.6 * lift);
            }
        }

        let mut global = [IDENTITY; JOINTS];
        let mut pos = [[0.0f64; 3]; JOINTS];
        global[0] = matmul3(&root_rot, &local[0]);
        pos[0] = root;
        for j in 1..JOINTS {
            let parent = PARENTS[j];
            let off = apply3(&global[parent], &OFFSETS[j]);
            pos[j] = [
                pos[parent][0] + off[0],
                pos[parent][1] + off[1],
                pos[parent][2] + off[2],
            ];
            global[j] = matmul3(&global[parent], &local[j]);
        }

        let mut frame = MotionFrame::zero();
        frame.beta = beta;
        let g6 = matrix_to_rot6d(&global[0]);
        for (c, v) in g6.iter().enumerate() {
            frame.gamma[c] = *v as f32;
        }
        for j in 0..JOINTS {
            let t6 = matrix_to_rot6d(&local[j]);
            for (c, v) in t6.iter().enumerate() {
                frame.theta[j][c] = *v as f32;
            }
            for c in 0..3 {
                frame.joints[j][c] = pos[j][c] as f32;
            }
        }
        frame.root = frame.joints[0];
        clip.frames.push(frame);
    }
    Ok(clip)
}

// ---- rendering ----

// Tunables for the marker size and the detector's color gate; values picked
// by sweeping skeleton_overlay_error over the generator's kinds.
const MARKER_SCALE: f64 = 1.0 / 36.0;
const MATCH_RADIUS_CFG: f64 = 90.0;

/// World window mapped onto the image, meters.
const WORLD_X: (f64, f64) = (-0.95, 0.95);
const WORLD_Y: (f64, f64) = (-0.05, 1.85);

pub const FIGURE_COLORS: [(&str, [u8; 3]); 8] = [
    ("red", [185, 60, 60]),
    ("green", [60, 170, 60]),
    ("blue", [70, 90, 200]),
    ("yellow", [180, 180, 50]),
    ("violet", [160, 60, 180]),
    ("teal", [50, 170, 170]),
    ("orange", [200, 130, 40]),
    ("gray", [140, 140, 140]),
];

pub const BACKGROUND_COLORS: [(&str, [u8; 3]); 8] = [
    ("dark", [12, 12, 12]),
    ("night", [18, 18, 40]),
    ("forest", [14, 34, 18]),
    ("brick", [40, 18, 14]),
    ("slate", [30, 34, 38]),
    ("plum", [34, 16, 34]),
    ("sand", [44, 38, 24]),
    ("sea", [10, 30, 44]),
];

/// Fixed, bright, well-separated marker colors per joint; hue order is
/// permuted so neighboring joints get distant hues.
pub fn joint_color(j: usize) -> [u8; 3] {
    let hue = ((j * 7) % JOINTS) as f64 / JOINTS as f64;
    hsv_to_rgb(hue, 1.0, 1.0)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8]
}

fn marker_radius(width: usize) -> f64 {
    width as f64 * MARKER_SCALE
}

/// Orthographic projection of a world point to pixel coordinates.
pub fn project(p: &[f32; 3], width: usize, height: usize) -> (f64, f64) {
    let px = (p[0] as f64 - WORLD_X.0) / (WORLD_X.1 - WORLD_X.0) * width as f64;
    let py = (WORLD_Y.1 - p[1] as f64) / (WORLD_Y.1 - WORLD_Y.0) * height as f64;
    (px, py)
}

fn blend(dst: &mut [u8], src: [u8; 3], alpha: f64) {
    for c in 0..3 {
        let d = dst[c] as f64;
        dst[c] = (d + (src[c] as f64 - d) * alpha).round().clamp(0.0, 255.0) as u8;
    }
}

fn draw_segment(
    img: &mut [u8],
    width: usize,
    height: usize,
    a: (f64, f64),
    b: (f64, f64),
    color: [u8; 3],
    radius: f64,
) {
    let (x0, y0) = a;
    let (x1, y1) = b;
    let minx = (x0.min(x1) - radius - 1.0).floor().max(0.0) as usize;
    let maxx = (x0.max(x1) + radius + 1.0).ceil().min(width as f64 - 1.0) as usize;
    let miny = (y0.min(y1) - radius - 1.0).floor().max(0.0) as usize;
    let maxy = (y0.max(y1) + radius + 1.0).ceil().min(height as f64 - 1.0) as usize;
    let dx = x1 - x0;
    let dy = y1 - y0;
    let len2 = dx * dx + dy * dy;
    for y in miny..=maxy {
        for x in minx..=maxx {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((cx - x0) * dx + (cy - y0) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (qx, qy) = (x0 + t * dx, y0 + t * dy);
            let dist = ((cx - qx).powi(2) + (cy - qy).powi(2)).sqrt();
            let cover = (radius + 0.5 - dist).clamp(0.0, 1.0);
            if cover > 0.0 {
                blend(&mut img[(y * width + x) * 3..(y * width + x) * 3 + 3], color, cover);
            }
        }
    }
}

/// Caption-visible style: figure (limb) color and background color indices
/// drawn from the style seed.
pub fn style_of(seed: u64) -> (usize, usize) {
    let mut rng = stream(seed, &[tag("style")]);
    let fig = (uniform_f64(&mut rng) * FIGURE_COLORS.len() as f64) as usize;
    let bg = (uniform_f64(&mut rng) * BACKGROUND_COLORS.len() as f64) as usize;
    (fig.min(FIGURE_COLORS.len() - 1), bg.min(BACKGROUND_COLORS.len() - 1))
}

/// Rasterize a motion clip: seeded background, limbs in the seeded figure
/// color, and a fixed bright marker per joint (the detection targets).
pub fn render_clip(clip: &MotionClip, style_seed: u64, height: usize, width: usize) -> Result<VideoClip> {
    if width < 8 || height < 8 {
        return Err(Error::Data(format!("degenerate image size {width}x{height}")));
    }
    let (fig_idx, bg_idx) = style_of(style_seed);
    let fig = FIGURE_COLORS[fig_idx].1;
    let bg = BACKGROUND_COLORS[bg_idx].1;
    let mut video = VideoClip::new(clip.frames.len(), height, width, clip.fps);
    let frame_px = height * width * 3;
    let marker_r = marker_radius(width);
    let bone_r = width as f64 / 64.0;
    for (fi, frame) in clip.frames.iter().enumerate() {
        let img = &mut video.pixels[fi * frame_px..(fi + 1) * frame_px];
        for px in img.chunks_mut(3) {
            px.copy_from_slice(&bg);
        }
        for j in 1..JOINTS {
            let a = project(&frame.joints[PARENTS[j]], width, height);
            let b = project(&frame.joints[j], width, height);
            draw_segment(img, width, height, a, b, fig, bone_r);
        }
        // Markers are resolved nearest-center per pixel, so overlapping
        // joints never blend into a third color: each pixel shows exactly
        // one marker, which keeps the centroid oracle unbiased.
        let centers: Vec<(f64, f64)> = frame.joints.iter().map(|p| project(p, width, height)).collect();
        for y in 0..height {
            for x in 0..width {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut best = usize::MAX;
                let mut best_d = f64::MAX;
                for (j, &(jx, jy)) in centers.iter().enumerate() {
                    let d = ((cx - jx).powi(2) + (cy - jy).powi(2)).sqrt();
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                let cover = (marker_r + 0.5 - best_d).clamp(0.0, 1.0);
                if cover > 0.0 {
                    blend(
                        &mut img[(y * width + x) * 3..(y * width + x) * 3 + 3],
                        joint_color(best),
                        cover,
                    );
                }
            }
        }
    }
    Ok(video)
}

// ---- centroid oracle ----

/// Per-joint weighted centroids of marker-colored pixels in one frame.
/// Joints whose markers are occluded or off-screen come back as `None`.
pub fn detect_joint_centroids(
    video: &VideoClip,
    frame: usize,
) -> Vec<Option<(f64, f64)>> {
    let (w, h) = (video.width, video.height);
    let mut acc = vec![(0.0f64, 0.0f64, 0.0f64); JOINTS];
    for y in 0..h {
        for x in 0..w {
            let px = video.pixel(frame, y, x);
            // Match against the closest marker color.
            let mut best = usize::MAX;
            let mut best_d = f64::MAX;
            for j in 0..JOINTS {
                let c = joint_color(j);
                let d = (0..3)
                    .map(|k| (px[k] as f64 - c[k] as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            const MATCH_RADIUS: f64 = MATCH_RADIUS_CFG;
            if best_d < MATCH_RADIUS {
                let wgt = (MATCH_RADIUS - best_d) * (MATCH_RADIUS - best_d);
                acc[best].0 += wgt * (x as f64 + 0.5);
                acc[best].1 += wgt * (y as f64 + 0.5);
                acc[best].2 += wgt;
            }
        }
    }
    acc.iter()
        .map(|&(sx, sy, sw)| if sw > 1e-9 { Some((sx / sw, sy / sw)) } else { None })
        .collect()
}

/// Mean pixel error between detected markers and a reference clip's
/// projected joints, with the fraction of joints detected.
pub fn skeleton_overlay_error(video: &VideoClip, reference: &MotionClip) -> (f64, f64) {
    let frames = video.frames().min(reference.frames.len());
    let mut err_sum = 0.0;
    let mut err_n = 0usize;
    let mut detected = 0usize;
    let mut total = 0usize;
    for fi in 0..frames {
        let centroids = detect_joint_centroids(video, fi);
        for (j, c) in centroids.iter().enumerate() {
            total += 1;
            if let Some((cx, cy)) = c {
                detected += 1;
                let (px, py) = project(&reference.frames[fi].joints[j], video.width, video.height);
                err_sum += ((cx - px).powi(2) + (cy - py).powi(2)).sqrt();
                err_n += 1;
            }
        }
    }
    let mean_err = if err_n > 0 { err_sum / err_n as f64 } else { f64::INFINITY };
    (mean_err, detected as f64 / total.max(1) as f64)
}

// ---- captions ----

pub const TOKEN_PAD: u16 = 0;
pub const TOKEN_A: u16 = 1;
pub const TOKEN_FIGURE: u16 = 2;
pub const TOKEN_IN: u16 = 3;
pub const TOKEN_SCENE: u16 = 4;
pub const COLOR_BASE: u16 = 5; // 8 colors
pub const BACKGROUND_BASE: u16 = 13; // 8 backgrounds
pub const ACTION_BASE: u16 = 21; // 6 actions
pub const VOCAB_SIZE: usize = 27;

/// Template: "a <color> figure <action> in a <background> scene".
/// The action token is a bijection with the motion kind.
pub fn gen_caption(kind: MotionKind, style_seed: u64) -> Vec<u16> {
    let (fig_idx, bg_idx) = style_of(style_seed);
    vec![
        TOKEN_A,
        COLOR_BASE + fig_idx as u16,
        TOKEN_FIGURE,
        ACTION_BASE + kind.index() as u16,
        TOKEN_IN,
        TOKEN_A,
        BACKGROUND_BASE + bg_idx as u16,
        TOKEN_SCENE,
    ]
}

pub fn caption_action(caption: &[u16]) -> Option<MotionKind> {
    caption
        .iter()
        .find(|&&t| t >= ACTION_BASE && (t as usize) < ACTION_BASE as usize + MotionKind::ALL.len())
        .and_then(|&t| MotionKind::from_index((t - ACTION_BASE) as usize).ok())
}

// ---- records and container ----

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub motion: MotionClip,
    pub video: VideoClip,
    pub caption: Vec<u16>,
    pub kind: MotionKind,
    pub seed: u64,
}

pub fn gen_record(
    kind: MotionKind,
    seed: u64,
    frames: usize,
    height: usize,
    width: usize,
    fps: u32,
) -> Result<DatasetRecord> {
    let motion = gen_motion_clip(kind, seed, frames, fps)?;
    let video = render_clip(&motion, seed, height, width)?;
    let caption = gen_caption(kind, seed);
    Ok(DatasetRecord { motion, video, caption, kind, seed })
}

const MAGIC: &[u8; 4] = b"HMVD";
const VERSION: u32 = 1;

/// Container layout, all integers little-endian:
/// magic "HMVD", version u32, record count u64, then per record a header
/// (F, H, W, fps, kind: u32 each; seed: u64; caption length: u32), the
/// motion arrays as f32 in beta/theta/gamma/root/joints order (frame-major
/// within each array), raw RGB bytes, and caption ids as u16.
pub fn write_dataset(records: &[DatasetRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        let f = r.motion.frames.len();
        if r.video.frames() != f {
            return Err(Error::Data("record video/motion frame mismatch".into()));
        }
        for v in [f as u32, r.video.height as u32, r.video.width as u32, r.motion.fps] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(r.kind.index() as u32).to_le_bytes())?;
        w.write_all(&r.seed.to_le_bytes())?;
        w.write_all(&(r.caption.len() as u32).to_le_bytes())?;
        let mut put = |x: f32| w.write_all(&x.to_le_bytes());
        for fr in &r.motion.frames {
            for &v in &fr.beta {
                put(v)?;
            }
        }
        for fr in &r.motion.frames {
            for row in &fr.theta {
                for &v in row {
                    put(v)?;
                }
            }
        }
        for fr in &r.motion.frames {
            for &v in &fr.gamma {
                put(v)?;
            }
        }
        for fr in &r.motion.frames {
            for &v in &fr.root {
                put(v)?;
            }
        }
        for fr in &r.motion.frames {
            for row in &fr.joints {
                for &v in row {
                    put(v)?;
                }
            }
        }
        w.write_all(&r.video.pixels)?;
        for &t in &r.caption {
            w.write_all(&t.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated dataset: wanted {n} bytes at offset {}",
                self.at
            )));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, at: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("bad magic: not a dataset container".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let count = c.u64()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let f = c.u32()? as usize;
        let h = c.u32()? as usize;
        let w = c.u32()? as usize;
        let fps = c.u32()?;
        let kind = MotionKind::from_index(c.u32()? as usize)?;
        let seed = c.u64()?;
        let caption_len = c.u32()? as usize;
        if f == 0 || h == 0 || w == 0 {
            return Err(Error::Format("record with empty geometry".into()));
        }
        let mut motion = MotionClip { frames: vec![MotionFrame::zero(); f], fps };
        for fr in motion.frames.iter_mut() {
            for v in fr.beta.iter_mut() {
                *v = c.f32()?;
            }
        }
        for fr in motion.frames.iter_mut() {
            for row in fr.theta.iter_mut() {
                for v in row.iter_mut() {
                    *v = c.f32()?;
                }
            }
        }
        for fr in motion.frames.iter_mut() {
            for v in fr.gamma.iter_mut() {
                *v = c.f32()?;
            }
        }
        for fr in motion.frames.iter_mut() {
            for v in fr.root.iter_mut() {
                *v = c.f32()?;
            }
        }
        for fr in motion.frames.iter_mut() {
            for row in fr.joints.iter_mut() {
                for v in row.iter_mut() {
                    *v = c.f32()?;
                }
            }
        }
        let pixels = c.take(f * h * w * 3)?.to_vec();
        let video = VideoClip { width: w, height: h, fps, pixels };
        let mut caption = Vec::with_capacity(caption_len);
        for _ in 0..caption_len {
            caption.push(c.u16()?);
        }
        records.push(DatasetRecord { motion, video, caption, kind, seed });
    }
    if c.at != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes after records", buf.len() - c.at)));
    }
    Ok(records)
}

/// Deterministic corpus: record i uses kind i % kinds and seed base+i.
pub fn gen_corpus(
    count: usize,
    kinds: &[MotionKind],
    seed: u64,
    frames: usize,
    height: usize,
    width: usize,
    fps: u32,
) -> Result<Vec<DatasetRecord>> {
    if kinds.is_empty() {
        return Err(Error::Data("need at least one motion kind".into()));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let kind = kinds[i % kinds.len()];
        out.push(gen_record(kind, seed.wrapping_add(i as u64), frames, height, width, fps)?);
    }
    Ok(out)
}
