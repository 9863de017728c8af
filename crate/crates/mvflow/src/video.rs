//! Deterministic video tokenization.
//!
//! Stands in for a learned video VAE while preserving the structure the
//! positional scheme depends on: 4x temporal compression into latent frames
//! (frame 0 replicated four times channel-wise, then frames 4k-3..4k stacked
//! per latent k) and an s x s spatial patch grid. The mapping is exactly
//! invertible, so video acceptance checks stay bit-exact.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const TEMPORAL_GROUP: usize = 4;
pub const RGB: usize = 3;

/// Raw RGB frames, `frames[f][y][x][c]` flattened.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub width: usize,
    pub height: usize,
    pub fps: u32,
    /// F * H * W * 3 bytes.
    pub pixels: Vec<u8>,
}

impl VideoClip {
    pub fn new(frames: usize, height: usize, width: usize, fps: u32) -> Self {
        Self { width, height, fps, pixels: vec![0; frames * height * width * RGB] }
    }

    pub fn frames(&self) -> usize {
        self.pixels.len() / (self.height * self.width * RGB)
    }

    pub fn validate(&self, stride: usize) -> Result<()> {
        let f = self.frames();
        if f == 0 || f % TEMPORAL_GROUP != 1 {
            return Err(Error::Data(format!("frame count {f} must be 1 mod {TEMPORAL_GROUP}")));
        }
        if stride == 0 || self.height % stride != 0 || self.width % stride != 0 {
            return Err(Error::Data(format!(
                "geometry {}x{} not divisible by stride {stride}",
                self.height, self.width
            )));
        }
        if self.pixels.len() != f * self.height * self.width * RGB {
            return Err(Error::Data("pixel buffer length mismatch".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn pixel(&self, f: usize, y: usize, x: usize) -> [u8; 3] {
        let base = ((f * self.height + y) * self.width + x) * RGB;
        [self.pixels[base], self.pixels[base + 1], self.pixels[base + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, f: usize, y: usize, x: usize, rgb: [u8; 3]) {
        let base = ((f * self.height + y) * self.width + x) * RGB;
        self.pixels[base..base + 3].copy_from_slice(&rgb);
    }
}

/// Latent geometry for a clip under a given spatial stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentGeometry {
    pub t_lat: usize,
    pub h_lat: usize,
    pub w_lat: usize,
    pub stride: usize,
}

impl LatentGeometry {
    pub fn of(frames: usize, height: usize, width: usize, stride: usize) -> Result<Self> {
        if frames == 0 || frames % TEMPORAL_GROUP != 1 {
            return Err(Error::Data(format!(
                "frame count {frames} must be 1 mod {TEMPORAL_GROUP}"
            )));
        }
        if stride == 0 || height % stride != 0 || width % stride != 0 {
            return Err(Error::Data(format!(
                "geometry {height}x{width} not divisible by stride {stride}"
            )));
        }
        Ok(Self {
            t_lat: (frames - 1) / TEMPORAL_GROUP + 1,
            h_lat: height / stride,
            w_lat: width / stride,
            stride,
        })
    }

    pub fn tokens(&self) -> usize {
        self.t_lat * self.h_lat * self.w_lat
    }

    /// Channels per patch vector: 3 RGB x 4 stacked frames x s^2 pixels.
    pub fn patch_dim(&self) -> usize {
        RGB * TEMPORAL_GROUP * self.stride * self.stride
    }

    /// (t, h, w) of each token row, row-major over (t, h, w).
    pub fn token_coords(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.tokens());
        for t in 0..self.t_lat {
            for h in 0..self.h_lat {
                for w in 0..self.w_lat {
                    out.push((t, h, w));
                }
            }
        }
        out
    }
}

/// Tokens produced by `((F-1)/4 + 1) * (H/s) * (W/s)`.
pub fn video_token_count(frames: usize, height: usize, width: usize, stride: usize) -> Result<usize> {
    Ok(LatentGeometry::of(frames, height, width, stride)?.tokens())
}

#[inline]
pub fn byte_to_unit(b: u8) -> f32 {
    b as f32 * (2.0 / 255.0) - 1.0
}

#[inline]
pub fn unit_to_byte(v: f32) -> u8 {
    let x = (v.clamp(-1.0, 1.0) + 1.0) * 127.5;
    (x + 0.5).floor() as u8
}

/// Source frame index feeding channel-group `g` of latent frame `k`.
#[inline]
fn source_frame(k: usize, g: usize) -> usize {
    if k == 0 {
        0 // frame 0 replicated four times
    } else {
        4 * k - 3 + g
    }
}

/// Flatten a clip into patch vectors: one row per latent token, row-major
/// over (t, h, w); within a row, channel-group-major over the four stacked
/// frames, then pixel scan order inside the s x s patch, then RGB.
pub fn patchify<E: Scalar>(clip: &VideoClip, stride: usize) -> Result<Tensor<E>> {
    clip.validate(stride)?;
    let geo = LatentGeometry::of(clip.frames(), clip.height, clip.width, stride)?;
    let pd = geo.patch_dim();
    let mut data = vec![E::ZERO; geo.tokens() * pd];
    let per_patch_px = stride * stride;
    for (row, &(t, h, w)) in geo.token_coords().iter().enumerate() {
        let base = row * pd;
        for g in 0..TEMPORAL_GROUP {
            let f = source_frame(t, g);
            for py in 0..stride {
                for px in 0..stride {
                    let rgb = clip.pixel(f, h * stride + py, w * stride + px);
                    let o = base + g * per_patch_px * RGB + (py * stride + px) * RGB;
                    data[o] = E::from_f64(byte_to_unit(rgb[0]) as f64);
                    data[o + 1] = E::from_f64(byte_to_unit(rgb[1]) as f64);
                    data[o + 2] = E::from_f64(byte_to_unit(rgb[2]) as f64);
                }
            }
        }
    }
    Tensor::new(&[geo.tokens(), pd], data)
}

/// Exact inverse of [`patchify`]: channel groups of latent frames k >= 1
/// restore frames 4k-3..4k; frame 0 is read from replica 0 of latent 0.
pub fn unpatchify<E: Scalar>(
    patches: &Tensor<E>,
    frames: usize,
    height: usize,
    width: usize,
    stride: usize,
    fps: u32,
) -> Result<VideoClip> {
    let geo = LatentGeometry::of(frames, height, width, stride)?;
    let pd = geo.patch_dim();
    if patches.shape() != [geo.tokens(), pd] {
        return Err(Error::Shape(format!(
            "patch tensor {:?} does not match geometry {:?}",
            patches.shape(),
            geo
        )));
    }
    let mut clip = VideoClip::new(frames, height, width, fps);
    let per_patch_px = stride * stride;
    let d = patches.data();
    for (row, &(t, h, w)) in geo.token_coords().iter().enumerate() {
        let base = row * pd;
        for g in 0..TEMPORAL_GROUP {
            let f = source_frame(t, g);
            if t == 0 && g > 0 {
                continue; // replicas of frame 0
            }
            for py in 0..stride {
                for px in 0..stride {
                    let o = base + g * per_patch_px * RGB + (py * stride + px) * RGB;
                    let rgb = [
                        unit_to_byte(d[o].to_f64() as f32),
                        unit_to_byte(d[o + 1].to_f64() as f32),
                        unit_to_byte(d[o + 2].to_f64() as f32),
                    ];
                    clip.set_pixel(f, h * stride + py, w * stride + px, rgb);
                }
            }
        }
    }
    Ok(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, tag};
    use rand_core::RngCore;

    fn random_clip(frames: usize, height: usize, width: usize, seed: u64) -> VideoClip {
        let mut clip = VideoClip::new(frames, height, width, 16);
        let mut rng = stream(seed, &[tag("video-tests")]);
        for b in clip.pixels.iter_mut() {
            *b = (rng.next_u32() & 0xff) as u8;
        }
        clip
    }

    #[test]
    fn token_count_reference_geometry() {
        assert_eq!(video_token_count(81, 480, 832, 16).unwrap(), 32_760);
        assert_eq!(video_token_count(1, 16, 16, 4).unwrap(), 16);
        assert_eq!(video_token_count(17, 32, 32, 4).unwrap(), 320);
    }

    #[test]
    fn token_count_matches_emission_loop() {
        // Independent enumeration of emitted tokens.
        let (f, h, w, s) = (17usize, 32usize, 32usize, 4usize);
        let mut count = 0usize;
        let t_lat = (f - 1) / 4 + 1;
        for _t in 0..t_lat {
            for _y in (0..h).step_by(s) {
                for _x in (0..w).step_by(s) {
                    count += 1;
                }
            }
        }
        assert_eq!(count, video_token_count(f, h, w, s).unwrap());
        assert_eq!(count, 320);
    }

    #[test]
    fn precondition_violations() {
        assert!(video_token_count(16, 32, 32, 4).is_err()); // F not 1 mod 4
        assert!(video_token_count(17, 30, 32, 4).is_err()); // H not divisible
        assert!(video_token_count(0, 32, 32, 4).is_err());
    }

    #[test]
    fn byte_unit_roundtrip_all_values() {
        for b in 0..=255u8 {
            assert_eq!(unit_to_byte(byte_to_unit(b)), b, "byte {b}");
        }
    }

    #[test]
    fn patchify_roundtrip_bit_exact() {
        let clip = random_clip(9, 16, 24, 5);
        let patches: Tensor<f32> = patchify(&clip, 4).unwrap();
        let back = unpatchify(&patches, 9, 16, 24, 4, 16).unwrap();
        assert_eq!(clip, back);
    }

    #[test]
    fn constant_color_clip_gives_identical_patches() {
        let mut clip = VideoClip::new(5, 8, 8, 16);
        for b in clip.pixels.iter_mut() {
            *b = 137;
        }
        let patches: Tensor<f32> = patchify(&clip, 4).unwrap();
        let (rows, pd) = patches.rows_cols();
        let first = &patches.data()[..pd];
        for r in 1..rows {
            assert_eq!(&patches.data()[r * pd..(r + 1) * pd], first);
        }
    }

    #[test]
    fn five_frame_clip_partitions_frames() {
        // F=5 -> 2 latent frames; latent 1 stacks source frames 1..=4.
        let clip = random_clip(5, 4, 4, 6);
        let patches: Tensor<f32> = patchify(&clip, 4).unwrap();
        let geo = LatentGeometry::of(5, 4, 4, 4).unwrap();
        assert_eq!(geo.t_lat, 2);
        let pd = geo.patch_dim();
        let per_patch_px = 16;
        // Row 1 is latent frame 1; its group g holds source frame 1+g.
        for g in 0..4 {
            for p in 0..per_patch_px {
                let (y, x) = (p / 4, p % 4);
                let want = clip.pixel(1 + g, y, x);
                for c in 0..3 {
                    let got = patches.data()[pd + g * per_patch_px * RGB + p * RGB + c];
                    assert_eq!(got, byte_to_unit(want[c]));
                }
            }
        }
        // Latent frame 0 replicates frame 0 in all four groups.
        for g in 0..4 {
            for p in 0..per_patch_px {
                let (y, x) = (p / 4, p % 4);
                let want = clip.pixel(0, y, x);
                for c in 0..3 {
                    let got = patches.data()[g * per_patch_px * RGB + p * RGB + c];
                    assert_eq!(got, byte_to_unit(want[c]));
                }
            }
        }
    }
}
