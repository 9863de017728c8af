//! Run configuration: a flat, strict key=value file.
//!
//! Unknown keys are rejected, every field has a default, and serialization
//! emits a canonical ordering with shortest-roundtrip floats, so a config
//! snapshot embedded in a checkpoint reproduces byte-for-byte.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::data::MotionKind;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TaskMode};
use crate::optim::AdamWConfig;
use crate::sampling::SampleSpec;
use crate::train::TrainPlan;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,

    // model.*
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub dual_layers: usize,
    pub vocab_size: usize,
    pub text_len: usize,
    pub stride: usize,
    pub theta: f64,
    pub collision_mode: bool,
    pub unscaled_time: bool,
    pub share_modality_weights: bool,

    // data.*
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps: u32,
    pub data_count: usize,
    pub kinds: Vec<MotionKind>,

    // train.*
    pub phase1_steps: usize,
    pub phase2_steps: usize,
    pub batch_size: usize,
    pub p_text: f64,
    pub p_motion: f64,
    pub p_video: f64,
    pub paradigm_probs: [f64; 3],
    pub train_shift: f64,
    pub noise_side_time: bool,
    pub lambda_motion: f64,
    pub grad_clip: Option<f64>,
    pub checkpoint_every: usize,

    // opt.* (the reference large-scale recipe uses lr 8e-6 with AdamW;
    // that rate stalls at desk scale, and 1e-4 is still several times too
    // slow for runs of a few thousand steps, so the toy default is 1e-3)
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,

    // sample.*
    pub sample_steps: usize,
    pub sample_shift: f64,
    pub omega1: f64,
    pub omega2: f64,

    // paths.*
    pub dataset: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub metrics_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 64,
            heads: 4,
            layers: 4,
            dual_layers: 4,
            vocab_size: crate::data::VOCAB_SIZE,
            text_len: 16,
            stride: 4,
            theta: 10_000.0,
            collision_mode: false,
            unscaled_time: false,
            share_modality_weights: false,
            frames: 17,
            height: 32,
            width: 32,
            fps: 16,
            data_count: 500,
            kinds: MotionKind::ALL.to_vec(),
            phase1_steps: 300,
            phase2_steps: 2000,
            batch_size: 1,
            p_text: 0.1,
            p_motion: 0.1,
            p_video: 0.1,
            paradigm_probs: [1.0 / 3.0; 3],
            train_shift: 8.0,
            noise_side_time: true,
            lambda_motion: 1.0,
            grad_clip: None,
            checkpoint_every: 500,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.001,
            sample_steps: 50,
            sample_shift: 8.0,
            omega1: 6.0,
            omega2: 1.5,
            dataset: PathBuf::from("data.hmvd"),
            checkpoint_dir: PathBuf::from("checkpoints"),
            metrics_dir: PathBuf::from("metrics"),
        }
    }
}

impl RunConfig {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kinds =
            self.kinds.iter().map(|k| k.label()).collect::<Vec<_>>().join(",");
        let probs = self
            .paradigm_probs
            .iter()
            .map(|p| format!("{p}"))
            .collect::<Vec<_>>()
            .join(",");
        let grad_clip = match self.grad_clip {
            None => "none".to_string(),
            Some(v) => format!("{v}"),
        };
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "model.dim = {}", self.dim);
        let _ = writeln!(s, "model.heads = {}", self.heads);
        let _ = writeln!(s, "model.layers = {}", self.layers);
        let _ = writeln!(s, "model.dual_layers = {}", self.dual_layers);
        let _ = writeln!(s, "model.vocab_size = {}", self.vocab_size);
        let _ = writeln!(s, "model.text_len = {}", self.text_len);
        let _ = writeln!(s, "model.stride = {}", self.stride);
        let _ = writeln!(s, "model.theta = {}", self.theta);
        let _ = writeln!(s, "model.collision_mode = {}", self.collision_mode);
        let _ = writeln!(s, "model.unscaled_time = {}", self.unscaled_time);
        let _ = writeln!(s, "model.share_modality_weights = {}", self.share_modality_weights);
        let _ = writeln!(s, "data.frames = {}", self.frames);
        let _ = writeln!(s, "data.height = {}", self.height);
        let _ = writeln!(s, "data.width = {}", self.width);
        let _ = writeln!(s, "data.fps = {}", self.fps);
        let _ = writeln!(s, "data.count = {}", self.data_count);
        let _ = writeln!(s, "data.kinds = {kinds}");
        let _ = writeln!(s, "train.phase1_steps = {}", self.phase1_steps);
        let _ = writeln!(s, "train.phase2_steps = {}", self.phase2_steps);
        let _ = writeln!(s, "train.batch_size = {}", self.batch_size);
        let _ = writeln!(s, "train.p_text = {}", self.p_text);
        let _ = writeln!(s, "train.p_motion = {}", self.p_motion);
        let _ = writeln!(s, "train.p_video = {}", self.p_video);
        let _ = writeln!(s, "train.paradigm_probs = {probs}");
        let _ = writeln!(s, "train.shift = {}", self.train_shift);
        let _ = writeln!(s, "train.noise_side_time = {}", self.noise_side_time);
        let _ = writeln!(s, "train.lambda_motion = {}", self.lambda_motion);
        let _ = writeln!(s, "train.grad_clip = {grad_clip}");
        let _ = writeln!(s, "train.checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "opt.lr = {}", self.lr);
        let _ = writeln!(s, "opt.beta1 = {}", self.beta1);
        let _ = writeln!(s, "opt.beta2 = {}", self.beta2);
        let _ = writeln!(s, "opt.eps = {}", self.eps);
        let _ = writeln!(s, "opt.weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "sample.steps = {}", self.sample_steps);
        let _ = writeln!(s, "sample.shift = {}", self.sample_shift);
        let _ = writeln!(s, "sample.omega1 = {}", self.omega1);
        let _ = writeln!(s, "sample.omega2 = {}", self.omega2);
        let _ = writeln!(s, "paths.dataset = {}", self.dataset.display());
        let _ = writeln!(s, "paths.checkpoint_dir = {}", self.checkpoint_dir.display());
        let _ = writeln!(s, "paths.metrics_dir = {}", self.metrics_dir.display());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", lineno + 1)));
            };
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value).map_err(|e| {
                Error::Config(format!("line {}: {e}", lineno + 1))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
        }
        match key {
            "seed" => self.seed = p(key, value)?,
            "model.dim" => self.dim = p(key, value)?,
            "model.heads" => self.heads = p(key, value)?,
            "model.layers" => self.layers = p(key, value)?,
            "model.dual_layers" => self.dual_layers = p(key, value)?,
            "model.vocab_size" => self.vocab_size = p(key, value)?,
            "model.text_len" => self.text_len = p(key, value)?,
            "model.stride" => self.stride = p(key, value)?,
            "model.theta" => self.theta = p(key, value)?,
            "model.collision_mode" => self.collision_mode = p(key, value)?,
            "model.unscaled_time" => self.unscaled_time = p(key, value)?,
            "model.share_modality_weights" => self.share_modality_weights = p(key, value)?,
            "data.frames" => self.frames = p(key, value)?,
            "data.height" => self.height = p(key, value)?,
            "data.width" => self.width = p(key, value)?,
            "data.fps" => self.fps = p(key, value)?,
            "data.count" => self.data_count = p(key, value)?,
            "data.kinds" => {
                self.kinds = value
                    .split(',')
                    .map(|k| MotionKind::parse(k.trim()))
                    .collect::<Result<Vec<_>>>()?;
            }
            "train.phase1_steps" => self.phase1_steps = p(key, value)?,
            "train.phase2_steps" => self.phase2_steps = p(key, value)?,
            "train.batch_size" => self.batch_size = p(key, value)?,
            "train.p_text" => self.p_text = p(key, value)?,
            "train.p_motion" => self.p_motion = p(key, value)?,
            "train.p_video" => self.p_video = p(key, value)?,
            "train.paradigm_probs" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|v| p::<f64>(key, v.trim()))
                    .collect::<Result<Vec<_>>>()?;
                if parts.len() != 3 {
                    return Err(Error::Config("paradigm_probs wants 3 values".into()));
                }
                self.paradigm_probs = [parts[0], parts[1], parts[2]];
            }
            "train.shift" => self.train_shift = p(key, value)?,
            "train.noise_side_time" => self.noise_side_time = p(key, value)?,
            "train.lambda_motion" => self.lambda_motion = p(key, value)?,
            "train.grad_clip" => {
                self.grad_clip = if value == "none" { None } else { Some(p(key, value)?) };
            }
            "train.checkpoint_every" => self.checkpoint_every = p(key, value)?,
            "opt.lr" => self.lr = p(key, value)?,
            "opt.beta1" => self.beta1 = p(key, value)?,
            "opt.beta2" => self.beta2 = p(key, value)?,
            "opt.eps" => self.eps = p(key, value)?,
            "opt.weight_decay" => self.weight_decay = p(key, value)?,
            "sample.steps" => self.sample_steps = p(key, value)?,
            "sample.shift" => self.sample_shift = p(key, value)?,
            "sample.omega1" => self.omega1 = p(key, value)?,
            "sample.omega2" => self.omega2 = p(key, value)?,
            "paths.dataset" => self.dataset = PathBuf::from(value),
            "paths.checkpoint_dir" => self.checkpoint_dir = PathBuf::from(value),
            "paths.metrics_dir" => self.metrics_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Cross-field validation, run before any model state is allocated.
    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_plan().validate()?;
        if self.kinds.is_empty() {
            return Err(Error::Config("data.kinds must not be empty".into()));
        }
        if self.data_count == 0 {
            return Err(Error::Config("data.count must be positive".into()));
        }
        if self.sample_steps == 0 || self.sample_shift < 1.0 {
            return Err(Error::Config("invalid sampling schedule".into()));
        }
        if self.omega1 < 0.0 || self.omega2 < 0.0 {
            return Err(Error::Config("guidance scales must be non-negative".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            heads: self.heads,
            layers: self.layers,
            dual_layers: self.dual_layers,
            vocab_size: self.vocab_size,
            text_len: self.text_len,
            stride: self.stride,
            frames: self.frames,
            height: self.height,
            width: self.width,
            fps: self.fps,
            theta: self.theta,
            collision_mode: self.collision_mode,
            unscaled_time: self.unscaled_time,
            share_modality_weights: self.share_modality_weights,
        }
    }

    pub fn train_plan(&self) -> TrainPlan {
        TrainPlan {
            phase1_steps: self.phase1_steps,
            phase2_steps: self.phase2_steps,
            paradigm_probs: self.paradigm_probs,
            p_text: self.p_text,
            p_motion: self.p_motion,
            p_video: self.p_video,
            shift: self.train_shift,
            noise_side_time: self.noise_side_time,
            batch_size: self.batch_size,
            lambda_motion: self.lambda_motion,
            seed: self.seed,
            skip_phase1: false,
            force_paradigm: None,
            grad_clip: self.grad_clip,
        }
    }

    pub fn adamw_config(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn sample_spec(&self, mode: TaskMode, seed: u64) -> SampleSpec {
        SampleSpec {
            mode,
            steps: self.sample_steps,
            shift: self.sample_shift,
            omega1: self.omega1,
            omega2: self.omega2,
            seed,
            text: None,
            cond_motion: None,
            cond_video: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_canonical() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        let back = RunConfig::from_text(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(text, back.to_text());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_text("model.dims = 64\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::from_text("model.dim = sixty-four\n").is_err());
        assert!(RunConfig::from_text("model.dim 64\n").is_err());
        assert!(RunConfig::from_text("data.kinds = wave,flip\n").is_err());
    }

    #[test]
    fn geometry_violations_rejected_before_allocation() {
        // frames not 1 mod 4
        assert!(RunConfig::from_text("data.frames = 16\n").is_err());
        // head_dim not multiple of 4
        assert!(RunConfig::from_text("model.dim = 60\nmodel.heads = 10\n").is_err());
        // dual layers exceed layers
        assert!(RunConfig::from_text("model.dual_layers = 9\n").is_err());
        // stride incompatible with width
        assert!(RunConfig::from_text("data.width = 30\n").is_err());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = RunConfig::from_text("# comment\n\nseed = 9\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn grad_clip_none_or_value() {
        let cfg = RunConfig::from_text("train.grad_clip = none\n").unwrap();
        assert_eq!(cfg.grad_clip, None);
        let cfg = RunConfig::from_text("train.grad_clip = 5.5\n").unwrap();
        assert_eq!(cfg.grad_clip, Some(5.5));
    }

    #[test]
    fn float_roundtrip_exact() {
        let mut cfg = RunConfig::default();
        cfg.lr = 0.1 + 0.2; // not exactly 0.3
        cfg.theta = 12345.6789;
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(cfg.lr.to_bits(), back.lr.to_bits());
        assert_eq!(cfg.theta.to_bits(), back.theta.to_bits());
    }
}
