//! Binary checkpoints: named-tensor table with metadata.
//!
//! Layout: magic "EMCK", version u32, a u32-length-prefixed UTF-8 metadata
//! block (config snapshot, phase, step, normalization stats, and the
//! tensor table as name/shape/offset lines), then the raw little-endian
//! f32 payloads in table order. Serialization is canonical, so
//! save -> load -> save reproduces the file byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::motion::NormStats;
use crate::optim::AdamWConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{TrainPlan, Trainer};

const MAGIC: &[u8; 4] = b"EMCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Canonical config snapshot (the RunConfig text form).
    pub config_text: String,
    /// Highest fully completed training phase.
    pub phase: u32,
    /// Optimizer step counter.
    pub step: u64,
    pub stats: NormStats,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::from_text(&self.config_text)
    }

    pub fn find(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    // Tensor names must be unique.
    {
        let mut names: Vec<&str> = ckpt.tensors.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        for w in names.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Format(format!("duplicate tensor name '{}'", w[0])));
            }
        }
    }
    let mut meta = String::new();
    meta.push_str(&format!("phase = {}\n", ckpt.phase));
    meta.push_str(&format!("step = {}\n", ckpt.step));
    let stats = ckpt
        .stats
        .to_flat()
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",");
    meta.push_str(&format!("stats = {stats}\n"));
    for line in ckpt.config_text.lines() {
        meta.push_str("config.");
        meta.push_str(line);
        meta.push('\n');
    }
    let mut offset = 0usize;
    for t in &ckpt.tensors {
        let dims = t.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        meta.push_str(&format!("tensor {} {} {}\n", t.name, dims, offset));
        offset += t.data.len() * 4;
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let meta_bytes = meta.as_bytes();
    w.write_all(&(meta_bytes.len() as u32).to_le_bytes())?;
    w.write_all(meta_bytes)?;
    for t in &ckpt.tensors {
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    if buf.len() < 12 || &buf[..4] != MAGIC {
        return Err(Error::Format("bad magic: not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    if buf.len() < 12 + meta_len {
        return Err(Error::Format("truncated metadata block".into()));
    }
    let meta = std::str::from_utf8(&buf[12..12 + meta_len])
        .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    let payload = &buf[12 + meta_len..];

    let mut phase = 0u32;
    let mut step = 0u64;
    let mut stats = NormStats::identity();
    let mut config_text = String::new();
    let mut table: Vec<(String, Vec<usize>, usize)> = Vec::new();
    for line in meta.lines() {
        if let Some(rest) = line.strip_prefix("config.") {
            config_text.push_str(rest);
            config_text.push('\n');
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Format(format!("bad tensor line '{line}'")));
            }
            let shape: Vec<usize> = parts[1]
                .split(',')
                .map(|d| {
                    d.parse::<usize>()
                        .map_err(|_| Error::Format(format!("bad shape in '{line}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            let offset: usize = parts[2]
                .parse()
                .map_err(|_| Error::Format(format!("bad offset in '{line}'")))?;
            table.push((parts[0].to_string(), shape, offset));
        } else if let Some(v) = line.strip_prefix("phase = ") {
            phase = v.parse().map_err(|_| Error::Format("bad phase".into()))?;
        } else if let Some(v) = line.strip_prefix("step = ") {
            step = v.parse().map_err(|_| Error::Format("bad step".into()))?;
        } else if let Some(v) = line.strip_prefix("stats = ") {
            let flat: Vec<f64> = v
                .split(',')
                .map(|x| x.parse::<f64>().map_err(|_| Error::Format("bad stats".into())))
                .collect::<Result<Vec<_>>>()?;
            stats = NormStats::from_flat(&flat)?;
        } else if !line.trim().is_empty() {
            return Err(Error::Format(format!("unrecognized metadata line '{line}'")));
        }
    }

    let mut tensors = Vec::with_capacity(table.len());
    for (name, shape, offset) in table {
        let numel: usize = shape.iter().product();
        let end = offset + numel * 4;
        if end > payload.len() {
            return Err(Error::Format(format!("tensor '{name}' overruns the payload")));
        }
        let data: Vec<f32> = payload[offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    Ok(Checkpoint { config_text, phase, step, stats, tensors })
}

// ---- trainer glue ----

/// Snapshot a trainer: parameters, optimizer moments, stats, phase, step.
pub fn snapshot<E: Scalar>(trainer: &Trainer<E>, config: &RunConfig) -> Checkpoint {
    let mut tensors = Vec::new();
    for (id, name, tensor) in trainer.model.params.iter() {
        tensors.push(NamedTensor {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            data: tensor.data().iter().map(|v| v.to_f64() as f32).collect(),
        });
        let (m, v) = trainer.opt.moments(id, tensor.shape());
        tensors.push(NamedTensor {
            name: format!("opt.m.{name}"),
            shape: tensor.shape().to_vec(),
            data: m.data().iter().map(|v| v.to_f64() as f32).collect(),
        });
        tensors.push(NamedTensor {
            name: format!("opt.v.{name}"),
            shape: tensor.shape().to_vec(),
            data: v.data().iter().map(|v| v.to_f64() as f32).collect(),
        });
    }
    Checkpoint {
        config_text: config.to_text(),
        phase: trainer.completed_phase,
        step: trainer.opt.step_count(),
        stats: trainer.model.stats.clone(),
        tensors,
    }
}

/// Rebuild a trainer from a checkpoint; the architecture comes from the
/// embedded config snapshot.
pub fn restore<E: Scalar>(
    ckpt: &Checkpoint,
    plan: TrainPlan,
    opt_cfg: AdamWConfig,
) -> Result<Trainer<E>> {
    let config = ckpt.config()?;
    let mut model: Model<E> = Model::init(&config.model_config(), config.seed)?;
    model.stats = ckpt.stats.clone();
    let mut trainer = Trainer::new(model, opt_cfg, plan)?;
    restore_into(ckpt, &mut trainer)?;
    Ok(trainer)
}

/// Load checkpoint tensors into an existing trainer (shapes must match).
pub fn restore_into<E: Scalar>(ckpt: &Checkpoint, trainer: &mut Trainer<E>) -> Result<()> {
    let param_names: Vec<String> =
        trainer.model.params.iter().map(|(_, n, _)| n.to_string()).collect();
    for name in &param_names {
        let t = ckpt
            .find(name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing parameter '{name}'")))?;
        let id = trainer.model.params.id(name).unwrap();
        if t.shape != trainer.model.params.tensor(id).shape() {
            return Err(Error::Format(format!(
                "parameter '{name}' shape {:?} != model {:?}",
                t.shape,
                trainer.model.params.tensor(id).shape()
            )));
        }
        let cast = |nt: &NamedTensor| {
            Tensor::new(&nt.shape, nt.data.iter().map(|&v| E::from_f64(v as f64)).collect())
                .unwrap()
        };
        trainer.model.params.set(id, cast(t));
        let m = ckpt
            .find(&format!("opt.m.{name}"))
            .ok_or_else(|| Error::Format(format!("checkpoint is missing moments for '{name}'")))?;
        let v = ckpt
            .find(&format!("opt.v.{name}"))
            .ok_or_else(|| Error::Format(format!("checkpoint is missing moments for '{name}'")))?;
        trainer.opt.restore(id, cast(m), cast(v), ckpt.step);
    }
    trainer.model.stats = ckpt.stats.clone();
    trainer.completed_phase = ckpt.phase;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny_run_config() -> RunConfig {
        RunConfig {
            dim: 8,
            heads: 1,
            layers: 1,
            dual_layers: 1,
            vocab_size: crate::data::VOCAB_SIZE,
            text_len: 8,
            stride: 4,
            frames: 5,
            height: 8,
            width: 8,
            ..RunConfig::default()
        }
    }

    fn toy_trainer() -> (Trainer<f32>, RunConfig) {
        let rc = tiny_run_config();
        let cfg: ModelConfig = rc.model_config();
        let model = Model::<f32>::init(&cfg, 1).unwrap();
        let trainer = Trainer::new(model, rc.adamw_config(), rc.train_plan()).unwrap();
        (trainer, rc)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = std::env::temp_dir().join("mvflow-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let (trainer, rc) = toy_trainer();
        let ckpt = snapshot(&trainer, &rc);
        let p1 = dir.join("a.emck");
        let p2 = dir.join("b.emck");
        save_checkpoint(&ckpt, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&loaded, &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(ckpt, loaded);
    }

    #[test]
    fn parameters_named_exactly_once() {
        let (trainer, rc) = toy_trainer();
        let ckpt = snapshot(&trainer, &rc);
        let mut names: Vec<&str> = ckpt.tensors.iter().map(|t| t.name.as_str()).collect();
        let before = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(before, names.len());
        // Every model parameter is present under its own name.
        for (_, name, _) in trainer.model.params.iter() {
            assert!(ckpt.find(name).is_some(), "missing {name}");
        }
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = std::env::temp_dir().join("mvflow-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let (trainer, rc) = toy_trainer();
        let p = dir.join("c.emck");
        save_checkpoint(&snapshot(&trainer, &rc), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[1] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }

    #[test]
    fn restore_reproduces_parameters() {
        let dir = std::env::temp_dir().join("mvflow-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let (mut trainer, rc) = toy_trainer();
        trainer.completed_phase = 1;
        let records =
            crate::data::gen_corpus(4, &[crate::data::MotionKind::Wave], 5, 5, 8, 8, 16).unwrap();
        trainer.model.stats =
            crate::motion::NormStats::from_clips(records.iter().map(|r| &r.motion));
        for step in 0..3 {
            trainer.phase1_step(&records, step).unwrap();
        }
        let p = dir.join("d.emck");
        save_checkpoint(&snapshot(&trainer, &rc), &p).unwrap();
        let loaded = load_checkpoint(&p).unwrap();
        let restored: Trainer<f32> =
            restore(&loaded, rc.train_plan(), rc.adamw_config()).unwrap();
        assert_eq!(restored.completed_phase, 1);
        assert_eq!(restored.opt.step_count(), trainer.opt.step_count());
        for (id, name, tensor) in trainer.model.params.iter() {
            let rid = restored.model.params.id(name).unwrap();
            assert_eq!(restored.model.params.tensor(rid), tensor, "{name} ({id})");
        }
        assert_eq!(restored.model.stats, trainer.model.stats);
    }
}
