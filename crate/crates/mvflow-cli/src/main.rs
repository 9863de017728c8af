//! Command-line interface: dataset generation, two-phase training, guided
//! sampling, evaluation, and attention inspection.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use mvflow::checkpoint::{load_checkpoint, restore, save_checkpoint, snapshot, Checkpoint};
use mvflow::config::RunConfig;
use mvflow::data::{
    gen_corpus, read_dataset, write_dataset, DatasetRecord, MotionKind, VOCAB_SIZE,
};
use mvflow::eval::{attn_diagonal_score, jerk, mpjpe, pa_mpjpe};
use mvflow::model::{ForwardInput, TaskMode};
use mvflow::motion::{clip_to_groups, TOKENS_PER_FRAME};
use mvflow::sampling::{generate, SampleContext, SampleSpec};
use mvflow::train::{interpolate_groups, randn_groups_like, StepRecord, Trainer};
use mvflow::video::VideoClip;

#[derive(Parser)]
#[command(name = "mvflow", about = "Joint video+motion flow-matching toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset container.
    GenData(GenDataArgs),
    /// Run the two-phase training schedule.
    Train(TrainArgs),
    /// Sample with one of the three guided modes.
    Sample(SampleArgs),
    /// Pose-recovery metrics over a held-out dataset.
    Eval(EvalArgs),
    /// Dump the cross-modal attention sub-matrix for one clip.
    InspectAttn(InspectAttnArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    count: usize,
    /// Comma-separated kinds (default: all six).
    #[arg(long)]
    kinds: Option<String>,
    #[arg(long, default_value_t = 17)]
    frames: usize,
    /// HxW, e.g. 32x32.
    #[arg(long, default_value = "32x32")]
    size: String,
    #[arg(long, default_value_t = 16)]
    fps: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// 1, 2, or all.
    #[arg(long, default_value = "all")]
    phase: String,
    /// Resume from a checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Ablation: start phase 2 from scratch without phase-1 weights.
    #[arg(long)]
    skip_phase1: bool,
    /// Tag appended to metrics/checkpoint names.
    #[arg(long, default_value = "run")]
    tag: String,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: PathBuf,
    /// joint, m2v, or v2m.
    #[arg(long)]
    mode: String,
    /// Comma-separated caption token ids.
    #[arg(long)]
    prompt_tokens: Option<String>,
    /// Dataset container supplying the condition clip.
    #[arg(long)]
    cond: Option<PathBuf>,
    /// Record index within --cond.
    #[arg(long, default_value_t = 0)]
    cond_index: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample from checkpoints that never finished phase 2.
    #[arg(long)]
    allow_untrained: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// CSV the per-clip rows are appended to.
    #[arg(long)]
    report: PathBuf,
    /// Evaluate at most this many clips.
    #[arg(long, default_value_t = 20)]
    clips: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    allow_untrained: bool,
}

#[derive(Args)]
struct InspectAttnArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Record index used as the probe clip.
    #[arg(long, default_value_t = 0)]
    clip: usize,
    /// Dual-block index (default: average over all captured blocks).
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Probe timestep for the instrumented forward.
    #[arg(long, default_value_t = 0.5)]
    t: f64,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Eval(a) => eval_cmd(a),
        Command::InspectAttn(a) => inspect_attn(a),
    }
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(RunConfig::from_text(&text)?)
        }
        None => Ok(RunConfig::default()),
    }
}

fn parse_size(s: &str) -> anyhow::Result<(usize, usize)> {
    let (h, w) = s
        .split_once('x')
        .ok_or_else(|| anyhow!("config error: --size wants HxW, got '{s}'"))?;
    Ok((h.parse()?, w.parse()?))
}

fn parse_kinds(s: &Option<String>) -> anyhow::Result<Vec<MotionKind>> {
    match s {
        None => Ok(MotionKind::ALL.to_vec()),
        Some(list) => Ok(list
            .split(',')
            .map(|k| MotionKind::parse(k.trim()))
            .collect::<mvflow::Result<Vec<_>>>()?),
    }
}

fn gen_data(a: GenDataArgs) -> anyhow::Result<()> {
    let (height, width) = parse_size(&a.size)?;
    let kinds = parse_kinds(&a.kinds)?;
    let records = gen_corpus(a.count, &kinds, a.seed, a.frames, height, width, a.fps)?;
    write_dataset(&records, &a.out)?;
    let stats = mvflow::motion::NormStats::from_clips(records.iter().map(|r| &r.motion));
    println!("wrote {} records to {}", records.len(), a.out.display());
    println!(
        "geometry: frames={} size={height}x{width} fps={} kinds={}",
        a.frames,
        a.fps,
        kinds.iter().map(|k| k.label()).collect::<Vec<_>>().join(",")
    );
    println!("motion tokens/clip = {}", a.frames * TOKENS_PER_FRAME);
    println!(
        "video tokens/clip (stride 4) = {}",
        mvflow::video::video_token_count(a.frames, height, width, 4)?
    );
    println!(
        "pos channel stds = {}",
        stats.pos_std.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(",")
    );
    println!("vocabulary size = {VOCAB_SIZE}");
    Ok(())
}

fn metrics_writer(dir: &Path, name: &str) -> anyhow::Result<impl FnMut(&StepRecord)> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut file = fs::File::create(&path)?;
    writeln!(file, "{}", StepRecord::CSV_HEADER)?;
    println!("metrics -> {}", path.display());
    Ok(move |rec: &StepRecord| {
        let _ = writeln!(file, "{}", rec.to_csv_row());
    })
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let rc = load_config(&a.config)?;
    let records = read_dataset(&rc.dataset)
        .with_context(|| format!("loading dataset {}", rc.dataset.display()))?;
    if records.is_empty() {
        bail!("data error: dataset is empty");
    }
    for r in &records {
        if r.motion.frames.len() != rc.frames || r.video.height != rc.height || r.video.width != rc.width {
            bail!("config error: dataset geometry does not match the config");
        }
    }
    fs::create_dir_all(&rc.checkpoint_dir)?;

    let mut plan = rc.train_plan();
    plan.skip_phase1 = a.skip_phase1;

    let mut trainer: Trainer<f32> = match &a.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.config_text != rc.to_text() {
                bail!("config error: checkpoint config differs from the requested config");
            }
            restore(&ckpt, plan.clone(), rc.adamw_config())?
        }
        None => mvflow::train::fresh_trainer(&rc.model_config(), rc.adamw_config(), plan.clone(), &records)?,
    };

    let (run_p1, run_p2) = match a.phase.as_str() {
        "1" => (true, false),
        "2" => (false, true),
        "all" => (true, true),
        other => bail!("config error: --phase must be 1, 2, or all (got '{other}')"),
    };

    if run_p1 && !plan.skip_phase1 && trainer.completed_phase < 1 {
        let mut log = metrics_writer(&rc.metrics_dir, &format!("phase1_{}.csv", a.tag))?;
        let done = (trainer.opt.step_count() as usize).min(plan.phase1_steps);
        for step in done..plan.phase1_steps {
            let rec = trainer.phase1_step(&records, step)?;
            log(&rec);
            if (step + 1) % rc.checkpoint_every == 0 || step + 1 == plan.phase1_steps {
                if step + 1 == plan.phase1_steps {
                    trainer.completed_phase = 1;
                }
                let path = rc.checkpoint_dir.join(format!("phase1_{}.emck", a.tag));
                save_checkpoint(&snapshot(&trainer, &rc), &path)?;
            }
        }
        println!("phase 1 complete ({} steps)", plan.phase1_steps);
    }

    if run_p2 {
        if trainer.completed_phase < 1 && !plan.skip_phase1 {
            bail!(
                "config error: phase 2 requires a phase-1 checkpoint; rerun with --phase all, \
                 --resume, or --skip-phase1 for the one-stage ablation"
            );
        }
        let suffix = if plan.skip_phase1 { format!("{}_skip", a.tag) } else { a.tag.clone() };
        let mut log = metrics_writer(&rc.metrics_dir, &format!("phase2_{suffix}.csv"))?;
        let base = trainer.opt.step_count() as usize;
        let already = base.saturating_sub(if plan.skip_phase1 { 0 } else { plan.phase1_steps });
        for step in already..plan.phase2_steps {
            let rec = trainer.phase2_step(&records, step)?;
            log(&rec);
            if (step + 1) % rc.checkpoint_every == 0 || step + 1 == plan.phase2_steps {
                if step + 1 == plan.phase2_steps {
                    trainer.completed_phase = 2;
                }
                let path = rc.checkpoint_dir.join(format!("phase2_{suffix}.emck"));
                save_checkpoint(&snapshot(&trainer, &rc), &path)?;
            }
        }
        println!("phase 2 complete ({} steps)", plan.phase2_steps);
    }
    Ok(())
}

fn parse_mode(s: &str) -> anyhow::Result<TaskMode> {
    Ok(match s {
        "joint" => TaskMode::Joint,
        "m2v" => TaskMode::MotionToVideo,
        "v2m" => TaskMode::VideoToMotion,
        other => bail!("config error: unknown mode '{other}'"),
    })
}

fn load_trained(
    ckpt_path: &Path,
    allow_untrained: bool,
) -> anyhow::Result<(Checkpoint, Trainer<f32>, RunConfig)> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let rc = ckpt.config()?;
    if ckpt.phase < 2 && !allow_untrained {
        bail!(
            "sampling error: checkpoint completed phase {} but conditional generation needs \
             phase 2 (pass --allow-untrained to override)",
            ckpt.phase
        );
    }
    let trainer = restore::<f32>(&ckpt, rc.train_plan(), rc.adamw_config())?;
    Ok((ckpt, trainer, rc))
}

/// Concatenated binary P6 images; one frame per image.
fn write_ppm_stream(video: &VideoClip, path: &Path) -> anyhow::Result<()> {
    let mut out = Vec::new();
    let frame_len = video.height * video.width * 3;
    for f in 0..video.frames() {
        out.extend_from_slice(format!("P6\n{} {}\n255\n", video.width, video.height).as_bytes());
        out.extend_from_slice(&video.pixels[f * frame_len..(f + 1) * frame_len]);
    }
    fs::write(path, out)?;
    Ok(())
}

/// The container's motion layout as a bare f32 stream.
fn write_motion_arrays(clip: &mvflow::motion::MotionClip, path: &Path) -> anyhow::Result<()> {
    let mut out = Vec::new();
    let mut put = |v: f32| out.extend_from_slice(&v.to_le_bytes());
    for fr in &clip.frames {
        for &v in &fr.beta {
            put(v);
        }
    }
    for fr in &clip.frames {
        for row in &fr.theta {
            for &v in row {
                put(v);
            }
        }
    }
    for fr in &clip.frames {
        for &v in &fr.gamma {
            put(v);
        }
    }
    for fr in &clip.frames {
        for &v in &fr.root {
            put(v);
        }
    }
    for fr in &clip.frames {
        for row in &fr.joints {
            for &v in row {
                put(v);
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn sample(a: SampleArgs) -> anyhow::Result<()> {
    let mode = parse_mode(&a.mode)?;
    let (_ckpt, trainer, rc) = load_trained(&a.ckpt, a.allow_untrained)?;
    if let Some(cfg_path) = &a.config {
        // An explicit config must agree with the checkpoint's snapshot.
        let given = load_config(&Some(cfg_path.clone()))?;
        if given.model_config() != rc.model_config() {
            bail!("config error: --config architecture differs from the checkpoint");
        }
    }

    let mut spec: SampleSpec = rc.sample_spec(mode, a.seed);
    if let Some(tokens) = &a.prompt_tokens {
        let ids: Vec<u16> =
            tokens.split(',').map(|t| t.trim().parse()).collect::<Result<_, _>>()?;
        spec.text = Some(ids);
    }
    let cond_record: Option<DatasetRecord> = match (&a.cond, mode) {
        (Some(path), _) => {
            let records = read_dataset(path)?;
            Some(
                records
                    .into_iter()
                    .nth(a.cond_index)
                    .ok_or_else(|| anyhow!("data error: --cond-index out of range"))?,
            )
        }
        (None, TaskMode::MotionToVideo) => {
            bail!("sampling error: m2v needs --cond (a dataset container with the motion)")
        }
        (None, TaskMode::VideoToMotion) => {
            bail!("sampling error: v2m needs --cond (a dataset container with the video)")
        }
        (None, TaskMode::Joint) => None,
    };
    match mode {
        TaskMode::MotionToVideo => {
            spec.cond_motion = cond_record.as_ref().map(|r| r.motion.clone());
        }
        TaskMode::VideoToMotion => {
            spec.cond_video = cond_record.as_ref().map(|r| r.video.clone());
        }
        TaskMode::Joint => {}
    }

    let ctx = SampleContext::of_model(&trainer.model);
    let out = generate(&trainer.model, &ctx, &spec)?;
    println!("model evaluations per step: {}", out.evals_per_step);
    println!("total model evaluations: {}", out.evals_per_step * spec.steps);

    fs::create_dir_all(&a.out)?;
    if let Some(video) = &out.video {
        fs::write(a.out.join("video.rgb"), &video.pixels)?;
        write_ppm_stream(video, &a.out.join("video.ppm"))?;
        println!(
            "video: {} frames {}x{} -> video.rgb, video.ppm",
            video.frames(),
            video.height,
            video.width
        );
    }
    if let Some(motion) = &out.motion {
        write_motion_arrays(motion, &a.out.join("motion.f32"))?;
        println!("motion: {} frames -> motion.f32", motion.frames.len());
    }
    // A paired container with whichever side was generated (condition fills
    // the other slot) so outputs round-trip through the standard reader.
    let paired = match (out.video, out.motion, cond_record) {
        (Some(v), Some(m), _) => Some((v, m)),
        (Some(v), None, Some(r)) => Some((v, r.motion)),
        (None, Some(m), Some(r)) => Some((r.video, m)),
        _ => None,
    };
    if let Some((video, motion)) = paired {
        let record = DatasetRecord {
            motion,
            video,
            caption: spec.text.clone().unwrap_or_default(),
            kind: MotionKind::Idle,
            seed: a.seed,
        };
        write_dataset(std::slice::from_ref(&record), &a.out.join("sample.hmvd"))?;
        println!("paired record -> sample.hmvd");
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> anyhow::Result<()> {
    let (_ckpt, trainer, rc) = load_trained(&a.ckpt, a.allow_untrained)?;
    let records = read_dataset(&a.dataset)?;
    if records.is_empty() {
        bail!("data error: dataset is empty");
    }
    let ctx = SampleContext::of_model(&trainer.model);
    let n = a.clips.min(records.len());

    let fresh = !a.report.exists();
    let mut report = fs::OpenOptions::new().create(true).append(true).open(&a.report)?;
    if fresh {
        writeln!(report, "clip,kind,seed,mpjpe_mm,pa_mpjpe_mm,jerk_pred,jerk_gt")?;
    }

    let mut mpjpe_sum = 0.0;
    let mut pa_sum = 0.0;
    for (i, record) in records.iter().take(n).enumerate() {
        let mut spec = rc.sample_spec(TaskMode::VideoToMotion, a.seed.wrapping_add(i as u64));
        spec.cond_video = Some(record.video.clone());
        let out = generate(&trainer.model, &ctx, &spec)?;
        let pred = out.motion.ok_or_else(|| anyhow!("sampling produced no motion"))?;
        let m = mpjpe(&pred, &record.motion)?;
        let pa = pa_mpjpe(&pred, &record.motion)?;
        let j_pred = jerk(&pred)?;
        let j_gt = jerk(&record.motion)?;
        writeln!(
            report,
            "{i},{},{},{m:.4},{pa:.4},{j_pred:.4},{j_gt:.4}",
            record.kind.label(),
            record.seed
        )?;
        println!("clip={i} kind={} mpjpe_mm={m:.3} pa_mpjpe_mm={pa:.3}", record.kind.label());
        mpjpe_sum += m;
        pa_sum += pa;
    }
    println!("clips={n}");
    println!("mean_mpjpe_mm={:.4}", mpjpe_sum / n as f64);
    println!("mean_pa_mpjpe_mm={:.4}", pa_sum / n as f64);
    Ok(())
}

fn inspect_attn(a: InspectAttnArgs) -> anyhow::Result<()> {
    let (_ckpt, trainer, rc) = load_trained(&a.ckpt, true)?;
    let records = read_dataset(&a.dataset)?;
    let record = records
        .get(a.clip)
        .ok_or_else(|| anyhow!("data error: clip index {} out of range", a.clip))?;

    // Probe: both modalities noised at the probe timestep with a fixed seed,
    // joint task, real caption.
    let model = &trainer.model;
    let clean_video: mvflow::Tensor<f32> = mvflow::video::patchify(&record.video, rc.stride)?;
    let clean_motion = model.stats.normalize(&clip_to_groups(&record.motion));
    let noise_v = mvflow::Tensor::randn(
        clean_video.shape(),
        1.0,
        mvflow::rng::stream(rc.seed, &[mvflow::rng::tag("inspect-video")]),
    );
    let noisy_video = mvflow::train::interpolate(&noise_v, &clean_video, a.t)?;
    let noise_m = randn_groups_like(
        &clean_motion,
        mvflow::rng::stream(rc.seed, &[mvflow::rng::tag("inspect-motion")]),
    );
    let noisy_motion = interpolate_groups(&noise_m, &clean_motion, a.t)?;

    let (_pred, maps) = model.predict_with_attention(&ForwardInput {
        video: Some(&noisy_video),
        motion: Some(&noisy_motion),
        text: Some(&record.caption),
        t: a.t,
        task: TaskMode::Joint,
    })?;
    if maps.is_empty() {
        bail!("data error: no dual blocks captured attention");
    }
    let selected: Vec<mvflow::Tensor<f32>> = match a.layer {
        Some(l) => {
            let map = maps
                .get(l)
                .ok_or_else(|| anyhow!("data error: layer {} out of range ({} dual blocks)", l, maps.len()))?;
            vec![map.clone()]
        }
        None => maps.clone(),
    };

    // CSV: (video tokens) x (motion tokens), averaged over the selection.
    let (nv, nm) = selected[0].rows_cols();
    let mut avg = vec![0.0f64; nv * nm];
    for m in &selected {
        for (o, v) in avg.iter_mut().zip(m.data()) {
            *o += *v as f64 / selected.len() as f64;
        }
    }
    let mut csv = String::new();
    for r in 0..nv {
        let row: Vec<String> = (0..nm).map(|c| format!("{:.6e}", avg[r * nm + c])).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    fs::write(&a.out, csv)?;
    println!("wrote {nv}x{nm} attention matrix to {}", a.out.display());

    let video_t: Vec<usize> = model.video_token_positions().iter().map(|p| p.t as usize).collect();
    let motion_frame: Vec<usize> = (0..rc.frames).flat_map(|f| std::iter::repeat(f).take(TOKENS_PER_FRAME)).collect();
    let rep = attn_diagonal_score(&maps, &video_t, &motion_frame)?;
    println!("mean_temporal_offset={:.4}", rep.mean_offset);
    println!("diagonal_mass={:.4}", rep.diagonal_mass);
    for (i, (off, mass)) in rep.per_layer.iter().enumerate() {
        println!("layer={i} offset={off:.4} mass={mass:.4}");
    }
    Ok(())
}
