//! Calibration pilot at the default geometry: loss curves, attention
//! alignment, and v2m quality for candidate learning rates.
use mvflow::config::RunConfig;
use mvflow::data::gen_corpus;
use mvflow::eval::{attn_diagonal_score, pa_mpjpe};
use mvflow::model::{ForwardInput, TaskMode};
use mvflow::motion::{clip_to_groups, TOKENS_PER_FRAME};
use mvflow::rng::{stream, tag};
use mvflow::sampling::{generate, SampleContext};
use mvflow::train::{fresh_trainer, interpolate_groups, randn_groups_like, Trainer};
use mvflow::video::patchify;

fn attn_offset(trainer: &Trainer<f32>, records: &[mvflow::data::DatasetRecord]) -> f64 {
    let rc = &trainer.model.cfg;
    let mut offs = Vec::new();
    for (i, record) in records.iter().take(3).enumerate() {
        let clean_video: mvflow::Tensor<f32> = patchify(&record.video, rc.stride).unwrap();
        let clean_motion = trainer.model.stats.normalize(&clip_to_groups(&record.motion));
        let nv = mvflow::Tensor::randn(clean_video.shape(), 1.0, stream(90 + i as u64, &[tag("pv")]));
        let noisy_v = mvflow::train::interpolate(&nv, &clean_video, 0.5).unwrap();
        let nm = randn_groups_like(&clean_motion, stream(90 + i as u64, &[tag("pm")]));
        let noisy_m = interpolate_groups(&nm, &clean_motion, 0.5).unwrap();
        let (_p, maps) = trainer
            .model
            .predict_with_attention(&ForwardInput {
                video: Some(&noisy_v),
                motion: Some(&noisy_m),
                text: Some(&record.caption),
                t: 0.5,
                task: TaskMode::Joint,
            })
            .unwrap();
        let video_t: Vec<usize> =
            trainer.model.video_token_positions().iter().map(|p| p.t as usize).collect();
        let motion_frame: Vec<usize> =
            (0..rc.frames).flat_map(|f| std::iter::repeat(f).take(TOKENS_PER_FRAME)).collect();
        offs.push(attn_diagonal_score(&maps, &video_t, &motion_frame).unwrap().mean_offset);
    }
    offs.iter().sum::<f64>() / offs.len() as f64
}

fn v2m_pa(trainer: &Trainer<f32>, held: &[mvflow::data::DatasetRecord], n: usize) -> f64 {
    let ctx = SampleContext::of_model(&trainer.model);
    let rc = RunConfig::default();
    let mut vals = Vec::new();
    for (i, r) in held.iter().take(n).enumerate() {
        let mut spec = rc.sample_spec(TaskMode::VideoToMotion, 1000 + i as u64);
        spec.cond_video = Some(r.video.clone());
        let out = generate(&trainer.model, &ctx, &spec).unwrap();
        vals.push(pa_mpjpe(&out.motion.unwrap(), &r.motion).unwrap());
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let p1: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(150);
    let p2: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(600);
    let collision: bool = args.get(4).map(|s| s == "collision").unwrap_or(false);

    let mut rc = RunConfig::default();
    rc.lr = lr;
    rc.collision_mode = collision;
    rc.seed = 1;
    let records = gen_corpus(rc.data_count, &rc.kinds, rc.seed, rc.frames, rc.height, rc.width, rc.fps).unwrap();
    let held = gen_corpus(20, &rc.kinds, rc.seed + 10_000, rc.frames, rc.height, rc.width, rc.fps).unwrap();
    let mut plan = rc.train_plan();
    plan.phase1_steps = p1;
    plan.phase2_steps = p2;
    let mut trainer =
        fresh_trainer::<f32>(&rc.model_config(), rc.adamw_config(), plan.clone(), &records).unwrap();

    println!("pilot lr={lr} collision={collision} p1={p1} p2={p2}");
    let untrained_pa = v2m_pa(&trainer, &held, 4);
    println!("untrained v2m pa_mpjpe = {untrained_pa:.2} mm, attn offset = {:.4}", attn_offset(&trainer, &held));

    let mut window = Vec::new();
    for step in 0..p1 {
        let rec = trainer.phase1_step(&records, step).unwrap();
        window.push(rec.loss);
        if (step + 1) % 50 == 0 {
            let m = window.iter().sum::<f64>() / window.len() as f64;
            println!("p1 step {}: mean loss {m:.4}", step + 1);
            window.clear();
        }
    }
    trainer.completed_phase = 1;
    for step in 0..p2 {
        let rec = trainer.phase2_step(&records, step).unwrap();
        window.push(rec.loss);
        if (step + 1) % 100 == 0 {
            let m = window.iter().sum::<f64>() / window.len() as f64;
            println!("p2 step {}: mean loss {m:.4} | attn offset {:.4}", step + 1, attn_offset(&trainer, &held));
            window.clear();
        }
    }
    trainer.completed_phase = 2;
    println!("final attn offset = {:.4}", attn_offset(&trainer, &held));
    println!("trained v2m pa_mpjpe = {:.2} mm (untrained {untrained_pa:.2})", v2m_pa(&trainer, &held, 4));
}
