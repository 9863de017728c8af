//! Isolation probe: does forced video-to-motion training move v2m quality?
use mvflow::config::RunConfig;
use mvflow::data::gen_corpus;
use mvflow::eval::pa_mpjpe;
use mvflow::model::TaskMode;
use mvflow::sampling::{generate, SampleContext};
use mvflow::train::{fresh_trainer, Trainer};

fn v2m_pa(trainer: &Trainer<f32>, held: &[mvflow::data::DatasetRecord], omega2: f64) -> f64 {
    let ctx = SampleContext::of_model(&trainer.model);
    let rc = RunConfig::default();
    let mut vals = Vec::new();
    for (i, r) in held.iter().enumerate() {
        let mut spec = rc.sample_spec(TaskMode::VideoToMotion, 1000 + i as u64);
        spec.omega2 = omega2;
        spec.cond_video = Some(r.video.clone());
        let out = generate(&trainer.model, &ctx, &spec).unwrap();
        vals.push(pa_mpjpe(&out.motion.unwrap(), &r.motion).unwrap());
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(600);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let clips: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(50);
    let shift: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(8.0);

    let mut rc = RunConfig::default();
    rc.lr = lr;
    rc.seed = 2;
    rc.data_count = clips;
    rc.train_shift = shift;
    let records = gen_corpus(clips, &rc.kinds, 2, rc.frames, rc.height, rc.width, rc.fps).unwrap();
    let held = gen_corpus(4, &rc.kinds, 999_999, rc.frames, rc.height, rc.width, rc.fps).unwrap();
    let noise_side: bool = args.get(5).map(|s| s == "noise").unwrap_or(false);
    let mut plan = rc.train_plan();
    plan.force_paradigm = Some(TaskMode::VideoToMotion);
    plan.p_video = 0.1;
    plan.noise_side_time = noise_side;
    println!("noise_side_time = {noise_side}");
    let mut trainer =
        fresh_trainer::<f32>(&rc.model_config(), rc.adamw_config(), plan, &records).unwrap();
    trainer.completed_phase = 1;
    println!(
        "forced v2m, lr={lr}, {clips} clips, train_shift={shift}: untrained pa {:.1} mm",
        v2m_pa(&trainer, &held, 1.5)
    );
    let mut window = Vec::new();
    for step in 0..steps {
        window.push(trainer.phase2_step(&records, step).unwrap().loss);
        if (step + 1) % 150 == 0 {
            let m = window.iter().sum::<f64>() / window.len() as f64;
            window.clear();
            println!(
                "step {}: loss {m:.4} | v2m pa @w2=1.5: {:.1} mm | @w2=1: {:.1} | @w2=3: {:.1}",
                step + 1,
                v2m_pa(&trainer, &held, 1.5),
                v2m_pa(&trainer, &held, 1.0),
                v2m_pa(&trainer, &held, 3.0)
            );
        }
    }
}
