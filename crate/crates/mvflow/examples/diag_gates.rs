//! After short forced-v2m training: how large are the adaLN gates, and how
//! much does the video condition move the motion prediction?
use mvflow::config::RunConfig;
use mvflow::data::gen_corpus;
use mvflow::model::{ForwardInput, TaskMode};
use mvflow::motion::clip_to_groups;
use mvflow::rng::{stream, tag};
use mvflow::train::{fresh_trainer, interpolate_groups, randn_groups_like};
use mvflow::video::patchify;
use mvflow::Tensor;

fn main() {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(200);
    let mut rc = RunConfig::default();
    rc.seed = 2;
    rc.data_count = 50;
    let records = gen_corpus(50, &rc.kinds, 2, rc.frames, rc.height, rc.width, rc.fps).unwrap();
    let mut plan = rc.train_plan();
    plan.force_paradigm = Some(TaskMode::VideoToMotion);
    let mut trainer =
        fresh_trainer::<f32>(&rc.model_config(), rc.adamw_config(), plan, &records).unwrap();
    trainer.completed_phase = 1;
    for step in 0..steps {
        trainer.phase2_step(&records, step).unwrap();
    }
    let d = rc.dim;
    for (_, name, t) in trainer.model.params.iter() {
        if name.ends_with("mod.b") {
            let data = t.data();
            let g1: f32 = data[2 * d..3 * d].iter().map(|v| v.abs()).sum::<f32>() / d as f32;
            let g2: f32 = data[5 * d..6 * d].iter().map(|v| v.abs()).sum::<f32>() / d as f32;
            println!("{name}: mean|gate_attn| {g1:.5} mean|gate_ffn| {g2:.5}");
        }
    }
    // Timestep sensitivity: same input, different t.
    {
        let record = &records[0];
        let clean_motion = trainer.model.stats.normalize(&clip_to_groups(&record.motion));
        let nm = randn_groups_like(&clean_motion, stream(6, &[tag("ts")]));
        let noisy = interpolate_groups(&nm, &clean_motion, 0.5).unwrap();
        let at = |t: f64| {
            trainer
                .model
                .predict(&ForwardInput {
                    video: None,
                    motion: Some(&noisy),
                    text: None,
                    t,
                    task: TaskMode::VideoToMotion,
                })
                .unwrap()
                .motion_velocity
                .unwrap()
        };
        let a = at(0.05);
        let b = at(0.95);
        let num: f64 = a.pos.data().iter().zip(b.pos.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.pos.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        println!("t-sensitivity |u(t=.05) - u(t=.95)| / |u(t=.95)| = {:.4}", num / den);
    }
    let record = &records[0];
    let clean_video: Tensor<f32> = patchify(&record.video, rc.stride).unwrap();
    let clean_motion = trainer.model.stats.normalize(&clip_to_groups(&record.motion));
    for t in [0.0, 0.3, 0.7, 0.95] {
        let nm = randn_groups_like(&clean_motion, stream(5, &[tag("n")]));
        let noisy = interpolate_groups(&nm, &clean_motion, t).unwrap();
        let with_video = trainer
            .model
            .predict(&ForwardInput {
                video: Some(&clean_video),
                motion: Some(&noisy),
                text: None,
                t,
                task: TaskMode::VideoToMotion,
            })
            .unwrap()
            .motion_velocity
            .unwrap();
        let without = trainer
            .model
            .predict(&ForwardInput {
                video: None,
                motion: Some(&noisy),
                text: None,
                t,
                task: TaskMode::VideoToMotion,
            })
            .unwrap()
            .motion_velocity
            .unwrap();
        let num: f64 = with_video
            .pos
            .data()
            .iter()
            .zip(without.pos.data())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 =
            without.pos.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        let target = clean_motion.map2(&nm, |c, n| c - n);
        let err = |pred: &mvflow::motion::MotionGroups<f32>| -> f64 {
            let mut s = 0.0;
            let mut n = 0.0;
            for (p, t) in pred.pos.data().iter().zip(target.pos.data()) {
                s += ((p - t) as f64).powi(2);
                n += 1.0;
            }
            (s / n).sqrt()
        };
        println!(
            "t={t}: |u_xm - u_0m|/|u_0m| = {:.4} | pos vel rmse with {:.4} without {:.4}",
            num / den,
            err(&with_video),
            err(&without)
        );
    }
}
