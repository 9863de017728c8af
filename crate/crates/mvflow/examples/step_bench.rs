//! Wall-clock probe for a phase-2 training step at the default geometry.
use std::time::Instant;

use mvflow::config::RunConfig;
use mvflow::data::gen_corpus;
use mvflow::train::fresh_trainer;

fn main() {
    let rc = RunConfig::default();
    let records = gen_corpus(8, &rc.kinds, 0, rc.frames, rc.height, rc.width, rc.fps).unwrap();
    let mut trainer =
        fresh_trainer::<f32>(&rc.model_config(), rc.adamw_config(), rc.train_plan(), &records)
            .unwrap();
    // Warm up, then time.
    let rec = trainer.phase2_step(&records, 0).unwrap();
    println!("warmup: {:.1} ms (loss {:.4}, {})", rec.wall_ms, rec.loss, rec.paradigm);
    let start = Instant::now();
    let n = 5;
    for step in 1..=n {
        let rec = trainer.phase2_step(&records, step).unwrap();
        println!("step {step}: {:.1} ms loss {:.4} {}", rec.wall_ms, rec.loss, rec.paradigm);
    }
    println!("mean {:.1} ms/step", start.elapsed().as_secs_f64() * 1000.0 / n as f64);

    let start = Instant::now();
    for step in 0..3 {
        let rec = trainer.phase1_step(&records, step).unwrap();
        println!("p1 step {step}: {:.1} ms loss {:.4}", rec.wall_ms, rec.loss);
    }
    println!("p1 mean {:.1} ms/step", start.elapsed().as_secs_f64() * 1000.0 / 3.0);
}
