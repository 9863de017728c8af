//! Repeated steps for profiling.
use mvflow::config::RunConfig;
use mvflow::data::gen_corpus;
use mvflow::train::fresh_trainer;

fn main() {
    let rc = RunConfig::default();
    let records = gen_corpus(8, &rc.kinds, 0, rc.frames, rc.height, rc.width, rc.fps).unwrap();
    let mut trainer =
        fresh_trainer::<f32>(&rc.model_config(), rc.adamw_config(), rc.train_plan(), &records)
            .unwrap();
    for step in 0..12 {
        trainer.phase2_step(&records, step).unwrap();
    }
    println!("done");
}
