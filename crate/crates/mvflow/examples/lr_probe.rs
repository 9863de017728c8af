//! Learning-dynamics probe on tiny configs.
use mvflow::config::RunConfig;
use mvflow::data::{gen_corpus, MotionKind};
use mvflow::train::fresh_trainer;

fn main() {
    let base = RunConfig {
        dim: 16,
        heads: 2,
        layers: 2,
        dual_layers: 1,
        text_len: 8,
        stride: 4,
        frames: 5,
        height: 16,
        width: 16,
        seed: 5,
        ..RunConfig::default()
    };
    let one = gen_corpus(1, &MotionKind::ALL, 5, 5, 16, 16, 16).unwrap();
    for lr in [1e-4, 3e-4, 1e-3, 3e-3] {
        for shift in [8.0, 3.0] {
            let mut rc = base.clone();
            rc.lr = lr;
            rc.train_shift = shift;
            let mut t =
                fresh_trainer::<f32>(&rc.model_config(), rc.adamw_config(), rc.train_plan(), &one)
                    .unwrap();
            let mut losses = Vec::new();
            for step in 0..400 {
                losses.push(t.phase1_step(&one, step).unwrap().loss);
            }
            let w = |r: std::ops::Range<usize>| {
                losses[r.clone()].iter().sum::<f64>() / r.len() as f64
            };
            println!(
                "lr={lr:.0e} shift={shift}: start {:.3} @100 {:.3} @200 {:.3} @390 {:.3}",
                w(0..10),
                w(95..105),
                w(195..205),
                w(390..400)
            );
        }
    }
}
