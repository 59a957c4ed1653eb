use parallax_core::metrics::{evaluate, EvalOptions};
use parallax_core::train::{holdout_manifest, TrainConfig, Trainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(600);
    let batch: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2);
    let mut cfg = TrainConfig::default();
    cfg.total_steps = steps;
    cfg.batch_size = batch;
    cfg.weights.flc = 0.0;
    cfg.weights.ild = 0.0;
    let holdout = holdout_manifest(&cfg).unwrap();
    let mut tr = Trainer::<f32>::new(&cfg).unwrap();
    let t0 = std::time::Instant::now();
    let eval_every = 100u64;
    while tr.step < cfg.total_steps {
        let m = tr.train_step().unwrap();
        if (m.step + 1) % eval_every == 0 {
            let rep = evaluate(&tr.model, &tr.params, &holdout, &EvalOptions { limit: Some(8), ..Default::default() }).unwrap();
            println!(
                "step {:4}  loss {:.4} photo {:.4} smooth {:.4}  epe_all {:.3} epe_noc {:.3} bad3 {:.3}  [{:.1}s]",
                m.step + 1, m.loss_total, m.loss_photo, m.loss_smooth, rep.epe_all(), rep.epe_noc(), rep.bad3(),
                t0.elapsed().as_secs_f64()
            );
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("{} steps in {:.1}s = {:.3} s/step", steps, dt, dt / steps as f64);
}
