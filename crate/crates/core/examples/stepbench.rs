use parallax_core::train::{TrainConfig, Trainer};

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "baseline".to_string());
    let mut cfg = TrainConfig::default();
    cfg.total_steps = 4000;
    if mode == "baseline" {
        cfg.weights.flc = 0.0;
        cfg.weights.ild = 0.0;
    }
    let mut tr = Trainer::<f32>::new(&cfg).unwrap();
    let n = 10;
    let t0 = std::time::Instant::now();
    for _ in 0..n {
        let m = tr.train_step().unwrap();
        println!("step {} total {:.4} photo {:.4} smooth {:.4} flc {:.4} ild {:.4} gn {:.3}",
            m.step, m.loss_total, m.loss_photo, m.loss_smooth, m.loss_flc, m.loss_ild, m.grad_norm);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("mode {mode}: {:.3} s/step ({} steps in {:.1} s)", dt / n as f64, n, dt);
}
