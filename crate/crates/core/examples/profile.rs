use parallax_core::model::params::bind;
use parallax_core::model::{Model, ModelConfig};
use parallax_core::synth::generate::generate_sample;
use parallax_core::tape::Tape;
use std::time::Instant;

fn main() {
    let cfg = ModelConfig::standard(32, 2);
    let (model, params) = Model::build::<f32>(&cfg, 0);
    let s = generate_sample::<f32>(0, 64, 128, 32).unwrap();

    // full forward, no grad
    let t0 = Instant::now();
    let n = 10;
    for _ in 0..n {
        let tape = Tape::<f32>::new();
        let ext = bind(&tape, &params.extractor, false);
        let agg = bind(&tape, &params.aggregation, false);
        let _ = model.forward(&tape, &ext, &agg, &s.left, &s.right).unwrap();
    }
    println!("forward (no-grad): {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    // forward recorded
    let t0 = Instant::now();
    for _ in 0..n {
        let tape = Tape::<f32>::new();
        let ext = bind(&tape, &params.extractor, true);
        let agg = bind(&tape, &params.aggregation, true);
        let _ = model.forward(&tape, &ext, &agg, &s.left, &s.right).unwrap();
    }
    println!("forward (recorded): {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    // forward + backward
    let t0 = Instant::now();
    for _ in 0..n {
        let tape = Tape::<f32>::new();
        let ext = bind(&tape, &params.extractor, true);
        let agg = bind(&tape, &params.aggregation, true);
        let out = model.forward(&tape, &ext, &agg, &s.left, &s.right).unwrap();
        let loss = tape.mean_all(&tape.mul(&out.full, &out.full).unwrap());
        let _ = tape.backward(&loss).unwrap();
    }
    println!("forward+backward: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    // extractor only
    let t0 = Instant::now();
    for _ in 0..n {
        let tape = Tape::<f32>::new();
        let ext = bind(&tape, &params.extractor, false);
        let _ = model.extract(&tape, &ext, &s.left, &s.right).unwrap();
    }
    println!("extract (no-grad): {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    // kernels
    let tape = Tape::<f32>::new();
    use parallax_core::tensor::Tensor;
    let vol = Tensor::<f32>::full(vec![72, 9, 16, 32], 0.1);
    let w3 = Tensor::<f32>::full(vec![8, 72, 3, 3, 3], 0.01);
    let b3 = Tensor::<f32>::full(vec![8], 0.0);
    let t0 = Instant::now();
    for _ in 0..n {
        let _ = tape.conv3d(&vol, &w3, &b3, 1).unwrap();
    }
    println!("conv3d stage1 layer1 fwd: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    let x = Tensor::<f32>::full(vec![16, 32, 64], 0.1);
    let w = Tensor::<f32>::full(vec![24, 16, 3, 3], 0.01);
    let b = Tensor::<f32>::full(vec![24], 0.0);
    let t0 = Instant::now();
    for _ in 0..n {
        let _ = tape.conv2d(&x, &w, &b, 1, 1).unwrap();
    }
    println!("conv2d 16->24 @32x64 fwd: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    let q = Tensor::<f32>::full(vec![128, 64], 0.1);
    let t0 = Instant::now();
    for _ in 0..(n * 10) {
        let _ = tape.scaled_dot_attention(&q, &q, &q).unwrap();
    }
    println!("attention 128x64: {:.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / (n * 10) as f64);

    // conv3d backward
    let t0 = Instant::now();
    for _ in 0..n {
        let tape = Tape::<f32>::new();
        let volr = tape.leaf(&vol);
        let w3r = tape.leaf(&w3);
        let b3r = tape.leaf(&b3);
        let y = tape.conv3d(&volr, &w3r, &b3r, 1).unwrap();
        let l = tape.mean_all(&y);
        let _ = tape.backward(&l).unwrap();
    }
    println!("conv3d stage1 layer1 fwd+bwd: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
}
