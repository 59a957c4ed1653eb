use parallax_core::train::{TrainConfig, Trainer};

fn stats(v: &[f32]) -> (f32, f32, f32) {
    let mn = v.iter().cloned().fold(f32::INFINITY, f32::min);
    let mx = v.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mean = v.iter().sum::<f32>() / v.len() as f32;
    (mn, mx, mean)
}

fn main() {
    let mut cfg = TrainConfig::default();
    cfg.total_steps = 100;
    cfg.weights.flc = 0.0;
    cfg.weights.ild = 0.0;
    let mut tr = Trainer::<f32>::new(&cfg).unwrap();

    let s = parallax_core::train::holdout_manifest(&cfg).unwrap().sample::<f32>(0).unwrap();
    let d0 = tr.model.infer(&tr.params, &s.left, &s.right).unwrap();
    let (mn, mx, mean) = stats(d0.values());
    println!("init full map: min {mn:.4} max {mx:.4} mean {mean:.4}");

    // also look at stage maps
    {
        let tape = parallax_core::tape::Tape::<f32>::new();
        let ext = parallax_core::model::bind(&tape, &tr.params.extractor, false);
        let agg = parallax_core::model::bind(&tape, &tr.params.aggregation, false);
        let out = tr.model.forward(&tape, &ext, &agg, &s.left, &s.right).unwrap();
        for (i, m) in out.stage_maps.iter().enumerate() {
            let (mn, mx, mean) = stats(m.values.values());
            println!("  stage {i} (stride {}): min {mn:.4} max {mx:.4} mean {mean:.4}", m.stride);
        }
        // probability volume peakiness
        for (i, p) in out.probabilities.iter().enumerate() {
            let (mn, mx, _) = stats(p.values.values());
            println!("  prob {i}: min {mn:.6} max {mx:.6}");
        }
        let f4 = &out.left_features.s4;
        let (mn, mx, mean) = stats(f4.values());
        println!("  s4 features: min {mn:.4} max {mx:.4} mean {mean:.4}");
    }

    let before: Vec<f32> = tr.params.extractor.entries[0].data.clone();
    let agg_before: Vec<f32> = tr.params.aggregation.entries[0].data.clone();
    for _ in 0..3 {
        let m = tr.train_step().unwrap();
        println!("step {}: total {:.4} photo {:.4} smooth {:.6} gn {:.3}", m.step, m.loss_total, m.loss_photo, m.loss_smooth, m.grad_norm);
    }
    let after = &tr.params.extractor.entries[0].data;
    let agg_after = &tr.params.aggregation.entries[0].data;
    let delta: f32 = before.iter().zip(after).map(|(a, b)| (a - b).abs()).sum();
    let agg_delta: f32 = agg_before.iter().zip(agg_after).map(|(a, b)| (a - b).abs()).sum();
    println!("extractor[0] abs delta {delta:.6}, aggregation[0] abs delta {agg_delta:.6}");
    let d1 = tr.model.infer(&tr.params, &s.left, &s.right).unwrap();
    let (mn, mx, mean) = stats(d1.values());
    println!("after 3 steps full map: min {mn:.4} max {mx:.4} mean {mean:.4}");
    let diff: f32 = d0.values().iter().zip(d1.values()).map(|(a, b)| (a - b).abs()).sum();
    println!("map change sum {diff:.6}");
}
