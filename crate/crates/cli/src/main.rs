//! `parallax` — synthetic stereo data generation, dual-branch
//! self-supervised training, evaluation, inference, gradient checking, and
//! the winner-take-all feature diagnostic.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use parallax_core::elem::Elem;
use parallax_core::error::Result;
use parallax_core::gradcheck::suite;
use parallax_core::metrics::{evaluate, D1Mode, EvalOptions};
use parallax_core::model::{wta_disparity, Model};
use parallax_core::synth::generate::generate_sample;
use parallax_core::synth::manifest::DatasetManifest;
use parallax_core::synth::pfm::{read_pfm, write_pfm, PfmImage};
use parallax_core::synth::pgm::write_pgm16;
use parallax_core::tensor::Tensor;
use parallax_core::train::{fit_from, load_checkpoint, TrainConfig, Trainer};
use parallax_core::Error;

#[derive(Parser)]
#[command(name = "parallax", version, about = "Self-supervised stereo matching workbench")]
struct Cli {
    /// Experiment config file (key = value lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Floating-point width for train/eval/infer/wta (gradcheck always runs
    /// at 64-bit)
    #[arg(long, global = true, value_enum, default_value_t = Precision::P32)]
    precision: Precision,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    #[value(name = "32")]
    P32,
    #[value(name = "64")]
    P64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset manifest (optionally dumping PFM/PGM
    /// files per sample)
    Gen {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        d_max: usize,
        /// write left/right/disparity PFM and occlusion PGM per sample
        #[arg(long)]
        dump_pfm: bool,
    },
    /// Train from a config file
    Train {
        /// resume from a checkpoint written by an identical config
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over a dataset manifest
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// D1 combinator: and (KITTI convention) or or (literal wording)
        #[arg(long, value_enum, default_value_t = D1Arg::And)]
        d1_mode: D1Arg,
        /// multiply the right view by this factor before inference
        #[arg(long, default_value_t = 1.0)]
        right_brightness: f64,
        /// cap the number of evaluated samples
        #[arg(long)]
        limit: Option<usize>,
        /// write predicted disparities (PFM) and error maps (PGM)
        #[arg(long)]
        export_maps: bool,
    },
    /// Run one stereo pair through a checkpoint and write the disparity
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
    },
    /// Run the finite-difference gradient-check suite (exit 1 on failure)
    Gradcheck {
        /// only run checks whose name contains this substring
        #[arg(long)]
        filter: Option<String>,
    },
    /// Winner-take-all diagnostic from a checkpoint's stride-4 features
    Wta {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 8)]
        samples: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum D1Arg {
    And,
    Or,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<TrainConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::InvalidArgument {
        op: "cli",
        detail: "--config is required for this subcommand".to_string(),
    })?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    let mut cfg = TrainConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.display().to_string(), source: e })
}

fn run(cli: Cli) -> Result<()> {
    match &cli.cmd {
        Command::Gen { count, height, width, d_max, dump_pfm } => {
            let dir = out_dir(&cli);
            ensure_dir(&dir)?;
            let base_seed = cli.seed.unwrap_or(9000);
            let manifest = DatasetManifest::new(dir.clone(), *height, *width, *d_max, *count, base_seed)?;
            manifest.save(&dir.join("manifest.txt"))?;
            if *dump_pfm {
                for i in 0..manifest.len() {
                    let s = manifest.sample::<f32>(i)?;
                    let write = |name: String, img: &Tensor<f32>| -> Result<()> {
                        let bytes = write_pfm(&PfmImage::from_tensor(img)?)?;
                        std::fs::write(dir.join(&name), bytes)
                            .map_err(|e| Error::Io { path: name, source: e })
                    };
                    write(format!("sample_{i:04}_left.pfm"), &s.left)?;
                    write(format!("sample_{i:04}_right.pfm"), &s.right)?;
                    write(format!("sample_{i:04}_disp.pfm"), &s.gt_disparity)?;
                    let occ = write_pgm16(&s.gt_occlusion, 65535.0)?;
                    let name = format!("sample_{i:04}_occ.pgm");
                    std::fs::write(dir.join(&name), occ).map_err(|e| Error::Io { path: name, source: e })?;
                }
            }
            println!("wrote manifest with {} samples to {}", manifest.len(), dir.display());
            Ok(())
        }
        Command::Train { resume } => {
            let cfg = load_config(&cli)?;
            let dir = out_dir(&cli);
            ensure_dir(&dir)?;
            match cli.precision {
                Precision::P32 => train_cmd::<f32>(&cfg, resume.as_deref(), &dir),
                Precision::P64 => train_cmd::<f64>(&cfg, resume.as_deref(), &dir),
            }
        }
        Command::Eval { checkpoint, manifest, d1_mode, right_brightness, limit, export_maps } => {
            let cfg = load_config(&cli)?;
            let opts = EvalOptions {
                d1_mode: match d1_mode {
                    D1Arg::And => D1Mode::And,
                    D1Arg::Or => D1Mode::Or,
                },
                right_brightness: *right_brightness,
                limit: *limit,
            };
            match cli.precision {
                Precision::P32 => eval_cmd::<f32>(&cli, &cfg, checkpoint, manifest, &opts, *export_maps),
                Precision::P64 => eval_cmd::<f64>(&cli, &cfg, checkpoint, manifest, &opts, *export_maps),
            }
        }
        Command::Infer { checkpoint, left, right } => {
            let cfg = load_config(&cli)?;
            match cli.precision {
                Precision::P32 => infer_cmd::<f32>(&cli, &cfg, checkpoint, left, right),
                Precision::P64 => infer_cmd::<f64>(&cli, &cfg, checkpoint, left, right),
            }
        }
        Command::Gradcheck { filter } => {
            let results = suite::run_all(filter.as_deref());
            if results.is_empty() {
                eprintln!("no checks match the filter");
                return Err(Error::InvalidArgument { op: "gradcheck", detail: "empty selection".to_string() });
            }
            let mut failures = 0usize;
            for (name, r) in &results {
                match r {
                    Ok(rep) => {
                        let ok = rep.passes(suite::DEFAULT_TOL);
                        if !ok {
                            failures += 1;
                        }
                        println!(
                            "{:<28} max_rel {:9.3e} max_abs {:9.3e} probes {:3}  {}",
                            name,
                            rep.max_rel_error,
                            rep.max_abs_error,
                            rep.probe_count,
                            if ok { "PASS" } else { "FAIL" }
                        );
                    }
                    Err(e) => {
                        failures += 1;
                        println!("{name:<28} ERROR: {e}");
                    }
                }
            }
            if failures > 0 {
                return Err(Error::NonFinite { op: "gradcheck", detail: format!("{failures} checks failed") });
            }
            println!("all {} gradient checks passed", results.len());
            Ok(())
        }
        Command::Wta { checkpoint, manifest, samples } => {
            let cfg = load_config(&cli)?;
            match cli.precision {
                Precision::P32 => wta_cmd::<f32>(&cli, &cfg, checkpoint, manifest, *samples),
                Precision::P64 => wta_cmd::<f64>(&cli, &cfg, checkpoint, manifest, *samples),
            }
        }
    }
}

fn train_cmd<E: Elem>(cfg: &TrainConfig, resume: Option<&Path>, dir: &Path) -> Result<()> {
    let trainer = match resume {
        Some(path) => Trainer::<E>::from_checkpoint(cfg, path)?,
        None => Trainer::<E>::new(cfg)?,
    };
    let outcome = fit_from(trainer, Some(dir))?;
    let last = outcome.metrics.last();
    println!(
        "trained to step {} (final loss {:.4}); wrote {}",
        outcome.trainer.step,
        last.map(|m| m.loss_total).unwrap_or(f64::NAN),
        dir.join("checkpoint_final.bin").display()
    );
    Ok(())
}

fn eval_cmd<E: Elem>(
    cli: &Cli,
    cfg: &TrainConfig,
    checkpoint: &Path,
    manifest: &Path,
    opts: &EvalOptions,
    export_maps: bool,
) -> Result<()> {
    let cp = load_checkpoint::<E>(checkpoint, cfg)?;
    let (model, _) = Model::build::<E>(&cfg.model_config(), cfg.seed);
    let man = DatasetManifest::load(manifest)?;
    let report = evaluate(&model, &cp.params, &man, opts)?;
    print!("{report}");
    let dir = out_dir(cli);
    ensure_dir(&dir)?;
    let csv_path = dir.join("eval.csv");
    std::fs::write(&csv_path, report.to_csv())
        .map_err(|e| Error::Io { path: csv_path.display().to_string(), source: e })?;
    println!("wrote {}", csv_path.display());
    if export_maps {
        let count = opts.limit.map(|l| l.min(man.len())).unwrap_or(man.len());
        for i in 0..count {
            let s = man.sample::<E>(i)?;
            let pred = model.infer(&cp.params, &s.left, &s.right)?;
            let bytes = write_pfm(&PfmImage::from_tensor(&pred)?)?;
            let name = dir.join(format!("pred_{i:04}.pfm"));
            std::fs::write(&name, bytes).map_err(|e| Error::Io { path: name.display().to_string(), source: e })?;
            let err_map = Tensor::<E>::from_f64_slice(
                pred.shape().to_vec(),
                &pred
                    .values()
                    .iter()
                    .zip(s.gt_disparity.values())
                    .map(|(p, g)| (p.to_f64().unwrap() - g.to_f64().unwrap()).abs())
                    .collect::<Vec<_>>(),
            )?;
            let bytes = write_pgm16(&err_map, 256.0)?;
            let name = dir.join(format!("err_{i:04}.pgm"));
            std::fs::write(&name, bytes).map_err(|e| Error::Io { path: name.display().to_string(), source: e })?;
        }
    }
    Ok(())
}

fn infer_cmd<E: Elem>(cli: &Cli, cfg: &TrainConfig, checkpoint: &Path, left: &Path, right: &Path) -> Result<()> {
    let cp = load_checkpoint::<E>(checkpoint, cfg)?;
    let (model, _) = Model::build::<E>(&cfg.model_config(), cfg.seed);
    let read_img = |path: &Path| -> Result<Tensor<E>> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        let img = read_pfm(&bytes)?.to_tensor::<E>();
        // single-channel inputs replicate to the model's three channels
        match img.shape().len() {
            2 => {
                let (h, w) = (img.shape()[0], img.shape()[1]);
                let mut data = Vec::with_capacity(3 * h * w);
                for _ in 0..3 {
                    data.extend_from_slice(img.values());
                }
                Tensor::from_vec(vec![3, h, w], data)
            }
            _ => Ok(img),
        }
    };
    let l = read_img(left)?;
    let r = read_img(right)?;
    let pred = model.infer(&cp.params, &l, &r)?;
    let dir = out_dir(cli);
    ensure_dir(&dir)?;
    let pfm_path = dir.join("disparity.pfm");
    std::fs::write(&pfm_path, write_pfm(&PfmImage::from_tensor(&pred)?)?)
        .map_err(|e| Error::Io { path: pfm_path.display().to_string(), source: e })?;
    let pgm_path = dir.join("disparity.pgm");
    std::fs::write(&pgm_path, write_pgm16(&pred, 256.0)?)
        .map_err(|e| Error::Io { path: pgm_path.display().to_string(), source: e })?;
    println!("wrote {} and {}", pfm_path.display(), pgm_path.display());
    Ok(())
}

fn wta_cmd<E: Elem>(cli: &Cli, cfg: &TrainConfig, checkpoint: &Path, manifest: &Path, samples: usize) -> Result<()> {
    let cp = load_checkpoint::<E>(checkpoint, cfg)?;
    let (model, _) = Model::build::<E>(&cfg.model_config(), cfg.seed);
    let man = DatasetManifest::load(manifest)?;
    let dir = out_dir(cli);
    ensure_dir(&dir)?;
    let n = samples.min(man.len());
    let mut mean_epe = 0.0;
    for i in 0..n {
        let s = man.sample::<E>(i)?;
        let tape = parallax_core::tape::Tape::<E>::new();
        let ext = parallax_core::model::bind(&tape, &cp.params.extractor, false);
        let (pl, pr) = model.extract(&tape, &ext, &s.left, &s.right)?;
        let wta = wta_disparity(&pl.s4, &pr.s4, cfg.d_max / 4)?;
        // compare in full-resolution pixels against subsampled ground truth
        let (h4, w4) = (wta.shape()[0], wta.shape()[1]);
        let mut err = 0.0;
        for y in 0..h4 {
            for x in 0..w4 {
                let gt = s.gt_disparity.at2(y * 4, x * 4).to_f64().unwrap();
                err += (wta.at2(y, x).to_f64().unwrap() * 4.0 - gt).abs();
            }
        }
        let epe = err / (h4 * w4) as f64;
        mean_epe += epe;
        let name = dir.join(format!("wta_{i:04}.pgm"));
        std::fs::write(&name, write_pgm16(&wta, 256.0 * 4.0)?)
            .map_err(|e| Error::Io { path: name.display().to_string(), source: e })?;
        println!("sample {i}: wta epe {epe:.3} px");
    }
    println!("mean wta epe over {} samples: {:.3} px", n, mean_epe / n as f64);
    Ok(())
}
