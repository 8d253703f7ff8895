//! Command-line front end: synthetic data, training, inference, evaluation,
//! gradient checks and representation dumps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use evstereo::events::{build_mes, build_motion_confidence, default_tau, EventStream};
use evstereo::gradsuite::run_suite;
use evstereo::io::{read_disparity, read_events, write_disparity, write_events, write_preview, DisparityImage};
use evstereo::metrics::lr_consistency;
use evstereo::nn::ParamStore;
use evstereo::matcher::OUTPUT_FACTORS;
use evstereo::pipeline::{crop, crop_scales, Model, Sample};
use evstereo::train::{evaluate_dataset, load_weights, predict, run_training, samples, synthetic_scenes, RunOptions, TrainConfig};
use evstereo::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "evstereo", version, about = "Event-camera stereo disparity estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed (data seed for `synth`, model seed otherwise)
    #[arg(long)]
    seed: Option<u64>,
    /// Switches off one component; repeatable
    #[arg(long, value_enum)]
    disable: Vec<Component>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Component {
    Eaa,
    Mga,
    Census,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic scene suite to DIR/scene_NNN/{left,right}.evst and gt.pgm
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train; writes loss.csv, config.txt and checkpoints into --out
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Scene directory written by `synth`; rendered on the fly when absent
        #[arg(long)]
        data: Option<PathBuf>,
        /// Resume from this training checkpoint
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Stop after this many completed iterations
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Predict all output scales for one stereo pair
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report disparity and left-right consistency metrics on a scene directory
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the report to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every operator and module
    Gradcheck {
        /// Only cases whose name contains this string
        #[arg(long)]
        filter: Option<String>,
    },
    /// Dump MES channels, motion confidence and (with EAA) the aggregated frame as PGM
    Repr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Weights for the EAA dump; the seeded initialization otherwise
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 2,
        _ => 1,
    }
}

/// Prefixes I/O errors with the offending path.
fn at<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn read_stream(path: &Path) -> Result<EventStream> {
    at(path, read_events(path))
}

fn load_config(common: &Common, fallback_dir: Option<&Path>) -> Result<TrainConfig> {
    let path = common.config.clone().or_else(|| fallback_dir.map(|d| d.join("config.txt")).filter(|p| p.exists()));
    let mut cfg = match path {
        Some(p) => TrainConfig::from_kv(&at(&p, fs::read_to_string(&p).map_err(Error::from))?)?,
        None => TrainConfig::default(),
    };
    for c in &common.disable {
        match c {
            Component::Eaa => cfg.ablation.eaa = false,
            Component::Mga => cfg.ablation.mga = false,
            Component::Census => cfg.ablation.census = false,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = at(root, fs::read_dir(root).map_err(Error::from))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("scene_")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidArgument {
            op: "dataset",
            detail: format!("no scene_* directories in {}", root.display()),
        });
    }
    Ok(dirs)
}

fn load_samples(root: &Path, cfg: &TrainConfig) -> Result<Vec<Sample>> {
    scene_dirs(root)?
        .iter()
        .map(|d| {
            let gt_path = d.join("gt.pgm");
            let gt = at(&gt_path, read_disparity(&gt_path))?;
            Sample::new(&read_stream(&d.join("left.evst"))?, &read_stream(&d.join("right.evst"))?, Some(&gt), &cfg.model)
        })
        .collect()
}

fn inference_model(cfg: &TrainConfig, checkpoint: &Path) -> Result<(ParamStore, Model)> {
    let mut store = ParamStore::new();
    let model = Model::new(&mut store, cfg.seed, cfg.model_config(), cfg.ablation);
    at(checkpoint, load_weights(&store, checkpoint))?;
    Ok((store, model))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { common, out } => {
            let mut cfg = load_config(&common, None)?;
            if let Some(s) = common.seed {
                cfg.data_seed = s;
            }
            for (i, pair) in synthetic_scenes(&cfg)?.iter().enumerate() {
                let dir = out.join(format!("scene_{i:03}"));
                fs::create_dir_all(&dir)?;
                write_events(&dir.join("left.evst"), &pair.left)?;
                write_events(&dir.join("right.evst"), &pair.right)?;
                write_disparity(&dir.join("gt.pgm"), &pair.gt)?;
                println!("{}: {} left / {} right events", dir.display(), pair.left.len(), pair.right.len());
            }
            Ok(())
        }
        Command::Train {
            common,
            out,
            data,
            checkpoint,
            iters,
        } => {
            let mut cfg = load_config(&common, None)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let data = match &data {
                Some(d) => load_samples(d, &cfg)?,
                None => samples(&synthetic_scenes(&cfg)?, &cfg.model)?,
            };
            let outcome = run_training(
                cfg,
                &data,
                &RunOptions {
                    out_dir: Some(&out),
                    resume: checkpoint.as_deref(),
                    stop_at: iters,
                },
            )?;
            if let Some(last) = outcome.log.last() {
                println!("iter {} loss {:.6}", last.iter, last.loss_total);
            }
            let t = &outcome.trainer;
            print!("{}", evaluate_dataset(&t.model, &t.store, &data)?.to_kv());
            if let Some(p) = outcome.final_checkpoint {
                println!("checkpoint {}", p.display());
            }
            Ok(())
        }
        Command::Infer {
            common,
            checkpoint,
            left,
            right,
            out,
        } => {
            let mut cfg = load_config(&common, checkpoint.parent())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let (store, model) = inference_model(&cfg, &checkpoint)?;
            let sample = Sample::new(&read_stream(&left)?, &read_stream(&right)?, None, &cfg.model)?;
            let pred = predict(&model, &store, &sample)?;
            fs::create_dir_all(&out)?;
            for (map, f) in crop_scales(&pred, 0, sample.height, sample.width)?.iter().zip(OUTPUT_FACTORS) {
                let path = out.join(format!("disp_{f}.pgm"));
                write_disparity(&path, &DisparityImage::from_tensor(map)?)?;
                println!("{} {}x{}", path.display(), map.shape()[3], map.shape()[2]);
            }
            let full = crop(&pred.scales[0], sample.height, sample.width)?;
            write_preview(&out.join("disp_preview.pgm"), full.data(), sample.width, sample.height)?;
            Ok(())
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            out,
        } => {
            let mut cfg = load_config(&common, checkpoint.parent())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let (store, model) = inference_model(&cfg, &checkpoint)?;
            let data = load_samples(&data, &cfg)?;
            let mut report = evaluate_dataset(&model, &store, &data)?;
            let (mut p_sum, mut s_sum, mut n) = (0.0, 0.0, 0usize);
            for s in &data {
                let pred = predict(&model, &store, s)?;
                if let Some(gt) = &s.gt {
                    if let Ok((p, q)) = lr_consistency(&pred.left_frame, &pred.right_frame, gt) {
                        p_sum += p;
                        s_sum += q;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                report.psnr = Some(p_sum / n as f64);
                report.ssim = Some(s_sum / n as f64);
            }
            let text = report.to_kv();
            print!("{text}");
            if let Some(p) = out {
                fs::write(p, text)?;
            }
            Ok(())
        }
        Command::Gradcheck { filter } => {
            let results = run_suite(filter.as_deref(), |r| {
                println!(
                    "{:<24} seed {} shape {} rel {:.3e} {}",
                    r.name,
                    r.seed,
                    r.shape,
                    r.report.max_rel_error,
                    if r.report.passed { "ok" } else { "FAIL" }
                );
            })?;
            let failed = results.iter().filter(|r| !r.report.passed).count();
            println!("{} checks, {failed} failed", results.len());
            if failed > 0 {
                return Err(Error::InvalidArgument {
                    op: "gradcheck",
                    detail: format!("{failed} checks exceeded tolerance"),
                });
            }
            Ok(())
        }
        Command::Repr {
            common,
            events,
            out,
            checkpoint,
        } => {
            let mut cfg = load_config(&common, checkpoint.as_deref().and_then(Path::parent))?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let stream = read_stream(&events)?;
            let (h, w) = (stream.height(), stream.width());
            fs::create_dir_all(&out)?;
            let l = cfg.model.eaa.l_channels;
            let mes = build_mes(&stream, cfg.model.n_e, l)?;
            let plane = h * w;
            for c in 0..l {
                write_preview(&out.join(format!("mes_{c}.pgm")), &mes.data.data()[c * plane..(c + 1) * plane], w, h)?;
            }
            let tau = cfg.model.tau.unwrap_or_else(|| default_tau(&stream, cfg.model.n_e));
            let m = build_motion_confidence(&stream, tau)?;
            write_preview(&out.join("motion.pgm"), m.data.data(), w, h)?;
            if cfg.ablation.eaa {
                let mut store = ParamStore::new();
                let model = Model::new(&mut store, cfg.seed, cfg.model_config(), cfg.ablation);
                if let Some(p) = &checkpoint {
                    at(p, load_weights(&store, p))?;
                }
                let sample = Sample::new(&stream, &stream, None, &cfg.model)?;
                let pred = predict(&model, &store, &sample)?;
                write_preview(&out.join("eaa_frame.pgm"), crop(&pred.left_frame, h, w)?.data(), w, h)?;
                let weights = pred.left_weights.narrow(0, 0, 1)?;
                for c in 0..l {
                    let wc = crop(&weights.narrow(1, c, 1)?, h, w)?;
                    write_preview(&out.join(format!("eaa_weight_{c}.pgm")), wc.data(), w, h)?;
                }
            }
            println!("wrote {} ({} events, {w}x{h}, tau {tau:.1} us)", out.display(), stream.len());
            Ok(())
        }
    }
}
