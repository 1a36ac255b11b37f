use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use smbg::container::write_file;
use smbg::costmodel::{self, BenchConfig, ComparisonConfig, Variant};
use smbg::net::{BandSpec, Smbg};
use smbg::pipeline::{self, RunConfig, SweepAxis};
use smbg::postprocess::load_proposals;

#[derive(Parser)]
#[command(name = "smbg", version, about = "Sparse multilevel boundary proposals")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults are used for anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sets the run, synthetic-data and loss-sampling seeds together.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; checkpoints go to `<out>/checkpoints`.
    #[arg(long, global = true, env = "SMBG_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Dataset directory holding `features.bin` and `annotations.json`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Use windowed input defaults (T = 128) instead of rescaling.
    #[arg(long, global = true)]
    window: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Synth,
    /// Train on the training subset, one checkpoint per epoch.
    Train {
        /// Continue from the latest checkpoint in the checkpoint directory.
        #[arg(long)]
        resume: bool,
    },
    /// Generate proposals for the evaluation subset.
    Infer {
        /// Defaults to the latest checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a proposals file against the evaluation subset.
    Eval {
        /// Defaults to `<out>/proposals.json`.
        #[arg(long)]
        proposals: Option<PathBuf>,
    },
    /// Analytic MAC counts.
    Cost {
        #[arg(long, value_enum, default_value_t = CostTarget::Compare)]
        target: CostTarget,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
    /// Time one proposal feature generator forward.
    Bench {
        #[arg(long, value_enum, default_value_t = BenchVariant::Mpfg)]
        variant: BenchVariant,
        #[arg(long, default_value_t = 100)]
        t: usize,
        #[arg(long, default_value_t = 128)]
        channels: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 32)]
        samples: usize,
        /// Band kernel sizes; interior band edges follow the kernels.
        #[arg(long, value_delimiter = ',', default_values_t = [17, 33, 57, 99])]
        kernels: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
    },
    /// Replace the middle of each action with noise and report confidence changes.
    Probe {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        video: Option<String>,
    },
    /// Train and evaluate once per value of one hyperparameter.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CostTarget {
    /// Full-scale generator against boundary-matching sampling.
    Compare,
    /// Every layer of the configured model.
    Model,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchVariant {
    Mpfg,
    BmnPfg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    KernelSizes,
    Dilation,
}

fn run_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None if c.window => RunConfig::window_mode(),
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
        cfg.loss.sampling.seed = seed;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(out) = &c.out {
        cfg.set_output_dir(out);
    }
    if let Some(dir) = &c.data {
        cfg.paths.features = dir.join("features.bin");
        cfg.paths.annotations = dir.join("annotations.json");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint_or_latest(cfg: &RunConfig, given: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = given {
        return Ok(p);
    }
    match pipeline::latest(&cfg.paths.checkpoints)? {
        Some((_, p)) => Ok(p),
        None => bail!("no checkpoint in {}", cfg.paths.checkpoints.display()),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)?.as_bytes())?;
    Ok(())
}

fn model(cfg: &RunConfig, checkpoint: &Path) -> Result<Smbg> {
    pipeline::load_model(checkpoint, &cfg.model)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = run_config(&cli.common)?;
    let out = cfg.paths.outputs.clone();
    match cli.command {
        Command::Synth => {
            pipeline::echo_config(&cfg)?;
            let data = pipeline::run_synth(&cfg)?;
            println!(
                "wrote {} videos to {} and {}",
                data.features.len(),
                cfg.paths.features.display(),
                cfg.paths.annotations.display()
            );
        }
        Command::Train { resume } => {
            pipeline::echo_config(&cfg)?;
            let (store, ann) = pipeline::load_dataset(&cfg)?;
            let log_path = out.join("train_log.jsonl");
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let file = if resume {
                File::options().create(true).append(true).open(&log_path)
            } else {
                File::create(&log_path)
            }
            .with_context(|| format!("opening {}", log_path.display()))?;
            let mut log = BufWriter::new(file);
            let report = pipeline::train(&cfg, &store, &ann, resume, &mut log)?;
            for e in &report.epochs {
                println!("epoch {:>3}  loss {:.6}", e.epoch, e.mean_total);
            }
            println!("checkpoint {}", report.checkpoint.display());
        }
        Command::Infer { checkpoint } => {
            pipeline::echo_config(&cfg)?;
            let ckpt = checkpoint_or_latest(&cfg, checkpoint)?;
            let (store, ann) = pipeline::load_dataset(&cfg)?;
            let (props, path) = pipeline::run_infer(&cfg, &ckpt, &store, &ann)?;
            println!("{} videos, proposals in {}", props.len(), path.display());
        }
        Command::Eval { proposals } => {
            let path = proposals.unwrap_or_else(|| out.join(pipeline::PROPOSALS_FILE));
            let props = load_proposals(&path)?;
            let ann = smbg::labels::load_annotations(&cfg.paths.annotations)?;
            let report = pipeline::evaluate_run(&cfg, &props, &ann)?;
            pipeline::write_report(&out, &report)?;
            for an in [1, 5, 10, 100] {
                if let Some(ar) = report.ar(an) {
                    println!("AR@{an:<4} {ar:.2}");
                }
            }
            println!("AUC    {:.2}", report.auc);
        }
        Command::Cost { target, batch } => match target {
            CostTarget::Compare => {
                let cmp = costmodel::compare(&ComparisonConfig::default())?;
                write_json(&out.join("cost_compare.json"), &cmp)?;
                print!("{}\n{}", cmp.mpfg.table(), cmp.bmn_pfg.table());
                println!("ratio {:.6}", cmp.ratio);
            }
            CostTarget::Model => {
                let report = costmodel::model_report(&cfg.model, batch)?;
                write_json(&out.join("cost_model.json"), &report)?;
                print!("{}", report.table());
            }
        },
        Command::Bench {
            variant,
            t,
            channels,
            batch,
            samples,
            kernels,
            warmup,
            repetitions,
        } => {
            let bands = BandSpec::from_kernels(&kernels, t)?;
            let bc = BenchConfig {
                t,
                channels,
                batch,
                samples,
                bands,
                warmup,
                repetitions,
                seed: cfg.seed,
            };
            let variant = match variant {
                BenchVariant::Mpfg => Variant::Mpfg,
                BenchVariant::BmnPfg => Variant::BmnPfg,
            };
            let stats = costmodel::bench(variant, &bc)?;
            let name = serde_json::to_value(variant)?;
            let name = name.as_str().unwrap_or("bench");
            write_json(
                &out.join(format!("bench_{name}.json")),
                &serde_json::json!({ "config": bc, "timing": stats }),
            )?;
            println!(
                "{name}: median {:.6} s, mean {:.6} s, std {:.6} s over {} runs",
                stats.median_s, stats.mean_s, stats.std_s, stats.repetitions
            );
        }
        Command::Probe { checkpoint, video } => {
            pipeline::echo_config(&cfg)?;
            let ckpt = checkpoint_or_latest(&cfg, checkpoint)?;
            let net = model(&cfg, &ckpt)?;
            let (store, ann) = pipeline::load_dataset(&cfg)?;
            let id = match video.or_else(|| cfg.probe.video.clone()) {
                Some(v) => v,
                None => pipeline::select(&ann, Some(&cfg.data.eval_subset))
                    .into_iter()
                    .find(|(_, v)| !v.instances.is_empty())
                    .map(|(id, _)| id.clone())
                    .context("no evaluation video with instances")?,
            };
            let features = store.get(&id).with_context(|| format!("no features for {id}"))?;
            let va = ann.get(&id).with_context(|| format!("no annotation for {id}"))?;
            let (report, snaps) = pipeline::noise_probe(
                &cfg,
                &net,
                &id,
                features,
                va,
                &cfg.probe.fractions,
                cfg.probe.trials,
            )?;
            let dir = out.join("probe");
            write_json(&dir.join("probe_report.json"), &report)?;
            for (name, csv) in &snaps {
                write_file(&dir.join(name), csv.as_bytes())?;
            }
            for note in &report.skipped {
                eprintln!("skipped: {note}");
            }
            println!("{id}: baseline P_c {:.4}", report.baseline_p_c);
            for r in &report.rows {
                println!(
                    "fraction {:.2}  P_c {:.4}  delta {:+.4}",
                    r.fraction, r.mean_p_c, r.delta_p_c
                );
            }
        }
        Command::Sweep { axis } => {
            let axis = match axis {
                Axis::KernelSizes => SweepAxis::KernelSizes,
                Axis::Dilation => SweepAxis::Dilation,
            };
            pipeline::echo_config(&cfg)?;
            let (store, ann) = pipeline::load_dataset(&cfg)?;
            let rows = pipeline::sweep(&cfg, axis, &store, &ann)?;
            let csv = pipeline::sweep_csv(axis, &rows);
            write_file(&out.join("sweep").join("results.csv"), csv.as_bytes())?;
            print!("{csv}");
        }
    }
    Ok(())
}
