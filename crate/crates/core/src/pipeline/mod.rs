//! Data ingestion, synthetic data, and the train / infer / evaluate / probe / sweep drivers.

mod checkpoint;
mod config;
mod data;
mod features;
mod infer;
mod probe;
mod sweep;
mod synth;
mod train;

use std::path::{Path, PathBuf};

pub use checkpoint::{epoch_path, latest, Checkpoint, EpochStats};
pub use config::{
    DataConfig, EvalConfig, InputMode, PathConfig, ProbeConfig, RunConfig, SweepConfig, TrainConfig,
};
pub use data::{batch, prepare_samples, select, video_samples, Sample};
pub use features::{
    load_feature_store, load_features, parse_csv, rescale_linear, save_feature_store, save_features,
    sliding_windows, to_csv, window_offsets, FeatureStore, Window,
};
pub use infer::{infer, infer_video, merge_duplicates, MERGE_IOU};
pub use probe::{central_span, grid_csv, noise_probe, ProbeReport, ProbeRow};
pub use sweep::{sweep, sweep_configs, sweep_csv, SweepAxis, SweepRow};
pub use synth::{render_video, synth_dataset, video_id, Dataset, SyntheticSpec, EVAL_SUBSET, TRAIN_SUBSET};
pub use train::{step_seed, train, TrainReport};

use crate::container::write_file;
use crate::error::Result;
use crate::evalkit::{evaluate, ground_truth, EvalReport};
use crate::labels::{load_annotations, save_annotations, Annotations};
use crate::net::{ModelConfig, Smbg};
use crate::postprocess::{save_proposals, ProposalSet};

pub const PROPOSALS_FILE: &str = "proposals.json";
pub const REPORT_FILE: &str = "eval_report.json";
pub const CURVE_FILE: &str = "ar_curve.csv";
pub const RECALL_FILE: &str = "recall_table.csv";
pub const CONFIG_ECHO: &str = "config.toml";

pub fn load_model(checkpoint: &Path, expected: &ModelConfig) -> Result<Smbg> {
    Ok(Checkpoint::load(checkpoint, expected)?.model)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<(FeatureStore, Annotations)> {
    Ok((
        load_feature_store(&cfg.paths.features)?,
        load_annotations(&cfg.paths.annotations)?,
    ))
}

pub fn save_dataset(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    save_feature_store(&cfg.paths.features, &data.features)?;
    save_annotations(&cfg.paths.annotations, &data.annotations)
}

/// Synthesizes the configured benchmark and writes it to the configured paths.
pub fn run_synth(cfg: &RunConfig) -> Result<Dataset> {
    let data = synth_dataset(&cfg.synth)?;
    save_dataset(cfg, &data)?;
    Ok(data)
}

/// AR@AN and AUC on the evaluation subset.
pub fn evaluate_run(cfg: &RunConfig, props: &ProposalSet, ann: &Annotations) -> Result<EvalReport> {
    let gts = ground_truth(ann, Some(&cfg.data.eval_subset));
    let grid: Vec<usize> = (1..=cfg.eval.max_an).collect();
    evaluate(props, &gts, &grid, &cfg.eval.thresholds)
}

pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    write_file(
        &dir.join(REPORT_FILE),
        serde_json::to_string_pretty(report)?.as_bytes(),
    )?;
    write_file(&dir.join(CURVE_FILE), report.curve_csv().as_bytes())?;
    write_file(&dir.join(RECALL_FILE), report.recall_csv().as_bytes())
}

pub fn echo_config(cfg: &RunConfig) -> Result<()> {
    cfg.save(&cfg.paths.outputs.join(CONFIG_ECHO))
}

/// Infers the evaluation subset with `checkpoint`, writing proposals; returns their path.
pub fn run_infer(
    cfg: &RunConfig,
    checkpoint: &Path,
    store: &FeatureStore,
    ann: &Annotations,
) -> Result<(ProposalSet, PathBuf)> {
    let model = load_model(checkpoint, &cfg.model)?;
    let props = infer(cfg, &model, store, ann, Some(&cfg.data.eval_subset))?;
    let path = cfg.paths.outputs.join(PROPOSALS_FILE);
    save_proposals(&path, &props)?;
    Ok((props, path))
}

/// Synthesize, train, infer and evaluate with one configuration.
pub fn run_all(cfg: &RunConfig) -> Result<(TrainReport, EvalReport)> {
    echo_config(cfg)?;
    let data = run_synth(cfg)?;
    let log_path = cfg.paths.outputs.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(|e| crate::Error::io(&log_path, e))?,
    );
    let report = train(cfg, &data.features, &data.annotations, false, &mut log)?;
    drop(log);
    let (props, _) = run_infer(cfg, &report.checkpoint, &data.features, &data.annotations)?;
    let eval = evaluate_run(cfg, &props, &data.annotations)?;
    write_report(&cfg.paths.outputs, &eval)?;
    Ok((report, eval))
}
