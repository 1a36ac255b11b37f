use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{epoch_path, latest, Checkpoint, EpochStats};
use super::config::RunConfig;
use super::data::{batch, prepare_samples};
use super::features::FeatureStore;
use crate::error::{Error, Result};
use crate::labels::{Annotations, LabelSet};
use crate::losses::{smbg_loss, LossConfig};
use crate::net::Smbg;
use crate::tensor::{Adam, AdamConfig, Graph, NormMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub steps: usize,
    pub checkpoint: PathBuf,
    pub resumed_from: Option<usize>,
}

/// Negative-sampling seed of one optimizer step.
pub fn step_seed(base: u64, step: usize) -> u64 {
    base ^ (step as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn adam_config(cfg: &RunConfig) -> AdamConfig {
    AdamConfig {
        lr: cfg.train.learning_rate,
        ..AdamConfig::default()
    }
}

/// Mini-batch Adam on the total loss, one checkpoint per epoch and one JSON log line per step.
///
/// With `resume`, training continues from the latest checkpoint in the checkpoint directory.
/// Batch order depends only on the seed and the epoch, and negative sampling only on the seed
/// and the step, so a resumed run follows the uninterrupted trajectory exactly.
pub fn train(
    cfg: &RunConfig,
    store: &FeatureStore,
    ann: &Annotations,
    resume: bool,
    log: &mut dyn Write,
) -> Result<TrainReport> {
    cfg.validate()?;
    let samples = prepare_samples(cfg, store, ann, Some(&cfg.data.train_subset))?;
    if samples.is_empty() {
        return Err(Error::invalid(format!(
            "no training videos in subset {:?}",
            cfg.data.train_subset
        )));
    }
    let labels: Vec<LabelSet> = samples.iter().map(|s| s.labels(cfg)).collect::<Result<_>>()?;

    let dir = &cfg.paths.checkpoints;
    let mut resumed_from = None;
    let mut ck = match latest(dir)?.filter(|_| resume) {
        Some((epoch, path)) => {
            resumed_from = Some(epoch);
            Checkpoint::load(&path, &cfg.model)?
        }
        None => Checkpoint::untrained(Smbg::new(cfg.model.clone(), cfg.seed)?),
    };
    let mut adam = ck
        .adam
        .take()
        .unwrap_or_else(|| Adam::new(adam_config(cfg), ck.model.params.tensors.iter()));

    for epoch in ck.epoch + 1..=cfg.train.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        if cfg.train.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
        }
        let mut sums = [0.0; 4];
        let mut steps = 0;
        for chunk in order.chunks(cfg.train.batch_size) {
            let s: Vec<_> = chunk.iter().map(|&i| &samples[i]).collect();
            let l: Vec<_> = chunk.iter().map(|&i| &labels[i]).collect();
            let (x, targets) = batch(&s, &l)?;
            let seed = step_seed(cfg.loss.sampling.seed, ck.step);
            let mut loss_cfg: LossConfig = cfg.loss.clone();
            loss_cfg.sampling.seed = seed;

            let mut g = Graph::new();
            let params = ck.model.bind(&mut g, true);
            let xv = g.constant(x);
            let out = ck.model.forward(&mut g, &params, xv, NormMode::Train)?;
            let (terms, breakdown) = smbg_loss(&mut g, &out, &targets, &loss_cfg)?;
            writeln!(log, "{}", breakdown.log_line(ck.step, seed)).map_err(|e| Error::io("train log", e))?;
            if !breakdown.total.is_finite() {
                return Err(Error::Diverged {
                    step: ck.step,
                    msg: format!("total loss {}", breakdown.total),
                });
            }
            let grads = g.backward(terms.total)?;
            let grads: Vec<_> = params.iter().map(|&p| grads.get_or_zeros(p)).collect();
            if let Some((i, _)) = grads
                .iter()
                .enumerate()
                .find(|(_, t)| t.data().iter().any(|v| !v.is_finite()))
            {
                return Err(Error::Diverged {
                    step: ck.step,
                    msg: format!("non-finite gradient for {}", ck.model.params.names[i]),
                });
            }
            let mut refs: Vec<_> = ck.model.params.tensors.iter_mut().collect();
            adam.step(&mut refs, &grads)?;

            for (acc, v) in
                sums.iter_mut()
                    .zip([breakdown.total, breakdown.l_b, breakdown.l_c, breakdown.l_g])
            {
                *acc += v;
            }
            steps += 1;
            ck.step += 1;
        }
        let n = steps as f64;
        ck.history.push(EpochStats {
            epoch,
            steps,
            mean_total: sums[0] / n,
            mean_l_b: sums[1] / n,
            mean_l_c: sums[2] / n,
            mean_l_g: sums[3] / n,
        });
        ck.epoch = epoch;
        ck.adam = Some(adam.clone());
        ck.save(&epoch_path(dir, epoch))?;
    }
    if ck.epoch == 0 {
        ck.save(&epoch_path(dir, 0))?;
    }
    Ok(TrainReport {
        epochs: ck.history.clone(),
        steps: ck.step,
        checkpoint: epoch_path(dir, ck.epoch),
        resumed_from,
    })
}
