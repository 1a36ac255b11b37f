use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::net::{ModelConfig, ModelParams, Smbg};
use crate::tensor::{Adam, AdamConfig, BatchNormState, Tensor};

const KIND: &str = "smbg-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub mean_total: f64,
    pub mean_l_b: f64,
    pub mean_l_c: f64,
    pub mean_l_g: f64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    model: ModelConfig,
    epoch: usize,
    step: usize,
    norm_momentum: Vec<f64>,
    norm_eps: Vec<f64>,
    adam: Option<(AdamConfig, u64)>,
    history: Vec<EpochStats>,
}

/// Model plus the optimizer state needed to resume training.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Smbg,
    /// Completed epochs.
    pub epoch: usize,
    pub step: usize,
    pub adam: Option<Adam>,
    pub history: Vec<EpochStats>,
}

impl Checkpoint {
    pub fn untrained(model: Smbg) -> Self {
        Self {
            model,
            epoch: 0,
            step: 0,
            adam: None,
            history: Vec::new(),
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let p = &self.model.params;
        let meta = Meta {
            kind: KIND.into(),
            model: self.model.config.clone(),
            epoch: self.epoch,
            step: self.step,
            norm_momentum: p.norms.iter().map(|n| n.momentum).collect(),
            norm_eps: p.norms.iter().map(|n| n.eps).collect(),
            adam: self.adam.as_ref().map(|a| (a.config, a.step)),
            history: self.history.clone(),
        };
        let mut c = Container::new(serde_json::to_value(meta)?);
        for (name, t) in p.names.iter().zip(&p.tensors) {
            c.push(name.clone(), t.clone());
        }
        for (i, n) in p.norms.iter().enumerate() {
            c.push(
                format!("norm{i}.running_mean"),
                Tensor::from_vec(n.running_mean.clone()),
            );
            c.push(
                format!("norm{i}.running_var"),
                Tensor::from_vec(n.running_var.clone()),
            );
        }
        if let Some(a) = &self.adam {
            for (i, (m, v)) in a.m.iter().zip(&a.v).enumerate() {
                c.push(format!("adam.m.{i}"), Tensor::from_vec(m.clone()));
                c.push(format!("adam.v.{i}"), Tensor::from_vec(v.clone()));
            }
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    /// Loads a checkpoint and checks it was written for `expected`.
    pub fn load(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let c = Container::load(path)?;
        let meta: Meta =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::parse(path, e.to_string()))?;
        if meta.kind != KIND {
            return Err(Error::parse(
                path,
                format!("not a checkpoint (kind {:?})", meta.kind),
            ));
        }
        if &meta.model != expected {
            return Err(Error::CheckpointMismatch {
                expected: serde_json::to_string(expected)?,
                found: serde_json::to_string(&meta.model)?,
            });
        }
        let mut params = ModelParams::init(expected, 0);
        for (name, t) in params.names.iter().zip(params.tensors.iter_mut()) {
            let found = c.get(name).ok_or_else(|| Error::CheckpointMismatch {
                expected: format!("{name}{:?}", t.shape()),
                found: "missing".into(),
            })?;
            if found.shape() != t.shape() {
                return Err(Error::CheckpointMismatch {
                    expected: format!("{name}{:?}", t.shape()),
                    found: format!("{name}{:?}", found.shape()),
                });
            }
            *t = found.clone();
        }
        let array = |name: String, len: usize| -> Result<Vec<f64>> {
            let t = c
                .get(&name)
                .ok_or_else(|| Error::parse(path, format!("missing array {name}")))?;
            if t.numel() != len {
                return Err(Error::CheckpointMismatch {
                    expected: format!("{name}[{len}]"),
                    found: format!("{name}{:?}", t.shape()),
                });
            }
            Ok(t.data().to_vec())
        };
        for (i, n) in params.norms.iter_mut().enumerate() {
            let ch = n.channels();
            *n = BatchNormState {
                running_mean: array(format!("norm{i}.running_mean"), ch)?,
                running_var: array(format!("norm{i}.running_var"), ch)?,
                momentum: *meta.norm_momentum.get(i).unwrap_or(&n.momentum),
                eps: *meta.norm_eps.get(i).unwrap_or(&n.eps),
            };
        }
        let adam = match meta.adam {
            Some((config, step)) => {
                let mut a = Adam::new(config, params.tensors.iter());
                a.step = step;
                for (i, t) in params.tensors.iter().enumerate() {
                    a.m[i] = array(format!("adam.m.{i}"), t.numel())?;
                    a.v[i] = array(format!("adam.v.{i}"), t.numel())?;
                }
                Some(a)
            }
            None => None,
        };
        Ok(Self {
            model: Smbg::from_params(expected.clone(), params)?,
            epoch: meta.epoch,
            step: meta.step,
            adam,
            history: meta.history,
        })
    }
}

pub fn epoch_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.bin"))
}

/// The checkpoint with the most completed epochs in `dir`, if any.
pub fn latest(dir: &Path) -> Result<Option<(usize, PathBuf)>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let epoch = p.file_name().and_then(|n| n.to_str()).and_then(|n| {
            n.strip_prefix("epoch_")?
                .strip_suffix(".bin")?
                .parse::<usize>()
                .ok()
        });
        if let Some(e) = epoch {
            if best.as_ref().is_none_or(|(b, _)| e > *b) {
                best = Some((e, p));
            }
        }
    }
    Ok(best)
}
