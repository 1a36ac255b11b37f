//! Turning stored videos into fixed-length model samples with labels.

use super::config::{InputMode, RunConfig};
use super::features::{rescale_linear, sliding_windows, FeatureStore};
use crate::error::{Error, Result};
use crate::labels::{assign_labels, ActionInstance, Annotations, LabelSet, TemporalGrid, VideoAnnotation};
use crate::losses::Targets;
use crate::tensor::Tensor;

/// One model input: a rescaled video or one window of it.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub video: String,
    /// `[channels, T]`
    pub features: Tensor,
    /// Grid over the seconds this sample covers, starting at `offset_seconds`.
    pub grid: TemporalGrid,
    pub offset_seconds: f64,
    /// Seconds of real (unpadded) content.
    pub valid_seconds: f64,
    pub instances: Vec<ActionInstance>,
}

impl Sample {
    pub fn labels(&self, cfg: &RunConfig) -> Result<LabelSet> {
        assign_labels(&self.instances, &self.grid, cfg.data.map_label)
    }
}

/// Instances shifted into `[0, len]` seconds relative to `offset`, dropping those outside.
fn clip_instances(instances: &[ActionInstance], offset: f64, len: f64) -> Vec<ActionInstance> {
    instances
        .iter()
        .filter_map(|i| {
            let (s, e) = ((i.start - offset).max(0.0), (i.end - offset).min(len));
            (e > s).then(|| ActionInstance::new(s, e).ok()).flatten()
        })
        .collect()
}

pub fn video_samples(
    cfg: &RunConfig,
    id: &str,
    features: &Tensor,
    ann: &VideoAnnotation,
) -> Result<Vec<Sample>> {
    let t = cfg.model.temporal_length;
    let fs = features.shape();
    if fs.len() != 2 || fs[0] != cfg.model.input_channels {
        return Err(Error::shape(format!(
            "video {id}: features {fs:?}, model expects [{}, T]",
            cfg.model.input_channels
        )));
    }
    let duration = ann.duration_seconds;
    match cfg.data.mode {
        InputMode::Rescale => Ok(vec![Sample {
            video: id.to_string(),
            features: rescale_linear(features, t)?,
            grid: TemporalGrid::new(t, duration)?,
            offset_seconds: 0.0,
            valid_seconds: duration,
            instances: ann.instances.clone(),
        }]),
        InputMode::Window => {
            let spf = duration / fs[1] as f64;
            sliding_windows(features, t, cfg.data.window_overlap)?
                .into_iter()
                .map(|w| {
                    let offset = w.offset as f64 * spf;
                    let valid = w.valid as f64 * spf;
                    Ok(Sample {
                        video: id.to_string(),
                        features: w.features,
                        grid: TemporalGrid::new(t, t as f64 * spf)?,
                        offset_seconds: offset,
                        valid_seconds: valid,
                        instances: clip_instances(&ann.instances, offset, valid),
                    })
                })
                .collect()
        }
    }
}

/// Annotated videos of `subset` (all when `None`), in id order.
pub fn select<'a>(ann: &'a Annotations, subset: Option<&str>) -> Vec<(&'a String, &'a VideoAnnotation)> {
    ann.iter()
        .filter(|(_, v)| subset.is_none_or(|s| v.subset.as_deref() == Some(s)))
        .collect()
}

pub fn prepare_samples(
    cfg: &RunConfig,
    store: &FeatureStore,
    ann: &Annotations,
    subset: Option<&str>,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (id, v) in select(ann, subset) {
        let f = store
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no features for annotated video {id}")))?;
        out.extend(video_samples(cfg, id, f, v)?);
    }
    Ok(out)
}

/// Stacks samples into a batch `[B, C, T]` with labels.
pub fn batch(samples: &[&Sample], labels: &[&LabelSet]) -> Result<(Tensor, Targets)> {
    let b = samples.len();
    let Some(first) = samples.first() else {
        return Err(Error::invalid("empty batch"));
    };
    let (c, t) = (first.features.shape()[0], first.features.shape()[1]);
    let mut x = Vec::with_capacity(b * c * t);
    let (mut gs, mut ge, mut gc) = (Vec::new(), Vec::new(), Vec::new());
    for (s, l) in samples.iter().zip(labels) {
        x.extend_from_slice(s.features.data());
        gs.extend_from_slice(&l.g_s);
        ge.extend_from_slice(&l.g_e);
        gc.extend_from_slice(&l.g_c);
    }
    Ok((
        Tensor::new(vec![b, c, t], x)?,
        Targets {
            g_s: Tensor::new(vec![b, t], gs)?,
            g_e: Tensor::new(vec![b, t], ge)?,
            g_c: Tensor::new(vec![b, t, t], gc)?,
        },
    ))
}
