use std::collections::BTreeMap;

use super::config::{InputMode, RunConfig};
use super::data::{select, video_samples};
use super::features::FeatureStore;
use crate::error::{Error, Result};
use crate::labels::{iou, Annotations};
use crate::net::Smbg;
use crate::postprocess::{fuse_scores, rank_order, soft_nms, ProposalSet, ScoredProposal};
use crate::tensor::Tensor;

/// Proposals from different windows with at least this IoU are merged, keeping the best score.
pub const MERGE_IOU: f64 = 0.95;

/// Keeps, among near-identical intervals, only the highest-ranked one.
pub fn merge_duplicates(mut props: Vec<ScoredProposal>, min_iou: f64) -> Vec<ScoredProposal> {
    props.sort_by(rank_order);
    // IoU >= min_iou bounds the start shift by (1 - min_iou) / min_iou of either length.
    let reach = (1.0 - min_iou) / min_iou;
    let mut kept: BTreeMap<(u64, usize), ScoredProposal> = BTreeMap::new();
    for (i, p) in props.into_iter().enumerate() {
        let len = p.t_end - p.t_start;
        let slack = reach * len + 1e-9;
        let lo = (p.t_start - slack).max(0.0);
        let hi = p.t_start + slack;
        let dup = kept
            .range((lo.to_bits(), 0)..=(hi.to_bits(), usize::MAX))
            .any(|(_, k)| iou(&k.interval(), &p.interval()) >= min_iou);
        if !dup {
            kept.insert((p.t_start.max(0.0).to_bits(), i), p);
        }
    }
    let mut out: Vec<_> = kept.into_values().collect();
    out.sort_by(rank_order);
    out
}

fn head(t: &Tensor, b: usize, len: usize) -> &[f64] {
    &t.data()[b * len..(b + 1) * len]
}

/// Ranked proposals for one video.
pub fn infer_video(
    cfg: &RunConfig,
    model: &Smbg,
    id: &str,
    features: &Tensor,
    duration: f64,
) -> Result<Vec<ScoredProposal>> {
    let ann = crate::labels::VideoAnnotation {
        duration_seconds: duration,
        subset: None,
        instances: Vec::new(),
    };
    let samples = video_samples(cfg, id, features, &ann)?;
    let t = cfg.model.temporal_length;
    let mut all = Vec::new();
    for s in &samples {
        let c = s.features.shape()[0];
        let x = Tensor::new(vec![1, c, t], s.features.data().to_vec())?;
        let pred = model.predict(&x)?;
        let props = fuse_scores(
            head(&pred.start, 0, t),
            head(&pred.end, 0, t),
            head(&pred.p_c, 0, t * t),
            head(&pred.p_r, 0, t * t),
            &s.grid,
        )?;
        for mut p in props {
            if p.t_start >= s.valid_seconds {
                continue;
            }
            p.t_end = p.t_end.min(s.valid_seconds);
            p.t_start += s.offset_seconds;
            p.t_end += s.offset_seconds;
            all.push(p);
        }
    }
    if cfg.data.mode == InputMode::Window && samples.len() > 1 {
        all = merge_duplicates(all, MERGE_IOU);
    }
    soft_nms(all, &cfg.nms)
}

/// Runs every annotated video of `subset` through the model. Videos are split across
/// `cfg.workers` threads; the result does not depend on the worker count.
pub fn infer(
    cfg: &RunConfig,
    model: &Smbg,
    store: &FeatureStore,
    ann: &Annotations,
    subset: Option<&str>,
) -> Result<ProposalSet> {
    if model.config != cfg.model {
        return Err(Error::CheckpointMismatch {
            expected: serde_json::to_string(&cfg.model)?,
            found: serde_json::to_string(&model.config)?,
        });
    }
    let jobs: Vec<(&String, f64, &Tensor)> = select(ann, subset)
        .into_iter()
        .map(|(id, v)| {
            store
                .get(id)
                .map(|f| (id, v.duration_seconds, f))
                .ok_or_else(|| Error::invalid(format!("no features for annotated video {id}")))
        })
        .collect::<Result<_>>()?;
    let run = |job: &[(&String, f64, &Tensor)]| -> Result<Vec<(String, Vec<ScoredProposal>)>> {
        job.iter()
            .map(|(id, d, f)| Ok((id.to_string(), infer_video(cfg, model, id, f, *d)?)))
            .collect()
    };
    let workers = cfg.workers.max(1).min(jobs.len().max(1));
    let results: Vec<(String, Vec<ScoredProposal>)> = if workers == 1 {
        run(&jobs)?
    } else {
        let chunk = jobs.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs.chunks(chunk).map(|c| scope.spawn(move || run(c))).collect();
            let mut out = Vec::new();
            for h in handles {
                out.extend(h.join().expect("inference worker panicked")?);
            }
            Ok::<_, Error>(out)
        })?
    };
    Ok(results
        .into_iter()
        .map(|(id, props)| (id, props.iter().map(ScoredProposal::proposal).collect()))
        .collect())
}
