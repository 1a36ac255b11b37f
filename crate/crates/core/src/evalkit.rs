//! Recall, AR@AN and AUC for temporal proposals.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{iou, Annotations, Interval};
use crate::postprocess::{Proposal, ProposalSet};

/// Video id → ground-truth instances.
pub type GroundTruth = BTreeMap<String, Vec<Interval>>;

pub fn ground_truth(ann: &Annotations, subset: Option<&str>) -> GroundTruth {
    ann.iter()
        .filter(|(_, v)| subset.is_none_or(|s| v.subset.as_deref() == Some(s)))
        .map(|(id, v)| {
            (
                id.clone(),
                v.instances
                    .iter()
                    .map(|i| Interval::new(i.start, i.end))
                    .collect(),
            )
        })
        .collect()
}

/// `0.5, 0.55, ..., 0.95`.
pub fn activitynet_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// `0.5, 0.55, ..., 1.0`.
pub fn thumos_thresholds() -> Vec<f64> {
    (0..11).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

pub fn default_an_grid() -> Vec<usize> {
    (1..=100).collect()
}

/// Proposals sorted by score descending; the sort is stable so equal scores keep file order.
fn ranked(props: &[Proposal]) -> Vec<Proposal> {
    let mut v = props.to_vec();
    v.sort_by(|a, b| b.score.total_cmp(&a.score));
    v
}

/// IoU table `[proposal][gt]` for one video, proposals in rank order.
struct VideoTable {
    ious: Vec<Vec<f64>>,
    gts: usize,
}

fn tables(props: &ProposalSet, gts: &GroundTruth, max_an: usize) -> Vec<VideoTable> {
    gts.iter()
        .filter(|(_, g)| !g.is_empty())
        .map(|(id, g)| {
            let ious = props
                .get(id)
                .map(|p| {
                    ranked(p)
                        .iter()
                        .take(max_an)
                        .map(|p| g.iter().map(|gt| iou(&p.interval(), gt)).collect())
                        .collect()
                })
                .unwrap_or_default();
            VideoTable { ious, gts: g.len() }
        })
        .collect()
}

/// Matches at most one ground truth per proposal, walking proposals in rank order and
/// taking the best unmatched instance.
fn matched(table: &VideoTable, an: usize, tiou: f64) -> usize {
    let mut used = vec![false; table.gts];
    let mut hits = 0;
    for row in table.ious.iter().take(an) {
        let mut best: Option<(usize, f64)> = None;
        for (j, &o) in row.iter().enumerate() {
            if !used[j] && o >= tiou && best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            hits += 1;
        }
    }
    hits
}

fn pooled(tables: &[VideoTable], an: usize, tiou: f64) -> f64 {
    let total: usize = tables.iter().map(|t| t.gts).sum();
    if total == 0 {
        return 0.0;
    }
    let hits: usize = tables.iter().map(|t| matched(t, an, tiou)).sum();
    hits as f64 / total as f64
}

fn check_an(an: usize) -> Result<()> {
    if an == 0 {
        return Err(Error::invalid("AN must be at least 1"));
    }
    Ok(())
}

fn check_thresholds(th: &[f64]) -> Result<()> {
    if th.is_empty() {
        return Err(Error::invalid("threshold grid is empty"));
    }
    Ok(())
}

/// Fraction of ground-truth instances recalled by the top-`an` proposals per video.
pub fn recall_at(props: &ProposalSet, gts: &GroundTruth, an: usize, tiou: f64) -> Result<f64> {
    check_an(an)?;
    Ok(pooled(&tables(props, gts, an), an, tiou))
}

pub fn average_recall(props: &ProposalSet, gts: &GroundTruth, an: usize, thresholds: &[f64]) -> Result<f64> {
    check_an(an)?;
    check_thresholds(thresholds)?;
    let t = tables(props, gts, an);
    Ok(thresholds.iter().map(|&th| pooled(&t, an, th)).sum::<f64>() / thresholds.len() as f64)
}

/// Trapezoidal area under `(an, ar)` normalized by the AN span, in percent when `ar` is a fraction.
pub fn trapezoid_auc(an: &[usize], ar: &[f64]) -> Result<f64> {
    if an.len() != ar.len() || an.len() < 2 {
        return Err(Error::invalid("AUC needs at least two matching AN/AR points"));
    }
    if an.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("AN grid must be strictly increasing"));
    }
    let mut area = 0.0;
    for i in 1..an.len() {
        area += (ar[i] + ar[i - 1]) / 2.0 * (an[i] - an[i - 1]) as f64;
    }
    Ok(area / (an[an.len() - 1] - an[0]) as f64 * 100.0)
}

pub fn auc(props: &ProposalSet, gts: &GroundTruth, an_grid: &[usize], thresholds: &[f64]) -> Result<f64> {
    Ok(evaluate(props, gts, an_grid, thresholds)?.auc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub an: usize,
    /// Recall in percent, one entry per threshold.
    pub recall: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// Average recall in percent.
    pub ar_at_an: BTreeMap<usize, f64>,
    pub auc: f64,
    pub recall_table: Vec<RecallRow>,
    pub videos: usize,
    pub instances: usize,
}

impl EvalReport {
    pub fn ar(&self, an: usize) -> Option<f64> {
        self.ar_at_an.get(&an).copied()
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("an,ar\n");
        for (an, ar) in &self.ar_at_an {
            let _ = writeln!(s, "{an},{ar}");
        }
        s
    }

    pub fn recall_csv(&self) -> String {
        let mut s = String::from("an");
        for th in &self.thresholds {
            let _ = write!(s, ",{th}");
        }
        s.push('\n');
        for row in &self.recall_table {
            let _ = write!(s, "{}", row.an);
            for r in &row.recall {
                let _ = write!(s, ",{r}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn evaluate(
    props: &ProposalSet,
    gts: &GroundTruth,
    an_grid: &[usize],
    thresholds: &[f64],
) -> Result<EvalReport> {
    check_thresholds(thresholds)?;
    let max_an = *an_grid
        .iter()
        .max()
        .ok_or_else(|| Error::invalid("AN grid is empty"))?;
    for &an in an_grid {
        check_an(an)?;
    }
    let t = tables(props, gts, max_an);
    let mut ar_frac = Vec::with_capacity(an_grid.len());
    let mut recall_table = Vec::with_capacity(an_grid.len());
    for &an in an_grid {
        let rec: Vec<f64> = thresholds.iter().map(|&th| pooled(&t, an, th)).collect();
        ar_frac.push(rec.iter().sum::<f64>() / rec.len() as f64);
        recall_table.push(RecallRow {
            an,
            recall: rec.iter().map(|r| r * 100.0).collect(),
        });
    }
    let auc = if an_grid.len() >= 2 {
        trapezoid_auc(an_grid, &ar_frac)?
    } else {
        ar_frac[0] * 100.0
    };
    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        ar_at_an: an_grid
            .iter()
            .zip(&ar_frac)
            .map(|(&an, &ar)| (an, ar * 100.0))
            .collect(),
        auc,
        recall_table,
        videos: t.len(),
        instances: t.iter().map(|v| v.gts).sum(),
    })
}
