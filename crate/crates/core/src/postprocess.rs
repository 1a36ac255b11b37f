//! From network outputs to a ranked proposal list.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{iou, Interval, TemporalGrid};

/// A proposal as written to and read from proposal files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub t_start: f64,
    pub t_end: f64,
    pub score: f64,
}

impl Proposal {
    pub fn interval(&self) -> Interval {
        Interval::new(self.t_start, self.t_end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredProposal {
    pub start_index: usize,
    pub end_index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub score: f64,
}

impl ScoredProposal {
    pub fn interval(&self) -> Interval {
        Interval::new(self.t_start, self.t_end)
    }

    pub fn proposal(&self) -> Proposal {
        Proposal {
            t_start: self.t_start,
            t_end: self.t_end,
            score: self.score,
        }
    }
}

/// Score descending, then earlier start, then earlier end.
pub fn rank_order(a: &ScoredProposal, b: &ScoredProposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.t_start.total_cmp(&b.t_start))
        .then(a.t_end.total_cmp(&b.t_end))
}

/// Every valid map cell as a proposal scored `P_s[s]·P_e[e]·P_c[s,e]·P_r[s,e]`.
pub fn fuse_scores(
    p_s: &[f64],
    p_e: &[f64],
    p_c: &[f64],
    p_r: &[f64],
    grid: &TemporalGrid,
) -> Result<Vec<ScoredProposal>> {
    let t = grid.t;
    if p_s.len() != t || p_e.len() != t || p_c.len() != t * t || p_r.len() != t * t {
        return Err(Error::shape(format!(
            "score fusion expects sequences of {t} and maps of {}; got {}, {}, {}, {}",
            t * t,
            p_s.len(),
            p_e.len(),
            p_c.len(),
            p_r.len()
        )));
    }
    let mut out = Vec::with_capacity(t * (t + 1) / 2);
    for s in 0..t {
        for e in s..t {
            let iv = grid.cell_interval(s, e);
            out.push(ScoredProposal {
                start_index: s,
                end_index: e,
                t_start: iv.start,
                t_end: iv.end,
                score: p_s[s] * p_e[e] * p_c[s * t + e] * p_r[s * t + e],
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftNmsConfig {
    pub sigma: f64,
    pub score_floor: f64,
    pub max_out: usize,
}

impl Default for SoftNmsConfig {
    fn default() -> Self {
        Self {
            sigma: 0.4,
            score_floor: 1e-4,
            max_out: 100,
        }
    }
}

/// Gaussian Soft-NMS: repeatedly keeps the best remaining proposal and decays the others by
/// `exp(-iou² / sigma)`.
pub fn soft_nms(mut pool: Vec<ScoredProposal>, cfg: &SoftNmsConfig) -> Result<Vec<ScoredProposal>> {
    if !(cfg.sigma > 0.0) {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {}",
            cfg.sigma
        )));
    }
    let mut kept = Vec::new();
    while kept.len() < cfg.max_out && !pool.is_empty() {
        let best = (0..pool.len())
            .min_by(|&i, &j| rank_order(&pool[i], &pool[j]))
            .expect("non-empty pool");
        if pool[best].score < cfg.score_floor {
            break;
        }
        let chosen = pool.swap_remove(best);
        let iv = chosen.interval();
        for p in &mut pool {
            let o = iou(&iv, &p.interval());
            p.score *= (-(o * o) / cfg.sigma).exp();
        }
        kept.push(chosen);
    }
    kept.sort_by(rank_order);
    Ok(kept)
}

/// Video id → ranked proposals.
pub type ProposalSet = BTreeMap<String, Vec<Proposal>>;

pub fn save_proposals(path: &Path, set: &ProposalSet) -> Result<()> {
    let text = serde_json::to_string_pretty(set)?;
    crate::container::write_file(path, text.as_bytes())
}

pub fn load_proposals(path: &Path) -> Result<ProposalSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sp(a: f64, b: f64, score: f64) -> ScoredProposal {
        ScoredProposal {
            start_index: 0,
            end_index: 0,
            t_start: a,
            t_end: b,
            score,
        }
    }

    #[test]
    fn fusion_hand_case() {
        let grid = TemporalGrid::new(3, 3.0).unwrap();
        let p_s = [0.5, 1.0, 0.8];
        let p_e = [0.9, 0.4, 1.0];
        let p_c: Vec<f64> = (0..9).map(|i| 0.1 * (i + 1) as f64).collect();
        let p_r = [1.0; 9];
        let out = fuse_scores(&p_s, &p_e, &p_c, &p_r, &grid).unwrap();
        assert_eq!(out.len(), 6);
        let find = |s: usize, e: usize| {
            out.iter()
                .find(|p| p.start_index == s && p.end_index == e)
                .unwrap()
        };
        assert!((find(0, 0).score - 0.5 * 0.9 * 0.1).abs() < 1e-15);
        assert!((find(0, 2).score - 0.5 * 1.0 * 0.3).abs() < 1e-15);
        assert!((find(1, 1).score - 1.0 * 0.4 * 0.5).abs() < 1e-15);
        assert!((find(2, 2).score - 0.8 * 1.0 * 0.9).abs() < 1e-15);
        assert_eq!((find(1, 2).t_start, find(1, 2).t_end), (1.0, 3.0));

        let zero_start = fuse_scores(&[0.0, 1.0, 1.0], &[1.0; 3], &[1.0; 9], &[1.0; 9], &grid).unwrap();
        assert!(zero_start
            .iter()
            .filter(|p| p.start_index == 0)
            .all(|p| p.score == 0.0));
        assert!(zero_start
            .iter()
            .filter(|p| p.start_index > 0)
            .all(|p| p.score == 1.0));
    }

    #[test]
    fn soft_nms_closed_form() {
        let cfg = SoftNmsConfig::default();
        let out = soft_nms(vec![sp(1.0, 3.0, 0.8), sp(1.0, 3.0, 0.9)], &cfg).unwrap();
        assert_eq!(out[0].score, 0.9);
        assert!((out[1].score - 0.8 * (-2.5f64).exp()).abs() < 1e-12);

        let out = soft_nms(vec![sp(0.0, 1.0, 0.7), sp(2.0, 3.0, 0.6)], &cfg).unwrap();
        assert_eq!((out[0].score, out[1].score), (0.7, 0.6));

        let one = vec![sp(0.0, 1.0, 0.3)];
        assert_eq!(soft_nms(one.clone(), &cfg).unwrap(), one);
        assert!(soft_nms(Vec::new(), &cfg).unwrap().is_empty());
        assert!(soft_nms(one, &SoftNmsConfig { sigma: 0.0, ..cfg }).is_err());
    }

    #[test]
    fn small_sigma_acts_like_hard_nms() {
        let cfg = SoftNmsConfig {
            sigma: 1e-6,
            score_floor: 0.0,
            max_out: 10,
        };
        let out = soft_nms(
            vec![sp(0.0, 2.0, 0.9), sp(0.5, 2.0, 0.8), sp(5.0, 6.0, 0.1)],
            &cfg,
        )
        .unwrap();
        assert_eq!(out[1].score, 0.1);
        assert!(out[2].score < 1e-100);
    }

    #[test]
    fn ties_break_by_start_then_end() {
        let cfg = SoftNmsConfig::default();
        let out = soft_nms(
            vec![sp(4.0, 5.0, 0.5), sp(0.0, 2.0, 0.5), sp(0.0, 1.0, 0.5)],
            &cfg,
        )
        .unwrap();
        assert_eq!(out[0].t_end, 1.0);
        assert_eq!(out[1].t_start, 4.0);
    }

    #[test]
    fn floor_and_max_out() {
        let cfg = SoftNmsConfig {
            sigma: 0.4,
            score_floor: 0.5,
            max_out: 2,
        };
        let pool = vec![
            sp(0.0, 1.0, 0.9),
            sp(2.0, 3.0, 0.8),
            sp(4.0, 5.0, 0.7),
            sp(6.0, 7.0, 0.2),
        ];
        assert_eq!(soft_nms(pool.clone(), &cfg).unwrap().len(), 2);
        let out = soft_nms(pool, &SoftNmsConfig { max_out: 10, ..cfg }).unwrap();
        assert_eq!(out.len(), 3);
    }

    proptest! {
        #[test]
        fn scores_never_grow_and_stay_sorted(
            raw in prop::collection::vec((0.0f64..50.0, 0.1f64..20.0, 0.0f64..1.0), 0..40),
        ) {
            let pool: Vec<_> = raw.iter().map(|&(s, d, sc)| sp(s, s + d, sc)).collect();
            let out = soft_nms(pool.clone(), &SoftNmsConfig::default()).unwrap();
            for w in out.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
            for p in &out {
                let orig = pool.iter().find(|q| q.t_start == p.t_start && q.t_end == p.t_end && q.score >= p.score);
                prop_assert!(orig.is_some());
            }
            prop_assert_eq!(&out, &soft_nms(pool, &SoftNmsConfig::default()).unwrap());
        }
    }
}
