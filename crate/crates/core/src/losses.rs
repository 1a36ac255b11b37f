//! Training objectives: weighted binary logistic loss, boundary loss, confidence-map loss with
//! balanced sampling, global guidance loss and their weighted total.
//!
//! Every loss is built on a [`Graph`] so it can be differentiated. Maps are flattened over the
//! whole batch before weighting, so the positive/negative balance is computed per batch.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Outputs;
use crate::tensor::{Graph, MapAxis, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Negatives kept per positive in the classification term.
    pub negative_ratio: usize,
    pub seed: u64,
    /// Labels at or above this value count as positive.
    pub theta: f64,
    /// Subsample negatives for the classification term; otherwise use every valid cell.
    pub sample_classification: bool,
    /// Regress on nonzero cells plus as many zero cells; otherwise on every valid cell.
    pub balance_regression: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            negative_ratio: 5,
            seed: 0,
            theta: 0.5,
            sample_classification: true,
            balance_regression: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the regression term inside the confidence loss.
    pub lambda: f64,
    /// Weight of the global guidance loss in the total.
    pub beta: f64,
    pub sampling: SamplingConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            beta: 0.2,
            sampling: SamplingConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_b: f64,
    pub l_c: f64,
    pub l_g: f64,
    pub total: f64,
    /// Flat `[B, T, T]` indices of the negatives kept for classification, ascending.
    pub sampled_negatives: Vec<usize>,
    /// Flat indices of the zero-label cells added to the regression support, ascending.
    pub sampled_zero_cells: Vec<usize>,
}

impl LossBreakdown {
    /// One JSON object per training step.
    pub fn log_line(&self, step: usize, seed: u64) -> String {
        serde_json::json!({
            "step": step,
            "L_B": self.l_b,
            "L_C": self.l_c,
            "L_G": self.l_g,
            "total": self.total,
            "seed": seed,
        })
        .to_string()
    }
}

pub fn total_loss(l_b: f64, l_c: f64, l_g: f64, beta: f64) -> f64 {
    l_b + l_c + beta * l_g
}

/// Per-element coefficients of the weighted logistic loss over the cells in `select`.
fn bl_coefficients(labels: &[f64], select: &[usize], theta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if select.is_empty() {
        return Err(Error::invalid("weighted logistic loss over an empty set"));
    }
    let l_w = select.len() as f64;
    let l_pos = select.iter().filter(|&&i| labels[i] >= theta).count() as f64;
    let l_neg = l_w - l_pos;
    let a_pos = if l_pos > 0.0 { l_w / l_pos } else { 0.0 };
    let a_neg = if l_neg > 0.0 { l_w / l_neg } else { 0.0 };
    let mut pos = vec![0.0; labels.len()];
    let mut neg = vec![0.0; labels.len()];
    for &i in select {
        if labels[i] >= theta {
            pos[i] = a_pos / l_w;
        } else {
            neg[i] = a_neg / l_w;
        }
    }
    Ok((pos, neg))
}

/// Weighted binary logistic loss of `p` against `labels`, restricted to `select` when given.
pub fn weighted_bl_loss(
    g: &mut Graph,
    p: Var,
    labels: &[f64],
    select: Option<&[usize]>,
    theta: f64,
) -> Result<Var> {
    if labels.len() != g.value(p).numel() {
        return Err(Error::shape(format!(
            "{} labels for prediction of shape {:?}",
            labels.len(),
            g.shape(p)
        )));
    }
    let all: Vec<usize>;
    let select = match select {
        Some(s) => s,
        None => {
            all = (0..labels.len()).collect();
            &all
        }
    };
    let (pos, neg) = bl_coefficients(labels, select, theta)?;
    g.weighted_log_loss(p, pos, neg)
}

/// Value of [`weighted_bl_loss`] over every element.
pub fn weighted_bl_value(p: &[f64], labels: &[f64], theta: f64) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.constant(Tensor::new(vec![p.len().max(1)], p.to_vec())?);
    let l = weighted_bl_loss(&mut g, v, labels, None, theta)?;
    Ok(g.value(l).item())
}

pub fn boundary_loss(g: &mut Graph, p_s: Var, p_e: Var, g_s: &[f64], g_e: &[f64], theta: f64) -> Result<Var> {
    let ls = weighted_bl_loss(g, p_s, g_s, None, theta)?;
    let le = weighted_bl_loss(g, p_e, g_e, None, theta)?;
    g.add(ls, le)
}

/// Cells selected by the confidence loss, as flat `[B, T, T]` indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfidenceSample {
    pub classification: Vec<usize>,
    pub negatives: Vec<usize>,
    pub regression: Vec<usize>,
    pub zero_cells: Vec<usize>,
}

fn valid_cells(len: usize, t: usize) -> Vec<usize> {
    (0..len)
        .filter(|&i| {
            let cell = i % (t * t);
            cell / t <= cell % t
        })
        .collect()
}

fn draw(pool: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let count = count.min(pool.len());
    let mut out: Vec<usize> = index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|j| pool[j])
        .collect();
    out.sort_unstable();
    out
}

/// Chooses classification and regression support cells for a `[B, T, T]` label map.
///
/// With no positives, `negative_ratio` negatives are drawn; with no nonzero labels, one zero
/// cell is drawn for regression.
pub fn sample_confidence_cells(g_c: &[f64], t: usize, cfg: &SamplingConfig) -> Result<ConfidenceSample> {
    if t == 0 || !g_c.len().is_multiple_of(t * t) || g_c.is_empty() {
        return Err(Error::shape(format!(
            "confidence labels of length {} are not a stack of {t}x{t} maps",
            g_c.len()
        )));
    }
    if cfg.negative_ratio < 1 {
        return Err(Error::invalid("negative_ratio must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let valid = valid_cells(g_c.len(), t);
    let (pos, neg): (Vec<usize>, Vec<usize>) = valid.iter().partition(|&&i| g_c[i] >= cfg.theta);

    let (classification, negatives) = if cfg.sample_classification {
        let negatives = draw(&neg, cfg.negative_ratio * pos.len().max(1), &mut rng);
        let mut c = pos.clone();
        c.extend_from_slice(&negatives);
        c.sort_unstable();
        (c, negatives)
    } else {
        (valid.clone(), Vec::new())
    };

    let (regression, zero_cells) = if cfg.balance_regression {
        let (nonzero, zero): (Vec<usize>, Vec<usize>) = valid.iter().partition(|&&i| g_c[i] > 0.0);
        let zero_cells = draw(&zero, nonzero.len().max(1), &mut rng);
        let mut r = nonzero;
        r.extend_from_slice(&zero_cells);
        r.sort_unstable();
        (r, zero_cells)
    } else {
        (valid, Vec::new())
    };
    Ok(ConfidenceSample {
        classification,
        negatives,
        regression,
        zero_cells,
    })
}

/// `L_c + λ·L_r` over `[B, T, T]` maps, with `p_c`/`p_r` graph handles.
pub fn confidence_loss(
    g: &mut Graph,
    p_c: Var,
    p_r: Var,
    g_c: &[f64],
    t: usize,
    lambda: f64,
    cfg: &SamplingConfig,
) -> Result<(Var, ConfidenceSample)> {
    if g.value(p_c).numel() != g_c.len() || g.value(p_r).numel() != g_c.len() {
        return Err(Error::shape(format!(
            "confidence maps {:?}/{:?} do not match {} labels",
            g.shape(p_c),
            g.shape(p_r),
            g_c.len()
        )));
    }
    let sample = sample_confidence_cells(g_c, t, cfg)?;
    let l_cls = weighted_bl_loss(g, p_c, g_c, Some(&sample.classification), cfg.theta)?;
    let mut w = vec![0.0; g_c.len()];
    let inv = 1.0 / sample.regression.len() as f64;
    for &i in &sample.regression {
        w[i] = inv;
    }
    let l_reg = g.weighted_sq_error(p_r, g_c.to_vec(), w)?;
    let l_reg = g.scale(l_reg, lambda);
    Ok((g.add(l_cls, l_reg)?, sample))
}

/// Guidance map `G_m[s,e] = G_s[s]·G_e[e]·G_c[s,e]²` for a `[B, T]`/`[B, T, T]` label batch.
pub fn guidance_target(g_s: &[f64], g_e: &[f64], g_c: &[f64], t: usize) -> Vec<f64> {
    let mut out = vec![0.0; g_c.len()];
    for (i, v) in out.iter_mut().enumerate() {
        let (b, cell) = (i / (t * t), i % (t * t));
        let (s, e) = (cell / t, cell % t);
        *v = g_s[b * t + s] * g_e[b * t + e] * g_c[i] * g_c[i];
    }
    out
}

/// Weighted logistic loss of the fused map `P_s·P_e·P_c·P_r` over valid cells.
#[allow(clippy::too_many_arguments)]
pub fn global_guidance_loss(
    g: &mut Graph,
    p_s: Var,
    p_e: Var,
    p_c: Var,
    p_r: Var,
    g_s: &[f64],
    g_e: &[f64],
    g_c: &[f64],
    theta: f64,
) -> Result<Var> {
    let shape = g.shape(p_c).to_vec();
    if shape.len() != 3 || shape[1] != shape[2] || g.shape(p_s) != [shape[0], shape[1]] {
        return Err(Error::shape(format!(
            "guidance loss expects [B,T] and [B,T,T], got {:?} and {shape:?}",
            g.shape(p_s)
        )));
    }
    let (b, t) = (shape[0], shape[1]);
    let map = |g: &mut Graph, v: Var, axis| -> Result<Var> {
        let v = g.reshape(v, &[b, 1, t])?;
        let v = g.repeat_to_map(v, axis)?;
        g.reshape(v, &[b, t, t])
    };
    let ms = map(g, p_s, MapAxis::Start)?;
    let me = map(g, p_e, MapAxis::End)?;
    let m = g.mul(ms, me)?;
    let m = g.mul(m, p_c)?;
    let p_m = g.mul(m, p_r)?;
    let target = guidance_target(g_s, g_e, g_c, t);
    let valid = valid_cells(g_c.len(), t);
    weighted_bl_loss(g, p_m, &target, Some(&valid), theta)
}

/// Labels for one batch: `g_s`, `g_e` are `[B, T]`, `g_c` is `[B, T, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub g_s: Tensor,
    pub g_e: Tensor,
    pub g_c: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub l_b: Var,
    pub l_c: Var,
    pub l_g: Var,
    pub total: Var,
}

/// `L_B + L_C + β·L_G` on the outputs of one forward pass.
pub fn smbg_loss(
    g: &mut Graph,
    out: &Outputs,
    targets: &Targets,
    cfg: &LossConfig,
) -> Result<(LossTerms, LossBreakdown)> {
    let t = targets.g_s.shape().last().copied().unwrap_or(0);
    let theta = cfg.sampling.theta;
    let l_b = boundary_loss(
        g,
        out.start,
        out.end,
        targets.g_s.data(),
        targets.g_e.data(),
        theta,
    )?;
    let (l_c, sample) = confidence_loss(
        g,
        out.p_c,
        out.p_r,
        targets.g_c.data(),
        t,
        cfg.lambda,
        &cfg.sampling,
    )?;
    let l_g = global_guidance_loss(
        g,
        out.start,
        out.end,
        out.p_c,
        out.p_r,
        targets.g_s.data(),
        targets.g_e.data(),
        targets.g_c.data(),
        theta,
    )?;
    let lbc = g.add(l_b, l_c)?;
    let lg = g.scale(l_g, cfg.beta);
    let total = g.add(lbc, lg)?;
    let breakdown = LossBreakdown {
        l_b: g.value(l_b).item(),
        l_c: g.value(l_c).item(),
        l_g: g.value(l_g).item(),
        total: g.value(total).item(),
        sampled_negatives: sample.negatives,
        sampled_zero_cells: sample.zero_cells,
    };
    Ok((LossTerms { l_b, l_c, l_g, total }, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn closed_forms() {
        let p = [0.5; 4];
        let v = weighted_bl_value(&p, &[1.0, 1.0, 0.0, 0.0], 0.5).unwrap();
        assert!((v - 2.0 * LN_2).abs() < 1e-12);
        let v = weighted_bl_value(&p, &[1.0, 0.0, 0.0, 0.0], 0.5).unwrap();
        assert!((v - 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_predictions_near_zero() {
        let g = [1.0, 0.0, 1.0, 0.0];
        let p = [0.999_999, 1e-6, 0.999_999, 1e-6];
        assert!(weighted_bl_value(&p, &g, 0.5).unwrap() < 1e-5);
        assert!(weighted_bl_value(&[], &[], 0.5).is_err());
    }

    #[test]
    fn one_sided_labels_drop_missing_term() {
        let v = weighted_bl_value(&[0.5, 0.5], &[0.0, 0.0], 0.5).unwrap();
        assert!((v - LN_2).abs() < 1e-12);
    }

    #[test]
    fn sampling_ratio() {
        // 2 positives and 19 negatives among the 21 valid cells of a 6x6 map.
        let t = 6;
        let mut g_c = vec![0.0; t * t];
        g_c[0] = 0.9;
        g_c[7] = 0.8;
        g_c[1] = 0.3;
        let s = sample_confidence_cells(&g_c, t, &SamplingConfig::default()).unwrap();
        assert_eq!(s.negatives.len(), 10);
        assert_eq!(s.classification.len(), 12);
        assert!(s.negatives.iter().all(|&i| g_c[i] < 0.5 && i / t <= i % t));
        assert_eq!(s.zero_cells.len(), 3);
        assert_eq!(s.regression.len(), 6);
    }

    #[test]
    fn regression_offset_closed_form() {
        let t = 4;
        let mut g_c = vec![0.0; t * t];
        g_c[1] = 0.7;
        g_c[6] = 0.2;
        let mut g = Graph::new();
        let p_r: Vec<f64> = g_c.iter().map(|v| v + 0.1).collect();
        let pc =
            g.constant(Tensor::new(vec![1, t, t], g_c.iter().map(|v| v.clamp(0.2, 0.8)).collect()).unwrap());
        let pr = g.constant(Tensor::new(vec![1, t, t], p_r).unwrap());
        let cfg = SamplingConfig::default();
        let (lc, _) = confidence_loss(&mut g, pc, pr, &g_c, t, 10.0, &cfg).unwrap();
        let (lc0, _) = confidence_loss(&mut g, pc, pc, &g_c, t, 0.0, &cfg).unwrap();
        let reg = g.value(lc).item() - g.value(lc0).item();
        assert!((reg - 0.1).abs() < 1e-12, "{reg}");
    }

    #[test]
    fn total_identity() {
        assert_eq!(total_loss(1.0, 2.0, 5.0, 0.2), 4.0);
        assert_eq!(total_loss(1.0, 2.0, 5.0, 0.0), 3.0);
    }

    #[test]
    fn log_line_fields() {
        let b = LossBreakdown {
            l_b: 1.0,
            l_c: 2.0,
            l_g: 3.0,
            total: 3.6,
            sampled_negatives: vec![],
            sampled_zero_cells: vec![],
        };
        let v: serde_json::Value = serde_json::from_str(&b.log_line(7, 42)).unwrap();
        assert_eq!(v["step"], 7);
        assert_eq!(v["seed"], 42);
        assert_eq!(v["L_G"], 3.0);
    }

    proptest! {
        #[test]
        fn bl_nonnegative_and_permutation_invariant(
            pairs in prop::collection::vec((0.001f64..0.999, 0.0f64..1.0), 1..30),
            rot in 0usize..30,
        ) {
            let (p, g): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let v = weighted_bl_value(&p, &g, 0.5).unwrap();
            prop_assert!(v >= 0.0);
            let k = rot % p.len();
            let mut p2 = p.clone();
            let mut g2 = g.clone();
            p2.rotate_left(k);
            g2.rotate_left(k);
            let w = weighted_bl_value(&p2, &g2, 0.5).unwrap();
            prop_assert!((v - w).abs() <= 1e-12 * v.abs().max(1.0));
        }

        #[test]
        fn negative_count_contract(
            labels in prop::collection::vec(prop_oneof![Just(0.0), Just(0.2), Just(0.7)], 36),
            seed in any::<u64>(),
        ) {
            let t = 6;
            let cfg = SamplingConfig { seed, ..Default::default() };
            let s = sample_confidence_cells(&labels, t, &cfg).unwrap();
            let valid = valid_cells(36, t);
            let pos = valid.iter().filter(|&&i| labels[i] >= 0.5).count();
            let neg = valid.len() - pos;
            prop_assert_eq!(s.negatives.len(), (5 * pos.max(1)).min(neg));
            prop_assert_eq!(&s, &sample_confidence_cells(&labels, t, &cfg).unwrap());
        }
    }
}
