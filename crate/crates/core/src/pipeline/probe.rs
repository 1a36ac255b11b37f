//! Replaces the middle of each action with noise and watches the confidence at its cell.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::{video_samples, Sample};
use crate::error::{Error, Result};
use crate::labels::VideoAnnotation;
use crate::net::Smbg;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub fraction: f64,
    /// Mean over trials and probed instances of `P_c` at the instance cell.
    pub mean_p_c: f64,
    pub mean_p_r: f64,
    pub delta_p_c: f64,
    pub delta_p_r: f64,
    /// Per probed instance, averaged over trials.
    pub per_instance_p_c: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub video: String,
    pub trials: usize,
    /// `(sample, start cell, end cell)` of each probed instance.
    pub cells: Vec<(usize, usize, usize)>,
    pub skipped: Vec<String>,
    pub baseline_p_c: f64,
    pub baseline_p_r: f64,
    pub rows: Vec<ProbeRow>,
}

struct Target {
    sample: usize,
    s: usize,
    e: usize,
}

fn targets(samples: &[Sample], skipped: &mut Vec<String>) -> Vec<Target> {
    let mut out = Vec::new();
    for (si, sample) in samples.iter().enumerate() {
        let (t, dt) = (sample.grid.t, sample.grid.d_t());
        for inst in &sample.instances {
            let s = ((inst.start / dt).floor() as usize).min(t - 1);
            let e = (((inst.end / dt).ceil() as usize).max(1) - 1).clamp(s, t - 1);
            if e - s + 1 < 3 {
                skipped.push(format!(
                    "instance [{:.3}, {:.3}] in sample {si} spans {} cells, fewer than 3",
                    inst.start,
                    inst.end,
                    e - s + 1
                ));
                continue;
            }
            out.push(Target { sample: si, s, e });
        }
    }
    out
}

/// Time steps `[begin, end)` forming the central `fraction` of cells `s..=e`.
pub fn central_span(s: usize, e: usize, fraction: f64) -> (usize, usize) {
    let len = e - s + 1;
    let m = ((fraction * len as f64).round() as usize).min(len);
    let begin = s + (len - m) / 2;
    (begin, begin + m)
}

/// Per-channel mean and standard deviation over the whole sequence.
fn channel_stats(f: &Tensor) -> Vec<(f64, f64)> {
    let (c, t) = (f.shape()[0], f.shape()[1]);
    (0..c)
        .map(|ch| {
            let row = &f.data()[ch * t..(ch + 1) * t];
            let mean = row.iter().sum::<f64>() / t as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
            (mean, var.sqrt())
        })
        .collect()
}

fn corrupt(f: &Tensor, span: (usize, usize), stats: &[(f64, f64)], rng: &mut ChaCha8Rng) -> Tensor {
    let mut out = f.clone();
    let t = f.shape()[1];
    let d = out.data_mut();
    for (ch, &(mean, std)) in stats.iter().enumerate() {
        let normal = Normal::new(mean, std).expect("finite stats");
        for i in span.0..span.1 {
            d[ch * t + i] = normal.sample(rng);
        }
    }
    out
}

/// `T × T` grid as CSV, rows are start cells.
pub fn grid_csv(map: &[f64], t: usize) -> String {
    let mut s = String::new();
    for r in 0..t {
        let row: Vec<String> = map[r * t..(r + 1) * t].iter().map(f64::to_string).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Confidence at each instance cell with the central `fraction` of that instance replaced by
/// noise matched to the video's per-channel statistics. Returns the report and one `P_c` grid
/// snapshot per fraction, taken from the first trial.
pub fn noise_probe(
    cfg: &RunConfig,
    model: &Smbg,
    video: &str,
    features: &Tensor,
    ann: &VideoAnnotation,
    fractions: &[f64],
    trials: usize,
) -> Result<(ProbeReport, Vec<(String, String)>)> {
    if ann.instances.is_empty() {
        return Err(Error::invalid(format!(
            "video {video} has no annotated instances"
        )));
    }
    if trials == 0 {
        return Err(Error::invalid("probe needs at least one trial"));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::invalid(format!("noise fraction {f} outside [0, 1]")));
    }
    let samples = video_samples(cfg, video, features, ann)?;
    let mut skipped = Vec::new();
    let probed = targets(&samples, &mut skipped);
    let t = cfg.model.temporal_length;
    let stats: Vec<_> = samples.iter().map(|s| channel_stats(&s.features)).collect();

    let confidence = |sample: &Tensor| -> Result<(Vec<f64>, Vec<f64>)> {
        let c = sample.shape()[0];
        let p = model.predict(&Tensor::new(vec![1, c, t], sample.data().to_vec())?)?;
        Ok((p.p_c.data().to_vec(), p.p_r.data().to_vec()))
    };
    let measure =
        |fraction: f64, trial: usize, snaps: Option<&mut Vec<(String, String)>>| -> Result<Vec<(f64, f64)>> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(trial as u64);
            let mut vals = Vec::with_capacity(probed.len());
            let mut first_grid = None;
            for tg in &probed {
                let span = central_span(tg.s, tg.e, fraction);
                let x = corrupt(&samples[tg.sample].features, span, &stats[tg.sample], &mut rng);
                let (pc, pr) = confidence(&x)?;
                vals.push((pc[tg.s * t + tg.e], pr[tg.s * t + tg.e]));
                first_grid.get_or_insert(pc);
            }
            if let (Some(snaps), Some(g)) = (snaps, first_grid) {
                snaps.push((format!("p_c_f{fraction}.csv"), grid_csv(&g, t)));
            }
            Ok(vals)
        };

    let mean = |v: &[(f64, f64)], pick: fn(&(f64, f64)) -> f64| -> f64 {
        if v.is_empty() {
            0.0
        } else {
            v.iter().map(pick).sum::<f64>() / v.len() as f64
        }
    };
    let mut snaps = Vec::new();
    let base = measure(0.0, 0, Some(&mut snaps))?;
    snaps.clear();
    let (b_c, b_r) = (mean(&base, |p| p.0), mean(&base, |p| p.1));
    let mut rows = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let untouched = probed.iter().all(|tg| {
            let (a, b) = central_span(tg.s, tg.e, f);
            a == b
        });
        if untouched {
            measure(f, 0, Some(&mut snaps))?;
            rows.push(ProbeRow {
                fraction: f,
                mean_p_c: b_c,
                mean_p_r: b_r,
                delta_p_c: 0.0,
                delta_p_r: 0.0,
                per_instance_p_c: base.iter().map(|p| p.0).collect(),
            });
            continue;
        }
        let mut per = vec![0.0; probed.len()];
        let mut all = Vec::with_capacity(trials * probed.len());
        for trial in 0..trials {
            let vals = measure(f, trial, if trial == 0 { Some(&mut snaps) } else { None })?;
            for (acc, v) in per.iter_mut().zip(&vals) {
                *acc += v.0 / trials as f64;
            }
            all.extend(vals);
        }
        let (m_c, m_r) = (mean(&all, |p| p.0), mean(&all, |p| p.1));
        rows.push(ProbeRow {
            fraction: f,
            mean_p_c: m_c,
            mean_p_r: m_r,
            delta_p_c: m_c - b_c,
            delta_p_r: m_r - b_r,
            per_instance_p_c: per,
        });
    }
    Ok((
        ProbeReport {
            video: video.to_string(),
            trials,
            cells: probed.iter().map(|p| (p.sample, p.s, p.e)).collect(),
            skipped,
            baseline_p_c: b_c,
            baseline_p_r: b_r,
            rows,
        },
        snaps,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_spans() {
        assert_eq!(central_span(10, 19, 0.0), (15, 15));
        assert_eq!(central_span(10, 19, 0.2), (14, 16));
        assert_eq!(central_span(10, 19, 0.6), (12, 18));
        assert_eq!(central_span(10, 19, 1.0), (10, 20));
        assert_eq!(central_span(0, 2, 0.4), (1, 2));
    }
}
