//! Ground-truth construction for boundary sequences and the confidence map.
//!
//! Grid index `n` covers seconds `[n·d_t, (n+1)·d_t]`, so map cell `(s, e)` is the proposal
//! `[s·d_t, (e+1)·d_t]`. Start location `n` is the time `n·d_t` and end location `n` is the
//! time `(n+1)·d_t`; the boundary regions below are centered on those times.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> f64 {
        (self.end - self.start).max(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0.0
    }

    pub fn intersection(&self, other: &Interval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    fn clamp(self, lo: f64, hi: f64) -> Self {
        Self::new(self.start.clamp(lo, hi), self.end.clamp(lo, hi))
    }
}

/// Fraction of `region` covered by `other`.
pub fn ior(region: &Interval, other: &Interval) -> Result<f64> {
    if region.is_empty() {
        return Err(Error::invalid(format!(
            "region [{}, {}] has no length",
            region.start, region.end
        )));
    }
    Ok(region.intersection(other) / region.len())
}

/// Intersection over union; two empty intervals score 0.
pub fn iou(a: &Interval, b: &Interval) -> f64 {
    let inter = a.intersection(b);
    let union = a.len() + b.len() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One annotated action, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionInstance {
    pub start: f64,
    pub end: f64,
}

impl ActionInstance {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start >= 0.0 && end > start && end.is_finite()) {
            return Err(Error::invalid(format!("invalid instance [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }

    pub fn interval(&self) -> Interval {
        Interval::new(self.start, self.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemporalGrid {
    pub t: usize,
    pub duration: f64,
}

impl TemporalGrid {
    pub fn new(t: usize, duration: f64) -> Result<Self> {
        if t == 0 || !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::invalid(format!(
                "grid needs T > 0 and a positive duration, got T={t}, duration={duration}"
            )));
        }
        Ok(Self { t, duration })
    }

    pub fn d_t(&self) -> f64 {
        self.duration / self.t as f64
    }

    /// Seconds spanned by map cell `(s, e)`.
    pub fn cell_interval(&self, s: usize, e: usize) -> Interval {
        Interval::new(s as f64 * self.d_t(), (e + 1) as f64 * self.d_t())
    }

    fn location_region(&self, center: f64) -> Interval {
        let h = 0.5 * self.d_t();
        Interval::new(center - h, center + h).clamp(0.0, self.duration)
    }
}

/// Overlap measure used for the confidence-map label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapLabel {
    #[default]
    Iou,
    Ior,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelSet {
    pub g_s: Vec<f64>,
    pub g_e: Vec<f64>,
    /// Row-major `T × T` over `(start, end)`.
    pub g_c: Vec<f64>,
}

fn check_instances(instances: &[ActionInstance], grid: &TemporalGrid) -> Result<()> {
    for inst in instances {
        if inst.start < 0.0 || inst.end <= inst.start || inst.end > grid.duration + 1e-9 {
            return Err(Error::invalid(format!(
                "instance [{}, {}] outside video of {} s",
                inst.start, inst.end, grid.duration
            )));
        }
    }
    Ok(())
}

fn boundary_sequence(
    instances: &[ActionInstance],
    grid: &TemporalGrid,
    time: impl Fn(&ActionInstance) -> f64,
    offset: f64,
) -> Result<Vec<f64>> {
    let d_t = grid.d_t();
    let mut out = vec![0.0; grid.t];
    for (n, v) in out.iter_mut().enumerate() {
        let region = grid.location_region((n as f64 + offset) * d_t);
        for inst in instances {
            let t = time(inst);
            let r = Interval::new(t - d_t, t + d_t);
            *v = f64::max(*v, ior(&region, &r)?);
        }
    }
    Ok(out)
}

/// Start and end label sequences, each of length `T`.
pub fn assign_boundary_labels(
    instances: &[ActionInstance],
    grid: &TemporalGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_instances(instances, grid)?;
    Ok((
        boundary_sequence(instances, grid, |i| i.start, 0.0)?,
        boundary_sequence(instances, grid, |i| i.end, 1.0)?,
    ))
}

/// Confidence-map label, zero below the diagonal.
pub fn assign_map_labels(
    instances: &[ActionInstance],
    grid: &TemporalGrid,
    measure: MapLabel,
) -> Result<Vec<f64>> {
    check_instances(instances, grid)?;
    let t = grid.t;
    let mut out = vec![0.0; t * t];
    for s in 0..t {
        for e in s..t {
            let cand = grid.cell_interval(s, e);
            let mut best: f64 = 0.0;
            for inst in instances {
                let v = match measure {
                    MapLabel::Iou => iou(&cand, &inst.interval()),
                    MapLabel::Ior => ior(&cand, &inst.interval())?,
                };
                best = best.max(v);
            }
            out[s * t + e] = best;
        }
    }
    Ok(out)
}

pub fn assign_labels(
    instances: &[ActionInstance],
    grid: &TemporalGrid,
    measure: MapLabel,
) -> Result<LabelSet> {
    let (g_s, g_e) = assign_boundary_labels(instances, grid)?;
    let g_c = assign_map_labels(instances, grid, measure)?;
    Ok(LabelSet { g_s, g_e, g_c })
}

/// One video of an annotation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub duration_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    pub instances: Vec<ActionInstance>,
}

/// Video id → annotation, ordered by id.
pub type Annotations = BTreeMap<String, VideoAnnotation>;

pub fn load_annotations(path: &Path) -> Result<Annotations> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ann: Annotations = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    for (id, v) in &ann {
        let grid = TemporalGrid::new(1, v.duration_seconds)
            .map_err(|e| Error::parse(path, format!("video {id}: {e}")))?;
        check_instances(&v.instances, &grid).map_err(|e| Error::parse(path, format!("video {id}: {e}")))?;
    }
    Ok(ann)
}

pub fn save_annotations(path: &Path, ann: &Annotations) -> Result<()> {
    let text = serde_json::to_string_pretty(ann)?;
    crate::container::write_file(path, text.as_bytes())
}
