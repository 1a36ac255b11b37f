use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::features::FeatureStore;
use super::infer::infer;
use super::train::train;
use super::{evaluate_run, load_model};
use crate::error::Result;
use crate::labels::Annotations;
use crate::net::BandSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    KernelSizes,
    Dilation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub ar_at_5: f64,
    pub ar_at_10: f64,
    pub ar_at_100: f64,
    pub auc: f64,
}

/// One configuration per axis value, each trained from scratch and evaluated.
pub fn sweep_configs(cfg: &RunConfig, axis: SweepAxis) -> Result<Vec<(String, RunConfig)>> {
    let t = cfg.model.temporal_length;
    let base = cfg.paths.outputs.join("sweep");
    let mut out = Vec::new();
    match axis {
        SweepAxis::KernelSizes => {
            for ks in &cfg.sweep.kernel_sizes {
                let mut c = cfg.clone();
                c.model.bands = BandSpec::from_kernels(ks, t)?;
                let label = ks.iter().map(usize::to_string).collect::<Vec<_>>().join("+");
                c.set_output_dir(&base.join(format!("kernels_{label}")));
                out.push((label, c));
            }
        }
        SweepAxis::Dilation => {
            for &d in &cfg.sweep.dilations {
                let mut c = cfg.clone();
                c.model.dilation = d;
                c.set_output_dir(&base.join(format!("dilation_{d}")));
                out.push((d.to_string(), c));
            }
        }
    }
    Ok(out)
}

pub fn sweep(
    cfg: &RunConfig,
    axis: SweepAxis,
    store: &FeatureStore,
    ann: &Annotations,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (value, c) in sweep_configs(cfg, axis)? {
        let report = train(&c, store, ann, false, &mut std::io::sink())?;
        let model = load_model(&report.checkpoint, &c.model)?;
        let props = infer(&c, &model, store, ann, Some(&c.data.eval_subset))?;
        let eval = evaluate_run(&c, &props, ann)?;
        let at = |an| eval.ar(an).unwrap_or(f64::NAN);
        rows.push(SweepRow {
            value,
            ar_at_5: at(5),
            ar_at_10: at(10),
            ar_at_100: at(100),
            auc: eval.auc,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let name = match axis {
        SweepAxis::KernelSizes => "kernel_sizes",
        SweepAxis::Dilation => "dilation",
    };
    let mut s = format!("{name},ar@5,ar@10,ar@100,auc\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.value, r.ar_at_5, r.ar_at_10, r.ar_at_100, r.auc
        );
    }
    s
}
