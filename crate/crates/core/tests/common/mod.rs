#![allow(dead_code)]

pub mod grad;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smbg::labels::{assign_labels, ActionInstance, MapLabel, TemporalGrid};
use smbg::losses::Targets;
use smbg::net::{BandSpec, ModelConfig};
use smbg::tensor::Tensor;

/// Narrow model at length `t` with three duration bands.
pub fn tiny_config(t: usize) -> ModelConfig {
    ModelConfig {
        input_channels: 4,
        base_hidden: 6,
        feature_channels: 4,
        temporal_length: t,
        bands: BandSpec::new(vec![0, t / 4, t / 2, t], vec![3, 5, 7]).unwrap(),
        sec_hidden: 4,
        dilation: 3,
        ..Default::default()
    }
}

/// Random features with labels from one or two random instances per video.
pub fn toy_batch(seed: u64, batch: usize, channels: usize, t: usize) -> (Tensor, Targets) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(&[batch, channels, t], &mut rng);
    let grid = TemporalGrid::new(t, t as f64).unwrap();
    let (mut gs, mut ge, mut gc) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..batch {
        let n = rng.gen_range(1..=2);
        let inst: Vec<ActionInstance> = (0..n)
            .map(|_| {
                let s = rng.gen_range(0..t - 2) as f64;
                let e = (s + rng.gen_range(2..t / 2) as f64).min(t as f64);
                ActionInstance::new(s, e).unwrap()
            })
            .collect();
        let l = assign_labels(&inst, &grid, MapLabel::Iou).unwrap();
        gs.extend(l.g_s);
        ge.extend(l.g_e);
        gc.extend(l.g_c);
    }
    let targets = Targets {
        g_s: Tensor::new(vec![batch, t], gs).unwrap(),
        g_e: Tensor::new(vec![batch, t], ge).unwrap(),
        g_c: Tensor::new(vec![batch, t, t], gc).unwrap(),
    };
    (x, targets)
}
