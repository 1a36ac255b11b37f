use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{BatchNormState, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

fn conv(out: &mut Vec<ParamSpec>, name: &str, weight: Vec<usize>) {
    let fan_in = weight[1..].iter().product();
    let cout = weight[0];
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: weight,
        init: Init::FanIn(fan_in),
    });
    out.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![cout],
        init: Init::Zeros,
    });
}

fn norm(out: &mut Vec<ParamSpec>, name: &str, channels: usize) {
    out.push(ParamSpec {
        name: format!("{name}.gamma"),
        shape: vec![channels],
        init: Init::Ones,
    });
    out.push(ParamSpec {
        name: format!("{name}.beta"),
        shape: vec![channels],
        init: Init::Zeros,
    });
}

/// Every parameter in declaration order, which is also checkpoint order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (n0, h, n) = (cfg.input_channels, cfg.base_hidden, cfg.feature_channels);
    let half = n / 2;
    let ch = cfg.sec_hidden;
    let k = cfg.sec_kernel;
    let mut v = Vec::new();
    conv(&mut v, "base.conv1", vec![h, n0, 3]);
    conv(&mut v, "base.conv2", vec![n, h, 3]);
    for head in ["start_head", "end_head"] {
        conv(&mut v, &format!("{head}.conv1"), vec![half, n, 3]);
        conv(&mut v, &format!("{head}.conv2"), vec![1, half, 1]);
    }
    for (i, &ks) in cfg.bands.kernel_sizes.iter().enumerate() {
        conv(&mut v, &format!("mpfg.band{i}.start"), vec![n, n, ks]);
        conv(&mut v, &format!("mpfg.band{i}.end"), vec![n, n, ks]);
    }
    conv(&mut v, "sec.dilated", vec![ch, 2 * n, k, k]);
    norm(&mut v, "sec.norm0", ch);
    conv(&mut v, "sec.conv1", vec![ch, ch, 1, 1]);
    norm(&mut v, "sec.norm1", ch);
    conv(&mut v, "sec.conv2", vec![ch, ch, 1, 1]);
    norm(&mut v, "sec.norm2", ch);
    conv(&mut v, "sec.conv3", vec![2, ch, 1, 1]);
    v
}

/// Index ranges of each block inside the declaration-ordered parameter list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub base: Range<usize>,
    pub start_head: Range<usize>,
    pub end_head: Range<usize>,
    pub mpfg: Range<usize>,
    pub sec: Range<usize>,
}

pub const SEC_NORMS: usize = 3;

pub fn layout(cfg: &ModelConfig) -> Layout {
    let bands = cfg.bands.bands();
    let mpfg_end = 12 + 4 * bands;
    Layout {
        base: 0..4,
        start_head: 4..8,
        end_head: 8..12,
        mpfg: 12..mpfg_end,
        sec: mpfg_end..mpfg_end + 14,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub norms: Vec<BatchNormState>,
}

impl ModelParams {
    /// Fan-in scaled uniform weights, zero biases, unit norm scales.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = param_specs(cfg);
        let tensors = specs
            .iter()
            .map(|s| match s.init {
                Init::FanIn(f) => Tensor::uniform(&s.shape, 1.0 / (f as f64).sqrt(), &mut rng),
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::full(&s.shape, 1.0),
            })
            .collect();
        Self {
            names: specs.into_iter().map(|s| s.name).collect(),
            tensors,
            norms: vec![BatchNormState::new(cfg.sec_hidden); SEC_NORMS],
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.tensors[i])
    }

    /// Checks names and shapes against what `cfg` declares.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = param_specs(cfg);
        let want: Vec<String> = specs.iter().map(|s| format!("{}{:?}", s.name, s.shape)).collect();
        let have: Vec<String> = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| format!("{n}{:?}", t.shape()))
            .collect();
        if want != have {
            let first = want
                .iter()
                .zip(&have)
                .find(|(a, b)| a != b)
                .map(|(a, b)| (a.clone(), b.clone()))
                .unwrap_or_else(|| {
                    (
                        format!("{} parameters", want.len()),
                        format!("{} parameters", have.len()),
                    )
                });
            return Err(Error::CheckpointMismatch {
                expected: first.0,
                found: first.1,
            });
        }
        if self.norms.len() != SEC_NORMS || self.norms.iter().any(|n| n.channels() != cfg.sec_hidden) {
            return Err(Error::CheckpointMismatch {
                expected: format!("{SEC_NORMS} norm layers of width {}", cfg.sec_hidden),
                found: format!(
                    "{} norm layers of widths {:?}",
                    self.norms.len(),
                    self.norms.iter().map(|n| n.channels()).collect::<Vec<_>>()
                ),
            });
        }
        Ok(())
    }
}
