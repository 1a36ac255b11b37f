//! Multiply-accumulate accounting, the instrumented-forward oracle, and a wall-clock harness.
//!
//! One MAC is one multiply-accumulate. Bias, activations, normalization, masking and summation
//! are free. Convolution counts include taps that fall on zero padding, as the loop kernels do.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::bmn::{BmnSampler, DEFAULT_SAMPLES};
use crate::net::reference::{forward_loop, MacCounter};
use crate::net::{cell_bands, mpfg_forward, BandSpec, MaskSemantics, ModelConfig, Smbg};
use crate::tensor::{Graph, Tensor};

pub fn macs_conv1d(cin: usize, cout: usize, k: usize, t: usize) -> u64 {
    (cin * cout * k * t) as u64
}

pub fn macs_conv2d(cin: usize, cout: usize, kh: usize, kw: usize, h: usize, w: usize) -> u64 {
    (cin * cout * kh * kw * h * w) as u64
}

/// Two branches per band, each a length-preserving convolution over the full sequence.
pub fn macs_mpfg(n_in: usize, n_out: usize, kernels: &[usize], t: usize) -> u64 {
    kernels.iter().map(|&k| 2 * macs_conv1d(n_in, n_out, k, t)).sum()
}

/// The convolution that follows boundary-matching sampling: a 3D convolution whose depth
/// spans the sample axis, mapping `N` channels to `out_channels`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv3dConfig {
    pub out_channels: usize,
    pub depth: usize,
}

impl Default for Conv3dConfig {
    fn default() -> Self {
        Self {
            out_channels: 512,
            depth: DEFAULT_SAMPLES,
        }
    }
}

pub fn macs_bmn_sampling(n: usize, t: usize, samples: usize) -> u64 {
    (n * t * t * t * samples) as u64
}

pub fn macs_bmn_pfg(n: usize, t: usize, samples: usize, conv: &Conv3dConfig) -> u64 {
    macs_bmn_sampling(n, t, samples) + (n * conv.out_channels * conv.depth * t * t) as u64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub macs: u64,
    pub params: u64,
}

impl LayerCost {
    fn new(name: impl Into<String>, macs: u64, params: usize) -> Self {
        Self {
            name: name.into(),
            macs,
            params: params as u64,
        }
    }
}

/// Per-layer analytic costs of the SMBG model for a batch, in execution order.
///
/// Names match the ones recorded by [`instrument_forward`].
pub fn model_layer_costs(cfg: &ModelConfig, batch: usize) -> Vec<LayerCost> {
    let t = cfg.temporal_length;
    let (n0, h, n, ch, k) = (
        cfg.input_channels,
        cfg.base_hidden,
        cfg.feature_channels,
        cfg.sec_hidden,
        cfg.sec_kernel,
    );
    let half = n / 2;
    let b = batch as u64;
    let c1 = |name: String, cin, cout, k| {
        LayerCost::new(name, b * macs_conv1d(cin, cout, k, t), cin * cout * k + cout)
    };
    let c2 = |name: &str, cin, cout, k| {
        LayerCost::new(
            name,
            b * macs_conv2d(cin, cout, k, k, t, t),
            cin * cout * k * k + cout,
        )
    };
    let mut v = vec![
        c1("base.conv1".into(), n0, h, 3),
        c1("base.conv2".into(), h, n, 3),
    ];
    for head in ["start_head", "end_head"] {
        v.push(c1(format!("{head}.conv1"), n, half, 3));
        v.push(c1(format!("{head}.conv2"), half, 1, 1));
    }
    for (i, &ks) in cfg.bands.kernel_sizes.iter().enumerate() {
        v.push(c1(format!("mpfg.band{i}.start"), n, n, ks));
        v.push(c1(format!("mpfg.band{i}.end"), n, n, ks));
    }
    v.push(c2("sec.dilated", 2 * n, ch, k));
    v.push(c2("sec.conv1", ch, ch, 1));
    v.push(c2("sec.conv2", ch, ch, 1));
    v.push(c2("sec.conv3", ch, 2, 1));
    v
}

/// Runs the scalar-loop forward and returns the multiply-accumulates it executed per layer.
pub fn instrument_forward(model: &Smbg, x: &Tensor) -> Result<MacCounter> {
    Ok(forward_loop(model, x)?.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub variant: Variant,
    pub warmup: usize,
    pub repetitions: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub median_s: f64,
    pub min_s: f64,
    pub samples_s: Vec<f64>,
}

impl BenchStats {
    pub fn from_samples(variant: Variant, warmup: usize, samples: Vec<f64>) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 {
            sorted[m / 2]
        } else {
            (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0
        };
        Self {
            variant,
            warmup,
            repetitions: samples.len(),
            mean_s: mean,
            std_s: var.sqrt(),
            median_s: median,
            min_s: sorted[0],
            samples_s: samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// Every size and assumption the counts depend on.
    pub config: serde_json::Value,
    pub layers: Vec<LayerCost>,
    /// Proposal feature generation layers only.
    pub block_total: u64,
    pub module_total: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<BenchStats>,
}

impl CostReport {
    pub fn new(config: serde_json::Value, layers: Vec<LayerCost>, block: impl Fn(&str) -> bool) -> Self {
        Self {
            block_total: layers.iter().filter(|l| block(&l.name)).map(|l| l.macs).sum(),
            module_total: layers.iter().map(|l| l.macs).sum(),
            config,
            layers,
            timing: None,
        }
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>18} {:>12}", "layer", "MACs", "params");
        for l in &self.layers {
            let _ = writeln!(s, "{:<24} {:>18} {:>12}", l.name, l.macs, l.params);
        }
        let _ = writeln!(s, "{:<24} {:>18.4e}", "block total", self.block_total as f64);
        let _ = writeln!(s, "{:<24} {:>18.4e}", "module total", self.module_total as f64);
        if let Some(t) = &self.timing {
            let _ = writeln!(
                s,
                "{:?}: mean {:.6} s, std {:.6} s, median {:.6} s over {} runs",
                t.variant, t.mean_s, t.std_s, t.median_s, t.repetitions
            );
        }
        s
    }
}

pub fn model_report(cfg: &ModelConfig, batch: usize) -> Result<CostReport> {
    cfg.validate()?;
    let config = serde_json::json!({ "model": cfg, "batch": batch });
    Ok(CostReport::new(config, model_layer_costs(cfg, batch), |n| {
        n.starts_with("mpfg.")
    }))
}

/// Sizes of the proposal-feature-generation comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonConfig {
    pub t: usize,
    /// Input channels of every band branch.
    pub mpfg_in: usize,
    /// Output channels of every band branch.
    pub mpfg_out: usize,
    pub bands: BandSpec,
    /// Channels entering boundary-matching sampling.
    pub bmn_channels: usize,
    pub samples: usize,
    pub conv3d: Conv3dConfig,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            t: 100,
            mpfg_in: 128,
            mpfg_out: 256,
            bands: BandSpec::standard(),
            bmn_channels: 256,
            samples: DEFAULT_SAMPLES,
            conv3d: Conv3dConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mpfg: CostReport,
    pub bmn_pfg: CostReport,
    /// `mpfg.block_total / bmn_pfg.block_total`.
    pub ratio: f64,
}

pub fn compare(cfg: &ComparisonConfig) -> Result<Comparison> {
    cfg.bands.validate_for(cfg.t)?;
    let echo = serde_json::to_value(cfg)?;
    let t = cfg.t;
    let mut layers = Vec::new();
    for (i, &k) in cfg.bands.kernel_sizes.iter().enumerate() {
        for side in ["start", "end"] {
            layers.push(LayerCost::new(
                format!("mpfg.band{i}.{side}"),
                macs_conv1d(cfg.mpfg_in, cfg.mpfg_out, k, t),
                cfg.mpfg_in * cfg.mpfg_out * k + cfg.mpfg_out,
            ));
        }
    }
    let mpfg = CostReport::new(echo.clone(), layers, |_| true);
    debug_assert_eq!(
        mpfg.block_total,
        macs_mpfg(cfg.mpfg_in, cfg.mpfg_out, &cfg.bands.kernel_sizes, t)
    );
    let n = cfg.bmn_channels;
    let c3 = &cfg.conv3d;
    let bmn_layers = vec![
        LayerCost::new("bmn.sampling", macs_bmn_sampling(n, t, cfg.samples), 0),
        LayerCost::new(
            "bmn.conv3d",
            (n * c3.out_channels * c3.depth * t * t) as u64,
            n * c3.out_channels * c3.depth + c3.out_channels,
        ),
    ];
    let bmn_pfg = CostReport::new(echo, bmn_layers, |_| true);
    let ratio = mpfg.block_total as f64 / bmn_pfg.block_total as f64;
    Ok(Comparison { mpfg, bmn_pfg, ratio })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Mpfg,
    BmnPfg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub t: usize,
    pub channels: usize,
    pub batch: usize,
    pub samples: usize,
    pub bands: BandSpec,
    pub warmup: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            t: 100,
            channels: 128,
            batch: 16,
            samples: DEFAULT_SAMPLES,
            bands: BandSpec::standard(),
            warmup: 3,
            repetitions: 10,
            seed: 0,
        }
    }
}

/// Times one forward of the chosen proposal feature generator over the same seeded input.
///
/// The boundary-matching output is about `N·S·T²` values per video, so it is produced one
/// video at a time into a reused buffer.
pub fn bench(variant: Variant, cfg: &BenchConfig) -> Result<BenchStats> {
    if cfg.repetitions < 10 || cfg.warmup < 3 {
        return Err(Error::invalid(format!(
            "bench needs at least 3 warmup runs and 10 repetitions, got {} and {}",
            cfg.warmup, cfg.repetitions
        )));
    }
    cfg.bands.validate_for(cfg.t)?;
    let (b, n, t) = (cfg.batch, cfg.channels, cfg.t);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f_b = Tensor::randn(&[b, n, t], &mut rng);
    let mut run: Box<dyn FnMut() -> Result<f64>> = match variant {
        Variant::Mpfg => {
            let cells = Arc::new(cell_bands(t, &cfg.bands, MaskSemantics::Duration)?);
            let mut weights = Vec::new();
            for &k in &cfg.bands.kernel_sizes {
                for _ in 0..2 {
                    weights.push(Tensor::uniform(
                        &[n, n, k],
                        1.0 / ((n * k) as f64).sqrt(),
                        &mut rng,
                    ));
                    weights.push(Tensor::zeros(&[n]));
                }
            }
            Box::new(move || {
                let mut g = Graph::new();
                let x = g.constant(f_b.clone());
                let p: Vec<_> = weights.iter().map(|w| g.constant(w.clone())).collect();
                let out = mpfg_forward(&mut g, &p, x, cells.clone())?;
                Ok(g.value(out).data()[0])
            })
        }
        Variant::BmnPfg => {
            let sampler = BmnSampler::new(t, cfg.samples)?;
            let mut buf = vec![0.0; n * sampler.output_len()];
            Box::new(move || {
                let mut probe = 0.0;
                for v in 0..b {
                    sampler.apply_video(&f_b.data()[v * n * t..][..n * t], n, &mut buf);
                    probe += buf[0];
                }
                Ok(probe)
            })
        }
    };
    for _ in 0..cfg.warmup {
        std::hint::black_box(run()?);
    }
    let mut samples = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions {
        let start = Instant::now();
        std::hint::black_box(run()?);
        samples.push(start.elapsed().as_secs_f64());
    }
    Ok(BenchStats::from_samples(variant, cfg.warmup, samples))
}
