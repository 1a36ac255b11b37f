use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{SyntheticSpec, EVAL_SUBSET, TRAIN_SUBSET};
use crate::container::write_file;
use crate::error::{Error, Result};
use crate::evalkit::activitynet_thresholds;
use crate::labels::MapLabel;
use crate::losses::LossConfig;
use crate::net::{BandSpec, ModelConfig};
use crate::postprocess::SoftNmsConfig;

/// How a video of arbitrary length becomes fixed-length model input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Linear interpolation of the whole video to `T` steps.
    #[default]
    Rescale,
    /// Overlapping windows of `T` snippets.
    Window,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub mode: InputMode,
    pub window_overlap: f64,
    pub map_label: MapLabel,
    pub train_subset: String,
    pub eval_subset: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mode: InputMode::Rescale,
            window_overlap: 0.5,
            map_label: MapLabel::Iou,
            train_subset: TRAIN_SUBSET.into(),
            eval_subset: EVAL_SUBSET.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1e-3,
            epochs: 10,
            shuffle: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub max_an: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: activitynet_thresholds(),
            max_an: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathConfig {
    pub features: PathBuf,
    pub annotations: PathBuf,
    pub checkpoints: PathBuf,
    pub outputs: PathBuf,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            features: "data/features.bin".into(),
            annotations: "data/annotations.json".into(),
            checkpoints: "runs/checkpoints".into(),
            outputs: "runs".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub fractions: Vec<f64>,
    pub trials: usize,
    /// Probed video; the first annotated evaluation video when unset.
    pub video: Option<String>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.2, 0.4, 0.6],
            trials: 20,
            video: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub kernel_sizes: Vec<Vec<usize>>,
    pub dilations: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kernel_sizes: vec![vec![17], vec![33], vec![57], vec![99], vec![17, 33, 57, 99]],
            dilations: vec![5, 6, 7, 8, 9],
        }
    }
}

/// Everything a run depends on. Written next to every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub nms: SoftNmsConfig,
    pub eval: EvalConfig,
    pub paths: PathConfig,
    pub synth: SyntheticSpec,
    pub probe: ProbeConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            nms: SoftNmsConfig::default(),
            eval: EvalConfig::default(),
            paths: PathConfig::default(),
            synth: SyntheticSpec::default(),
            probe: ProbeConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults for windowed input: `T = 128` with the band edges closed at 128.
    pub fn window_mode() -> Self {
        let mut cfg = Self::default();
        cfg.data.mode = InputMode::Window;
        cfg.model.temporal_length = 128;
        cfg.model.bands = BandSpec::standard()
            .with_length(128)
            .expect("standard kernels fit 128");
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.synth.validate()?;
        if self.train.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.train.learning_rate >= 0.0) {
            return Err(Error::invalid("learning rate must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.data.window_overlap) {
            return Err(Error::invalid("window_overlap must lie in [0, 1)"));
        }
        if self.eval.thresholds.is_empty() || self.eval.max_an == 0 {
            return Err(Error::invalid("evaluation needs thresholds and max_an >= 1"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config does not serialize: {e}")))
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_toml()?.as_bytes())
    }

    /// Points outputs and checkpoints at `dir`.
    pub fn set_output_dir(&mut self, dir: &Path) {
        self.paths.outputs = dir.to_path_buf();
        self.paths.checkpoints = dir.join("checkpoints");
    }
}
