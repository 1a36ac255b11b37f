//! Seeded synthetic benchmark: noisy feature sequences with smoothed action segments.
//!
//! Each instance adds `sqrt(C)·a(t)·u` to the features, where `a(t)` is the fraction of
//! snippet `t` covered by the instance, blurred by a Gaussian, and `u` is a unit direction
//! mixing a dataset-wide action direction with a per-instance one. Noise is i.i.d. Gaussian
//! with variance `1 / snr`, so `snr` is the in-instance per-channel signal-to-noise power ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::features::FeatureStore;
use crate::error::{Error, Result};
use crate::labels::{ActionInstance, Annotations, VideoAnnotation};
use crate::tensor::Tensor;

pub const TRAIN_SUBSET: &str = "train";
pub const EVAL_SUBSET: &str = "eval";

const PLACEMENT_RETRIES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub train_videos: usize,
    pub eval_videos: usize,
    /// Video duration range in seconds, inclusive.
    pub duration: [f64; 2],
    /// Feature snippets per second.
    pub snippet_rate: f64,
    /// Instances per video, inclusive.
    pub instances: [usize; 2],
    /// Instance length as a fraction of the video, inclusive.
    pub instance_fraction: [f64; 2],
    pub channels: usize,
    pub snr: f64,
    /// Standard deviation of the boundary blur, in snippets.
    pub smoothing: f64,
    /// Weight of the dataset-wide direction in each instance direction.
    pub shared_direction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_videos: 200,
            eval_videos: 50,
            duration: [60.0, 180.0],
            snippet_rate: 1.0,
            instances: [1, 3],
            instance_fraction: [0.05, 0.4],
            channels: 16,
            snr: 1.0,
            smoothing: 1.0,
            shared_direction: 0.7,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        if !(self.duration[0] > 0.0 && self.duration[0] <= self.duration[1] && self.duration[1].is_finite()) {
            return bad(format!("bad duration range {:?}", self.duration));
        }
        if !(self.snippet_rate > 0.0) || (self.duration[0] * self.snippet_rate).round() < 2.0 {
            return bad("videos must span at least two snippets".into());
        }
        if self.instances[0] > self.instances[1] {
            return bad(format!("bad instance count range {:?}", self.instances));
        }
        let [lo, hi] = self.instance_fraction;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!(
                "bad instance fraction range {:?}",
                self.instance_fraction
            ));
        }
        if !(self.snr > 0.0) || !(self.smoothing >= 0.0) || !(0.0..=1.0).contains(&self.shared_direction) {
            return bad("snr must be positive, smoothing non-negative, shared_direction in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: FeatureStore,
    pub annotations: Annotations,
}

fn unit(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..c).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Non-overlapping instances separated by at least one snippet, sorted by start.
fn place(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    duration: f64,
    video: &str,
) -> Result<Vec<ActionInstance>> {
    let n = rng.gen_range(spec.instances[0]..=spec.instances[1]);
    let gap = 1.0 / spec.snippet_rate;
    let mut placed: Vec<(f64, f64)> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ok = false;
        for _ in 0..PLACEMENT_RETRIES {
            let frac = rng.gen_range(spec.instance_fraction[0]..=spec.instance_fraction[1]);
            let len = frac * duration;
            let start = rng.gen_range(0.0..=(duration - len).max(0.0));
            let end = (start + len).min(duration);
            if placed.iter().all(|&(s, e)| end + gap <= s || start >= e + gap) {
                placed.push((start, end));
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::invalid(format!(
                "video {video}: could not place {n} non-overlapping instances in {duration:.1} s"
            )));
        }
    }
    placed.sort_by(|a, b| a.0.total_cmp(&b.0));
    placed
        .into_iter()
        .map(|(s, e)| ActionInstance::new(s, e))
        .collect()
}

fn blur(signal: &[f64], sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return signal.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let n = signal.len() as isize;
    (0..n)
        .map(|t| {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (k, &w) in kernel.iter().enumerate() {
                let s = t + k as isize - r;
                if (0..n).contains(&s) {
                    acc += w * signal[s as usize];
                    wsum += w;
                }
            }
            acc / wsum
        })
        .collect()
}

/// Synthesizes `[channels, T_raw]` features for one annotated video.
pub fn render_video(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    shared: &[f64],
    duration: f64,
    instances: &[ActionInstance],
) -> Result<Tensor> {
    let c = spec.channels;
    let t_raw = ((duration * spec.snippet_rate).round() as usize).max(2);
    let dt = duration / t_raw as f64;
    let amp = (c as f64).sqrt();
    let mut data = vec![0.0; c * t_raw];
    for inst in instances {
        let own = unit(rng, c);
        let mut dir: Vec<f64> = shared
            .iter()
            .zip(&own)
            .map(|(s, o)| spec.shared_direction * s + (1.0 - spec.shared_direction) * o)
            .collect();
        let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        dir.iter_mut().for_each(|x| *x /= n);
        let cover: Vec<f64> = (0..t_raw)
            .map(|t| {
                let (a, b) = (t as f64 * dt, (t + 1) as f64 * dt);
                (inst.end.min(b) - inst.start.max(a)).max(0.0) / dt
            })
            .collect();
        let act = blur(&cover, spec.smoothing);
        for ch in 0..c {
            for (t, &a) in act.iter().enumerate() {
                data[ch * t_raw + t] += amp * a * dir[ch];
            }
        }
    }
    let sigma = if spec.snr.is_infinite() {
        0.0
    } else {
        spec.snr.recip().sqrt()
    };
    for v in &mut data {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    Tensor::new(vec![c, t_raw], data)
}

pub fn video_id(index: usize) -> String {
    format!("video_{index:05}")
}

pub fn synth_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shared = unit(&mut rng, spec.channels);
    let mut features = FeatureStore::new();
    let mut annotations = Annotations::new();
    for i in 0..spec.train_videos + spec.eval_videos {
        let id = video_id(i);
        let duration = rng.gen_range(spec.duration[0]..=spec.duration[1]);
        let instances = place(&mut rng, spec, duration, &id)?;
        features.insert(
            id.clone(),
            render_video(&mut rng, spec, &shared, duration, &instances)?,
        );
        let subset = if i < spec.train_videos {
            TRAIN_SUBSET
        } else {
            EVAL_SUBSET
        };
        annotations.insert(
            id,
            VideoAnnotation {
                duration_seconds: duration,
                subset: Some(subset.to_string()),
                instances,
            },
        );
    }
    Ok(Dataset {
        features,
        annotations,
    })
}
