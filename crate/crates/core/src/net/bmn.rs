//! Boundary-matching proposal feature generation, kept as the cost baseline.
//!
//! Every cell `(s, e)` samples `S` points uniformly across `[s - r·len, e + 1 + r·len]` with
//! `len = e + 1 - s` and `r = EXPANSION`. Each point is linearly interpolated between its two
//! neighbouring feature positions. All weights are folded into one dense `T × (S·T·T)`
//! matrix so the whole layer becomes a single matrix product per video.

use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm_acc, MatMut, MatRef};
use crate::tensor::Tensor;

pub const EXPANSION: f64 = 0.25;
pub const DEFAULT_SAMPLES: usize = 32;

/// Sample `k` of cell `(s, e)`: the two interpolation taps `(index, weight)`.
pub fn sample_taps(t: usize, samples: usize, s: usize, e: usize, k: usize) -> [(usize, f64); 2] {
    let len = (e + 1 - s) as f64;
    let lo = s as f64 - EXPANSION * len;
    let hi = (e + 1) as f64 + EXPANSION * len;
    let step = (hi - lo) / samples as f64;
    let p = (lo + (k as f64 + 0.5) * step).clamp(0.0, (t - 1) as f64);
    let i0 = p.floor() as usize;
    let frac = p - i0 as f64;
    let i1 = (i0 + 1).min(t - 1);
    [(i0, 1.0 - frac), (i1, frac)]
}

/// Precomputed dense sampling matrix.
#[derive(Clone, Debug)]
pub struct BmnSampler {
    t: usize,
    samples: usize,
    /// Row-major `[T, S·T·T]`; column index `(k·T + s)·T + e`.
    mask: Vec<f64>,
}

impl BmnSampler {
    pub fn new(t: usize, samples: usize) -> Result<Self> {
        if t == 0 || samples == 0 {
            return Err(Error::invalid("sampler needs positive length and sample count"));
        }
        let cols = samples * t * t;
        let mut mask = vec![0.0; t * cols];
        for k in 0..samples {
            for s in 0..t {
                for e in s..t {
                    let col = (k * t + s) * t + e;
                    for (i, w) in sample_taps(t, samples, s, e, k) {
                        mask[i * cols + col] += w;
                    }
                }
            }
        }
        Ok(Self { t, samples, mask })
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    pub fn output_len(&self) -> usize {
        self.samples * self.t * self.t
    }

    /// One video: `x` is `[N, T]`, `out` is `[N, S·T·T]` and is overwritten.
    pub fn apply_video(&self, x: &[f64], channels: usize, out: &mut [f64]) {
        let cols = self.output_len();
        assert_eq!(x.len(), channels * self.t);
        assert_eq!(out.len(), channels * cols);
        out.fill(0.0);
        gemm_acc(
            channels,
            cols,
            self.t,
            MatRef::row_major(x, self.t),
            MatRef::row_major(&self.mask, cols),
            &mut MatMut::row_major(out, cols),
        );
    }

    /// `[B, N, T] → [B, N, S, T, T]`.
    pub fn apply(&self, f_b: &Tensor) -> Result<Tensor> {
        let s = f_b.shape();
        if s.len() != 3 || s[2] != self.t {
            return Err(Error::shape(format!(
                "sampler built for T={} got input {s:?}",
                self.t
            )));
        }
        let (batch, n) = (s[0], s[1]);
        let per = n * self.output_len();
        let mut out = vec![0.0; batch * per];
        for b in 0..batch {
            self.apply_video(
                &f_b.data()[b * n * self.t..][..n * self.t],
                n,
                &mut out[b * per..][..per],
            );
        }
        Tensor::new(vec![batch, n, self.samples, self.t, self.t], out)
    }
}

/// Boundary-matching sampled features, `[B, N, T] → [B, N, S, T, T]`.
pub fn bmn_pfg_reference(f_b: &Tensor, samples: usize) -> Result<Tensor> {
    let t = f_b.shape().get(2).copied().unwrap_or(0);
    BmnSampler::new(t, samples)?.apply(f_b)
}

/// Direct per-point interpolation; the loop oracle for [`bmn_pfg_reference`].
pub fn bmn_pfg_loop(f_b: &Tensor, samples: usize) -> Result<Tensor> {
    let s = f_b.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("f_b must be [B,N,T], got {s:?}")));
    }
    let (batch, n, t) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; batch * n * samples * t * t];
    for b in 0..batch {
        for c in 0..n {
            let x = &f_b.data()[(b * n + c) * t..][..t];
            for k in 0..samples {
                for st in 0..t {
                    for en in st..t {
                        let [(i0, w0), (i1, w1)] = sample_taps(t, samples, st, en, k);
                        out[(((b * n + c) * samples + k) * t + st) * t + en] = x[i0] * w0 + x[i1] * w1;
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch, n, samples, t, t], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_feature_is_preserved() {
        let x = Tensor::full(&[1, 2, 12], 3.5);
        let out = bmn_pfg_reference(&x, 8).unwrap();
        let t = 12;
        for c in 0..2 {
            for k in 0..8 {
                for s in 0..t {
                    for e in s..t {
                        let v = out.data()[((c * 8 + k) * t + s) * t + e];
                        assert!((v - 3.5).abs() < 1e-12, "{v}");
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_cell_stays_local() {
        let t = 20;
        for s in 0..t {
            for k in 0..32 {
                for (i, w) in sample_taps(t, 32, s, s, k) {
                    if w > 0.0 {
                        assert!(i + 1 >= s && i <= s + 2, "s={s} tap {i}");
                    }
                }
            }
        }
    }

    #[test]
    fn matches_interpolation_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::randn(&[2, 4, 16], &mut rng);
        let a = bmn_pfg_reference(&x, 32).unwrap();
        let b = bmn_pfg_loop(&x, 32).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn mask_columns_sum_to_one() {
        let sm = BmnSampler::new(9, 4).unwrap();
        let cols = sm.output_len();
        for k in 0..4 {
            for s in 0..9 {
                for e in 0..9 {
                    let col = (k * 9 + s) * 9 + e;
                    let total: f64 = (0..9).map(|i| sm.mask()[i * cols + col]).sum();
                    let want = if e >= s { 1.0 } else { 0.0 };
                    assert!((total - want).abs() < 1e-12);
                }
            }
        }
    }
}
