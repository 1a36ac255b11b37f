use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    Train,
    Eval,
}

/// Running statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

pub(crate) struct NormForward {
    pub out: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Layout `[batch, channels, inner]`; statistics are per channel over batch and inner.
pub(crate) fn forward(
    x: &[f64],
    (batch, channels, inner): (usize, usize, usize),
    gamma: &[f64],
    beta: &[f64],
    state: &mut BatchNormState,
    mode: NormMode,
) -> NormForward {
    let n = (batch * inner) as f64;
    let mut inv_std = vec![0.0; channels];
    let mut mean = vec![0.0; channels];
    match mode {
        NormMode::Train => {
            for c in 0..channels {
                let mut s = 0.0;
                for b in 0..batch {
                    s += x[(b * channels + c) * inner..][..inner].iter().sum::<f64>();
                }
                let m = s / n;
                let mut v = 0.0;
                for b in 0..batch {
                    for &xv in &x[(b * channels + c) * inner..][..inner] {
                        v += (xv - m) * (xv - m);
                    }
                }
                let var = v / n;
                mean[c] = m;
                inv_std[c] = 1.0 / (var + state.eps).sqrt();
                let mom = state.momentum;
                state.running_mean[c] = (1.0 - mom) * state.running_mean[c] + mom * m;
                state.running_var[c] = (1.0 - mom) * state.running_var[c] + mom * var;
            }
        }
        NormMode::Eval => {
            for c in 0..channels {
                mean[c] = state.running_mean[c];
                inv_std[c] = 1.0 / (state.running_var[c] + state.eps).sqrt();
            }
        }
    }
    let mut x_hat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * inner;
            for i in off..off + inner {
                let h = (x[i] - mean[c]) * inv_std[c];
                x_hat[i] = h;
                out[i] = gamma[c] * h + beta[c];
            }
        }
    }
    NormForward { out, x_hat, inv_std }
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub(crate) fn backward(
    g: &[f64],
    x_hat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    (batch, channels, inner): (usize, usize, usize),
    mode: NormMode,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = (batch * inner) as f64;
    let mut gx = vec![0.0; g.len()];
    let mut ggamma = vec![0.0; channels];
    let mut gbeta = vec![0.0; channels];
    for c in 0..channels {
        let (mut sum_g, mut sum_gh) = (0.0, 0.0);
        for b in 0..batch {
            let off = (b * channels + c) * inner;
            for i in off..off + inner {
                sum_g += g[i];
                sum_gh += g[i] * x_hat[i];
            }
        }
        ggamma[c] = sum_gh;
        gbeta[c] = sum_g;
        let scale = gamma[c] * inv_std[c];
        for b in 0..batch {
            let off = (b * channels + c) * inner;
            for i in off..off + inner {
                gx[i] = match mode {
                    NormMode::Train => scale / n * (n * g[i] - sum_g - x_hat[i] * sum_gh),
                    NormMode::Eval => scale * g[i],
                };
            }
        }
    }
    (gx, ggamma, gbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(v: &[f64]) -> (f64, f64) {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
        (m, var)
    }

    #[test]
    fn train_mode_standardizes() {
        // mean 5, biased variance 4
        let x = [3.0, 7.0, 3.0, 7.0];
        let mut st = BatchNormState::new(1);
        let f = forward(&x, (2, 1, 2), &[1.0], &[0.0], &mut st, NormMode::Train);
        let (m, v) = moments(&f.out);
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-5);
        assert!((st.running_mean[0] - 0.5).abs() < 1e-12);
        assert!((st.running_var[0] - (0.9 + 0.4)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_with_unit_stats_is_identity() {
        let x = [1.5, -2.0, 0.25];
        let mut st = BatchNormState::new(1);
        st.eps = 0.0;
        let f = forward(&x, (1, 1, 3), &[1.0], &[0.0], &mut st, NormMode::Eval);
        assert_eq!(f.out, x.to_vec());
    }

    #[test]
    fn affine_law() {
        let x = [-1.0, 1.0, -1.0, 1.0];
        let mut st = BatchNormState::new(1);
        let f = forward(&x, (1, 1, 4), &[2.0], &[3.0], &mut st, NormMode::Train);
        let (m, v) = moments(&f.out);
        assert!((m - 3.0).abs() < 1e-12);
        assert!((v.sqrt() - 2.0).abs() < 1e-4);
    }

    #[test]
    fn single_sample_zero_variance_uses_eps_floor() {
        let x = [4.0, 4.0, 4.0];
        let mut st = BatchNormState::new(1);
        let f = forward(&x, (1, 1, 3), &[1.0], &[0.0], &mut st, NormMode::Train);
        assert!(f.out.iter().all(|v| v.is_finite() && *v == 0.0));
        assert!(f.inv_std[0].is_finite());
    }
}
