//! Scalar-loop reference kernels.
//!
//! These loops are the verification oracle for the vectorized engine and the instrumentation
//! path of the cost model: every multiply-accumulate they execute, including taps that land on
//! zero padding, increments the caller's counter.

use super::bands::BandSpec;
use super::model::Prediction;
use super::params::layout;
use super::{MaskSemantics, Smbg};
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, BatchNormState, Tensor};

/// Measured multiply-accumulates per executed layer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MacCounter {
    pub layers: Vec<(String, u64)>,
}

impl MacCounter {
    pub fn total(&self) -> u64 {
        self.layers.iter().map(|(_, m)| m).sum()
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, m)| *m)
    }
}

pub fn conv1d_loop(x: &Tensor, w: &Tensor, b: &Tensor, macs: &mut u64) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[1] || b.numel() != ws[0] {
        return Err(Error::shape(format!(
            "conv1d_loop: input {xs:?}, weight {ws:?}, bias {:?}",
            b.shape()
        )));
    }
    let (batch, cin, t_len) = (xs[0], xs[1], xs[2]);
    let (cout, k) = (ws[0], ws[2]);
    let pad = ((k - 1) / 2) as isize;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![0.0; batch * cout * t_len];
    for bi in 0..batch {
        for o in 0..cout {
            for t in 0..t_len {
                let mut acc = bd[o];
                for c in 0..cin {
                    for j in 0..k {
                        let s = t as isize + j as isize - pad;
                        let xv = if s >= 0 && (s as usize) < t_len {
                            xd[(bi * cin + c) * t_len + s as usize]
                        } else {
                            0.0
                        };
                        acc += wd[(o * cin + c) * k + j] * xv;
                        *macs += 1;
                    }
                }
                out[(bi * cout + o) * t_len + t] = acc;
            }
        }
    }
    Tensor::new(vec![batch, cout, t_len], out)
}

pub fn conv2d_loop(x: &Tensor, w: &Tensor, b: &Tensor, dilation: usize, macs: &mut u64) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || b.numel() != ws[0] {
        return Err(Error::shape(format!(
            "conv2d_loop: input {xs:?}, weight {ws:?}, bias {:?}",
            b.shape()
        )));
    }
    let (batch, cin, h, wd_) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    let ph = (dilation * (kh - 1) / 2) as isize;
    let pw = (dilation * (kw - 1) / 2) as isize;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![0.0; batch * cout * h * wd_];
    for bi in 0..batch {
        for o in 0..cout {
            for y in 0..h {
                for xx in 0..wd_ {
                    let mut acc = bd[o];
                    for c in 0..cin {
                        for i in 0..kh {
                            for j in 0..kw {
                                let sy = y as isize + (i * dilation) as isize - ph;
                                let sx = xx as isize + (j * dilation) as isize - pw;
                                let xv = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd_ {
                                    xd[((bi * cin + c) * h + sy as usize) * wd_ + sx as usize]
                                } else {
                                    0.0
                                };
                                acc += wd[((o * cin + c) * kh + i) * kw + j] * xv;
                                *macs += 1;
                            }
                        }
                    }
                    out[((bi * cout + o) * h + y) * wd_ + xx] = acc;
                }
            }
        }
    }
    Tensor::new(vec![batch, cout, h, wd_], out)
}

fn map(t: Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let shape = t.shape().to_vec();
    let data = t.into_data().into_iter().map(f).collect();
    Tensor::new(shape, data).expect("same shape")
}

fn norm_eval(x: Tensor, gamma: &Tensor, beta: &Tensor, state: &BatchNormState) -> Tensor {
    let s = x.shape().to_vec();
    let inner: usize = s[2..].iter().product();
    let mut out = x.into_data();
    for b in 0..s[0] {
        for c in 0..s[1] {
            let mean = state.running_mean[c];
            let inv_std = 1.0 / (state.running_var[c] + state.eps).sqrt();
            for v in &mut out[(b * s[1] + c) * inner..][..inner] {
                let h = (*v - mean) * inv_std;
                *v = gamma.data()[c] * h + beta.data()[c];
            }
        }
    }
    Tensor::new(s, out).expect("same shape")
}

fn channel(t: &Tensor, index: usize) -> Tensor {
    let s = t.shape();
    let inner: usize = s[2..].iter().product();
    let mut out = Vec::with_capacity(s[0] * inner);
    for b in 0..s[0] {
        out.extend_from_slice(&t.data()[(b * s[1] + index) * inner..][..inner]);
    }
    let mut shape = vec![s[0]];
    shape.extend_from_slice(&s[2..]);
    Tensor::new(shape, out).expect("channel shape")
}

/// One output channel of a same-length 1D convolution evaluated at a single position.
fn conv1d_at(x: &Tensor, w: &Tensor, b: &Tensor, batch: usize, o: usize, t: usize) -> f64 {
    let (cin, t_len) = (x.shape()[1], x.shape()[2]);
    let k = w.shape()[2];
    let pad = ((k - 1) / 2) as isize;
    let mut acc = b.data()[o];
    for c in 0..cin {
        for j in 0..k {
            let s = t as isize + j as isize - pad;
            let xv = if s >= 0 && (s as usize) < t_len {
                x.data()[(batch * cin + c) * t_len + s as usize]
            } else {
                0.0
            };
            acc += w.data()[(o * cin + c) * k + j] * xv;
        }
    }
    acc
}

/// Per-cell evaluation of the multilevel proposal feature generator.
///
/// `band_params` holds `(start weight, start bias, end weight, end bias)` per band. Each valid
/// cell finds its band, then evaluates both convolutions directly at `s` and `e`.
pub fn mpfg_naive_oracle(
    f_b: &Tensor,
    spec: &BandSpec,
    semantics: MaskSemantics,
    band_params: &[Tensor],
) -> Result<Tensor> {
    let s = f_b.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("f_b must be [B,N,T], got {s:?}")));
    }
    let (batch, n, t) = (s[0], s[1], s[2]);
    spec.validate_for(t)?;
    if band_params.len() != 4 * spec.bands() {
        return Err(Error::invalid("four parameter tensors per band expected"));
    }
    let mut out = vec![0.0; batch * 2 * n * t * t];
    for st in 0..t {
        for en in st..t {
            let band = match semantics {
                MaskSemantics::Duration => spec.band_of_duration(en - st),
                MaskSemantics::Literal => spec.edges.windows(2).position(|w| w[0] <= st && en < w[1]),
            };
            let Some(i) = band else { continue };
            let p = &band_params[4 * i..4 * i + 4];
            for b in 0..batch {
                for c in 0..n {
                    out[((b * 2 * n + c) * t + st) * t + en] = conv1d_at(f_b, &p[0], &p[1], b, c, st);
                    out[((b * 2 * n + n + c) * t + st) * t + en] = conv1d_at(f_b, &p[2], &p[3], b, c, en);
                }
            }
        }
    }
    Tensor::new(vec![batch, 2 * n, t, t], out)
}

/// Scalar-loop inference of the whole model with running normalization statistics.
///
/// Returns the prediction and the multiply-accumulates executed per layer.
pub fn forward_loop(model: &Smbg, x: &Tensor) -> Result<(Prediction, MacCounter)> {
    let cfg = &model.config;
    let p = &model.params.tensors;
    let l = layout(cfg);
    let mut counter = MacCounter::default();
    let mut run = |name: &str, f: &mut dyn FnMut(&mut u64) -> Result<Tensor>| -> Result<Tensor> {
        let mut macs = 0;
        let t = f(&mut macs)?;
        counter.layers.push((name.to_string(), macs));
        Ok(t)
    };

    let b = l.base.start;
    let h = run("base.conv1", &mut |m| conv1d_loop(x, &p[b], &p[b + 1], m))?;
    let h = map(h, |v| v.max(0.0));
    let h = run("base.conv2", &mut |m| conv1d_loop(&h, &p[b + 2], &p[b + 3], m))?;
    let f_b = map(h, |v| v.max(0.0));

    let mut heads = Vec::new();
    for (name, r) in [
        ("start_head", l.start_head.clone()),
        ("end_head", l.end_head.clone()),
    ] {
        let i = r.start;
        let h = run(&format!("{name}.conv1"), &mut |m| {
            conv1d_loop(&f_b, &p[i], &p[i + 1], m)
        })?;
        let h = map(h, |v| v.max(0.0));
        let h = run(&format!("{name}.conv2"), &mut |m| {
            conv1d_loop(&h, &p[i + 2], &p[i + 3], m)
        })?;
        heads.push(channel(&map(h, sigmoid), 0));
    }

    // Band convolutions over the full sequence, then masked assembly (no MACs).
    let t = cfg.temporal_length;
    let (batch, n) = (f_b.shape()[0], f_b.shape()[1]);
    let mut starts = Vec::new();
    let mut ends = Vec::new();
    for band in 0..cfg.bands.bands() {
        let i = l.mpfg.start + 4 * band;
        starts.push(run(&format!("mpfg.band{band}.start"), &mut |m| {
            conv1d_loop(&f_b, &p[i], &p[i + 1], m)
        })?);
        ends.push(run(&format!("mpfg.band{band}.end"), &mut |m| {
            conv1d_loop(&f_b, &p[i + 2], &p[i + 3], m)
        })?);
    }
    let cells = model.cell_band();
    let mut fp = vec![0.0; batch * 2 * n * t * t];
    for bi in 0..batch {
        for c in 0..n {
            for s in 0..t {
                for e in 0..t {
                    if let Some(k) = cells[s * t + e] {
                        fp[((bi * 2 * n + c) * t + s) * t + e] = starts[k].data()[(bi * n + c) * t + s];
                        fp[((bi * 2 * n + n + c) * t + s) * t + e] = ends[k].data()[(bi * n + c) * t + e];
                    }
                }
            }
        }
    }
    let mut h = Tensor::new(vec![batch, 2 * n, t, t], fp)?;

    let sec = l.sec.start;
    let names = ["sec.dilated", "sec.conv1", "sec.conv2"];
    for (layer, name) in names.iter().enumerate() {
        let q = sec + 4 * layer;
        let d = if layer == 0 { cfg.dilation } else { 1 };
        let out = run(name, &mut |m| conv2d_loop(&h, &p[q], &p[q + 1], d, m))?;
        h = norm_eval(
            map(out, |v| v.max(0.0)),
            &p[q + 2],
            &p[q + 3],
            &model.params.norms[layer],
        );
    }
    let out = run("sec.conv3", &mut |m| {
        conv2d_loop(&h, &p[sec + 12], &p[sec + 13], 1, m)
    })?;
    let out = map(out, sigmoid);
    let end = heads.pop().expect("two heads");
    let start = heads.pop().expect("two heads");
    Ok((
        Prediction {
            start,
            end,
            p_c: channel(&out, 0),
            p_r: channel(&out, 1),
        },
        counter,
    ))
}
