//! Raw convolution kernels over flat slices.
//!
//! Forward passes accumulate `bias + Σ_c Σ_taps w · x` per output element in that exact
//! order, which is also the order of the scalar reference loops in `net::reference`.

use super::gemm::{gemm_acc, MatMut, MatRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub len: usize,
    pub kernel: usize,
}

impl Conv1dDims {
    fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub dilation: usize,
}

impl Conv2dDims {
    fn pads(&self) -> (usize, usize) {
        (
            self.dilation * (self.kh - 1) / 2,
            self.dilation * (self.kw - 1) / 2,
        )
    }
}

/// Rows `(c, j)`, columns `t`: `col[(c·k + j), t] = x_pad[c, t + j]`.
fn im2col_1d(x: &[f64], d: &Conv1dDims, col: &mut [f64]) {
    let (t_len, k, pad) = (d.len, d.kernel, d.pad() as isize);
    for c in 0..d.cin {
        let src = &x[c * t_len..(c + 1) * t_len];
        for j in 0..k {
            let row = &mut col[(c * k + j) * t_len..(c * k + j + 1) * t_len];
            let shift = j as isize - pad;
            for (t, v) in row.iter_mut().enumerate() {
                let s = t as isize + shift;
                *v = if s >= 0 && (s as usize) < t_len {
                    src[s as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

fn col2im_1d(col: &[f64], d: &Conv1dDims, gx: &mut [f64]) {
    let (t_len, k, pad) = (d.len, d.kernel, d.pad() as isize);
    for c in 0..d.cin {
        let dst = &mut gx[c * t_len..(c + 1) * t_len];
        for j in 0..k {
            let row = &col[(c * k + j) * t_len..(c * k + j + 1) * t_len];
            let shift = j as isize - pad;
            for (t, v) in row.iter().enumerate() {
                let s = t as isize + shift;
                if s >= 0 && (s as usize) < t_len {
                    dst[s as usize] += v;
                }
            }
        }
    }
}

pub fn conv1d_forward(x: &[f64], w: &[f64], bias: &[f64], d: &Conv1dDims) -> Vec<f64> {
    let (t_len, kk) = (d.len, d.cin * d.kernel);
    let mut out = vec![0.0; d.batch * d.cout * t_len];
    let mut col = if d.kernel == 1 {
        Vec::new()
    } else {
        vec![0.0; kk * t_len]
    };
    for b in 0..d.batch {
        let xb = &x[b * d.cin * t_len..(b + 1) * d.cin * t_len];
        let ob = &mut out[b * d.cout * t_len..(b + 1) * d.cout * t_len];
        for (o, row) in ob.chunks_exact_mut(t_len).enumerate() {
            row.fill(bias[o]);
        }
        let cols: &[f64] = if d.kernel == 1 {
            xb
        } else {
            im2col_1d(xb, d, &mut col);
            &col
        };
        gemm_acc(
            d.cout,
            t_len,
            kk,
            MatRef::row_major(w, kk),
            MatRef::row_major(cols, t_len),
            &mut MatMut::row_major(ob, t_len),
        );
    }
    out
}

/// Adjoints of [`conv1d_forward`] for input, weight and bias.
pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    d: &Conv1dDims,
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (t_len, kk) = (d.len, d.cin * d.kernel);
    let mut gw = vec![0.0; d.cout * kk];
    let mut gb = vec![0.0; d.cout];
    let mut gx = need_input.then(|| vec![0.0; x.len()]);
    let mut col = vec![0.0; kk * t_len];
    let mut gcol = vec![0.0; kk * t_len];
    for b in 0..d.batch {
        let xb = &x[b * d.cin * t_len..(b + 1) * d.cin * t_len];
        let gb_out = &grad_out[b * d.cout * t_len..(b + 1) * d.cout * t_len];
        for (o, row) in gb_out.chunks_exact(t_len).enumerate() {
            gb[o] += row.iter().sum::<f64>();
        }
        let cols: &[f64] = if d.kernel == 1 {
            xb
        } else {
            im2col_1d(xb, d, &mut col);
            &col
        };
        gemm_acc(
            d.cout,
            kk,
            t_len,
            MatRef::row_major(gb_out, t_len),
            MatRef::row_major(cols, t_len).t(),
            &mut MatMut::row_major(&mut gw, kk),
        );
        if let Some(gx) = gx.as_mut() {
            let gxb = &mut gx[b * d.cin * t_len..(b + 1) * d.cin * t_len];
            if d.kernel == 1 {
                gemm_acc(
                    kk,
                    t_len,
                    d.cout,
                    MatRef::row_major(w, kk).t(),
                    MatRef::row_major(gb_out, t_len),
                    &mut MatMut::row_major(gxb, t_len),
                );
            } else {
                gcol.fill(0.0);
                gemm_acc(
                    kk,
                    t_len,
                    d.cout,
                    MatRef::row_major(w, kk).t(),
                    MatRef::row_major(gb_out, t_len),
                    &mut MatMut::row_major(&mut gcol, t_len),
                );
                col2im_1d(&gcol, d, gxb);
            }
        }
    }
    (gx, gw, gb)
}

/// Rows `(c, i, j)`, columns `(y, x)`.
fn im2col_2d(x: &[f64], d: &Conv2dDims, col: &mut [f64]) {
    let (h, w) = (d.height, d.width);
    let (ph, pw) = d.pads();
    let hw = h * w;
    let mut row_idx = 0;
    for c in 0..d.cin {
        let src = &x[c * hw..(c + 1) * hw];
        for i in 0..d.kh {
            let dy = (i * d.dilation) as isize - ph as isize;
            for j in 0..d.kw {
                let dx = (j * d.dilation) as isize - pw as isize;
                let row = &mut col[row_idx * hw..(row_idx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out_row = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src_row = &src[sy as usize * w..(sy as usize + 1) * w];
                    for (xx, v) in out_row.iter_mut().enumerate() {
                        let sx = xx as isize + dx;
                        *v = if sx >= 0 && sx < w as isize {
                            src_row[sx as usize]
                        } else {
                            0.0
                        };
                    }
                }
                row_idx += 1;
            }
        }
    }
}

fn col2im_2d(col: &[f64], d: &Conv2dDims, gx: &mut [f64]) {
    let (h, w) = (d.height, d.width);
    let (ph, pw) = d.pads();
    let hw = h * w;
    let mut row_idx = 0;
    for c in 0..d.cin {
        let dst = &mut gx[c * hw..(c + 1) * hw];
        for i in 0..d.kh {
            let dy = (i * d.dilation) as isize - ph as isize;
            for j in 0..d.kw {
                let dx = (j * d.dilation) as isize - pw as isize;
                let row = &col[row_idx * hw..(row_idx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                    for (xx, v) in row[y * w..(y + 1) * w].iter().enumerate() {
                        let sx = xx as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            dst_row[sx as usize] += v;
                        }
                    }
                }
                row_idx += 1;
            }
        }
    }
}

fn is_pointwise(d: &Conv2dDims) -> bool {
    d.kh == 1 && d.kw == 1
}

pub fn conv2d_forward(x: &[f64], w: &[f64], bias: &[f64], d: &Conv2dDims) -> Vec<f64> {
    let hw = d.height * d.width;
    let kk = d.cin * d.kh * d.kw;
    let mut out = vec![0.0; d.batch * d.cout * hw];
    let mut col = if is_pointwise(d) {
        Vec::new()
    } else {
        vec![0.0; kk * hw]
    };
    for b in 0..d.batch {
        let xb = &x[b * d.cin * hw..(b + 1) * d.cin * hw];
        let ob = &mut out[b * d.cout * hw..(b + 1) * d.cout * hw];
        for (o, row) in ob.chunks_exact_mut(hw).enumerate() {
            row.fill(bias[o]);
        }
        let cols: &[f64] = if is_pointwise(d) {
            xb
        } else {
            im2col_2d(xb, d, &mut col);
            &col
        };
        gemm_acc(
            d.cout,
            hw,
            kk,
            MatRef::row_major(w, kk),
            MatRef::row_major(cols, hw),
            &mut MatMut::row_major(ob, hw),
        );
    }
    out
}

pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    d: &Conv2dDims,
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let hw = d.height * d.width;
    let kk = d.cin * d.kh * d.kw;
    let mut gw = vec![0.0; d.cout * kk];
    let mut gb = vec![0.0; d.cout];
    let mut gx = need_input.then(|| vec![0.0; x.len()]);
    let pointwise = is_pointwise(d);
    let mut col = if pointwise { Vec::new() } else { vec![0.0; kk * hw] };
    let mut gcol = if pointwise || !need_input {
        Vec::new()
    } else {
        vec![0.0; kk * hw]
    };
    for b in 0..d.batch {
        let xb = &x[b * d.cin * hw..(b + 1) * d.cin * hw];
        let gob = &grad_out[b * d.cout * hw..(b + 1) * d.cout * hw];
        for (o, row) in gob.chunks_exact(hw).enumerate() {
            gb[o] += row.iter().sum::<f64>();
        }
        let cols: &[f64] = if pointwise {
            xb
        } else {
            im2col_2d(xb, d, &mut col);
            &col
        };
        gemm_acc(
            d.cout,
            kk,
            hw,
            MatRef::row_major(gob, hw),
            MatRef::row_major(cols, hw).t(),
            &mut MatMut::row_major(&mut gw, kk),
        );
        if let Some(gx) = gx.as_mut() {
            let gxb = &mut gx[b * d.cin * hw..(b + 1) * d.cin * hw];
            if pointwise {
                gemm_acc(
                    kk,
                    hw,
                    d.cout,
                    MatRef::row_major(w, kk).t(),
                    MatRef::row_major(gob, hw),
                    &mut MatMut::row_major(gxb, hw),
                );
            } else {
                gcol.fill(0.0);
                gemm_acc(
                    kk,
                    hw,
                    d.cout,
                    MatRef::row_major(w, kk).t(),
                    MatRef::row_major(gob, hw),
                    &mut MatMut::row_major(&mut gcol, hw),
                );
                col2im_2d(&gcol, d, gxb);
            }
        }
    }
    (gx, gw, gb)
}
