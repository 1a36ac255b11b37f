use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smbg::losses::{smbg_loss, LossConfig};
use smbg::net::{cell_bands, forward, BandSpec, MaskSemantics, ModelParams};
use smbg::tensor::{BatchNormState, GradCheck, GradCheckReport, Graph, MapAxis, NormMode, Tensor, Var};
use smbg::Result;

pub const TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reduces `y` to a scalar through fixed random coefficients.
pub fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(Tensor::randn(&shape, &mut rng(seed)));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

pub fn rel_error<F>(f: F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    GradCheck::default().run(f, inputs).unwrap().max_rel_error
}

/// Values kept away from the ReLU kink.
pub fn off_kink(shape: &[usize], seed: u64) -> Tensor {
    let mut t = Tensor::randn(shape, &mut rng(seed));
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1_f64.copysign(*v);
        }
    }
    t
}

/// Worst relative error of every differentiable graph op on inputs drawn from `seed`,
/// with sequence ops at length 16.
pub fn op_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let t = 16;
    let mut r = rng(seed);
    let mut out = Vec::new();

    let conv1d_in = [
        Tensor::randn(&[2, 3, t], &mut r),
        Tensor::randn(&[2, 3, 5], &mut r),
        Tensor::randn(&[2], &mut r),
    ];
    out.push((
        "conv1d",
        rel_error(
            |g, v| {
                let y = g.conv1d(v[0], v[1], v[2])?;
                project(g, y, seed)
            },
            &conv1d_in,
        ),
    ));

    let conv2d_in = [
        Tensor::randn(&[1, 2, 8, 8], &mut r),
        Tensor::randn(&[2, 2, 3, 3], &mut r),
        Tensor::randn(&[2], &mut r),
    ];
    out.push((
        "conv2d_dilated",
        rel_error(
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 2)?;
                project(g, y, seed)
            },
            &conv2d_in,
        ),
    ));

    let a = off_kink(&[2, 3, t], seed + 1);
    let b = Tensor::randn(&[2, 3, t], &mut r);
    let c = Tensor::randn(&[t], &mut r);
    let (a, b) = (&a, &b);
    out.push((
        "relu",
        rel_error(
            |g, v| {
                let y = g.relu(v[0]);
                project(g, y, seed)
            },
            std::slice::from_ref(a),
        ),
    ));
    out.push((
        "sigmoid",
        rel_error(
            |g, v| {
                let y = g.sigmoid(v[0]);
                project(g, y, seed)
            },
            std::slice::from_ref(a),
        ),
    ));
    out.push((
        "square",
        rel_error(
            |g, v| {
                let y = g.square(v[0]);
                project(g, y, seed)
            },
            std::slice::from_ref(a),
        ),
    ));
    out.push((
        "scale",
        rel_error(
            |g, v| {
                let y = g.scale(v[0], -1.5);
                project(g, y, seed)
            },
            std::slice::from_ref(a),
        ),
    ));
    out.push((
        "add",
        rel_error(
            |g, v| {
                let y = g.add(v[0], v[1])?;
                let y = g.square(y);
                project(g, y, seed)
            },
            &[a.clone(), c.clone()],
        ),
    ));
    out.push((
        "sub",
        rel_error(
            |g, v| {
                let y = g.sub(v[0], v[1])?;
                let y = g.square(y);
                project(g, y, seed)
            },
            &[a.clone(), b.clone()],
        ),
    ));
    out.push((
        "mul",
        rel_error(
            |g, v| {
                let y = g.mul(v[0], v[1])?;
                project(g, y, seed)
            },
            &[a.clone(), c.clone()],
        ),
    ));
    out.push((
        "reshape",
        rel_error(
            |g, v| {
                let y = g.reshape(v[0], &[6 * t])?;
                let y = g.square(y);
                project(g, y, seed)
            },
            std::slice::from_ref(a),
        ),
    ));
    out.push((
        "sum",
        rel_error(
            |g, v| {
                let y = g.square(v[0]);
                Ok(g.sum(y))
            },
            std::slice::from_ref(a),
        ),
    ));
    out.push((
        "mean",
        rel_error(
            |g, v| {
                let y = g.square(v[0]);
                Ok(g.mean(y))
            },
            std::slice::from_ref(a),
        ),
    ));

    let s = Tensor::randn(&[1, 2, t], &mut r);
    for (name, axis) in [("repeat_start", MapAxis::Start), ("repeat_end", MapAxis::End)] {
        out.push((
            name,
            rel_error(
                |g, v| {
                    let m = g.repeat_to_map(v[0], axis)?;
                    project(g, m, seed)
                },
                std::slice::from_ref(&s),
            ),
        ));
    }
    out.push((
        "concat_channels",
        rel_error(
            |g, v| {
                let m = g.concat_channels(&[v[0], v[1]])?;
                project(g, m, seed)
            },
            &[a.clone(), b.clone()],
        ),
    ));
    out.push((
        "select_channel",
        rel_error(
            |g, v| {
                let m = g.select_channel(v[0], 1)?;
                project(g, m, seed)
            },
            std::slice::from_ref(a),
        ),
    ));

    let spec = BandSpec::new(vec![0, 4, 8, t], vec![3, 5, 7]).unwrap();
    let cells = Arc::new(cell_bands(t, &spec, MaskSemantics::Duration).unwrap());
    let parts: Vec<Tensor> = (0..2 * spec.bands())
        .map(|_| Tensor::randn(&[1, 2, t], &mut r))
        .collect();
    let nb = spec.bands();
    out.push((
        "band_assemble",
        rel_error(
            |g, v| {
                let m = g.band_assemble(&v[..nb], &v[nb..], cells.clone())?;
                project(g, m, seed)
            },
            &parts,
        ),
    ));

    let bn_in = [
        Tensor::randn(&[2, 3, t], &mut r),
        Tensor::randn(&[3], &mut r),
        Tensor::randn(&[3], &mut r),
    ];
    for (name, mode) in [
        ("batch_norm_train", NormMode::Train),
        ("batch_norm_eval", NormMode::Eval),
    ] {
        out.push((
            name,
            rel_error(
                |g, v| {
                    let mut state = BatchNormState::new(3);
                    state.running_mean = vec![0.3; 3];
                    state.running_var = vec![1.7; 3];
                    let y = g.batch_norm(v[0], v[1], v[2], &mut state, mode)?;
                    project(g, y, seed)
                },
                &bn_in,
            ),
        ));
    }

    let n = t;
    let p = Tensor::from_vec((0..n).map(|_| r.gen_range(0.05..0.95)).collect());
    let pos: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..2.0)).collect();
    let neg: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..2.0)).collect();
    let target: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
    out.push((
        "weighted_log_loss",
        rel_error(
            |g, v| g.weighted_log_loss(v[0], pos.clone(), neg.clone()),
            std::slice::from_ref(&p),
        ),
    ));
    out.push((
        "weighted_sq_error",
        rel_error(
            |g, v| g.weighted_sq_error(v[0], target.clone(), pos.clone()),
            &[p],
        ),
    ));
    out
}

/// Gradient check of the full training loss through the whole model at `T = 16`.
pub fn full_loss(seed: u64) -> GradCheckReport {
    let t = 16;
    let cfg = super::tiny_config(t);
    let mut params = ModelParams::init(&cfg, seed);
    // Zero biases leave many ReLU inputs exactly at 0, where no difference quotient exists.
    let mut r = rng(seed + 1000);
    for (name, t) in params.names.iter().zip(params.tensors.iter_mut()) {
        if name.ends_with("bias") || name.ends_with("beta") {
            for v in t.data_mut() {
                *v = r.gen_range(-0.1..0.1);
            }
        }
    }
    let (x, targets) = super::toy_batch(seed, 2, cfg.input_channels, t);
    let cells = Arc::new(cell_bands(t, &cfg.bands, cfg.mask_semantics).unwrap());
    let loss_cfg = LossConfig::default();
    let mut inputs = vec![x];
    inputs.extend(params.tensors.iter().cloned());
    let f = |g: &mut Graph, v: &[Var]| -> Result<Var> {
        let mut norms = params.norms.clone();
        let out = forward(g, &cfg, cells.clone(), &v[1..], &mut norms, v[0], NormMode::Train)?;
        Ok(smbg_loss(g, &out, &targets, &loss_cfg)?.0.total)
    };
    GradCheck::default().run(f, &inputs).unwrap()
}
