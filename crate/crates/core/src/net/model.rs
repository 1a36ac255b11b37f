use std::sync::Arc;

use super::bands::cell_bands;
use super::params::{layout, ModelParams};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{BatchNormState, Graph, NormMode, Tensor, Var};

/// Graph handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    pub f_b: Var,
    /// `[B, T]`
    pub start: Var,
    /// `[B, T]`
    pub end: Var,
    pub f_p: Var,
    /// `[B, T, T]`
    pub p_c: Var,
    /// `[B, T, T]`
    pub p_r: Var,
}

/// Detached network outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub start: Tensor,
    pub end: Tensor,
    pub p_c: Tensor,
    pub p_r: Tensor,
}

/// Two same-length convolutions (kernel 3) with ReLU: `[B, N0, T] → [B, N, T]`.
pub fn base_module(g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
    let h = g.conv1d(x, p[0], p[1])?;
    let h = g.relu(h);
    let h = g.conv1d(h, p[2], p[3])?;
    Ok(g.relu(h))
}

fn boundary_branch(g: &mut Graph, p: &[Var], f_b: Var) -> Result<Var> {
    let h = g.conv1d(f_b, p[0], p[1])?;
    let h = g.relu(h);
    let h = g.conv1d(h, p[2], p[3])?;
    let h = g.sigmoid(h);
    g.select_channel(h, 0)
}

/// Start and end probabilities per temporal location, each `[B, T]`.
pub fn boundary_head(g: &mut Graph, start: &[Var], end: &[Var], f_b: Var) -> Result<(Var, Var)> {
    Ok((boundary_branch(g, start, f_b)?, boundary_branch(g, end, f_b)?))
}

/// Multilevel proposal feature generation: `[B, N, T] → [B, 2N, T, T]`.
///
/// `p` holds `(start weight, start bias, end weight, end bias)` per band.
pub fn mpfg_forward(g: &mut Graph, p: &[Var], f_b: Var, cell_band: Arc<Vec<Option<usize>>>) -> Result<Var> {
    if !p.len().is_multiple_of(4) || p.is_empty() {
        return Err(Error::invalid("mpfg expects four parameters per band"));
    }
    let mut starts = Vec::with_capacity(p.len() / 4);
    let mut ends = Vec::with_capacity(p.len() / 4);
    for band in p.chunks_exact(4) {
        starts.push(g.conv1d(f_b, band[0], band[1])?);
        ends.push(g.conv1d(f_b, band[2], band[3])?);
    }
    g.band_assemble(&starts, &ends, cell_band)
}

/// Sparse extraction confidence head: `[B, 2N, T, T] → (P_c, P_r)`, each `[B, T, T]`.
pub fn sec_head(
    g: &mut Graph,
    p: &[Var],
    f_p: Var,
    dilation: usize,
    norms: &mut [BatchNormState],
    mode: NormMode,
) -> Result<(Var, Var)> {
    if norms.len() != 3 {
        return Err(Error::invalid("confidence head needs three norm states"));
    }
    let mut h = f_p;
    for (layer, state) in norms.iter_mut().enumerate() {
        let q = &p[layer * 4..layer * 4 + 4];
        let d = if layer == 0 { dilation } else { 1 };
        h = g.conv2d(h, q[0], q[1], d)?;
        h = g.relu(h);
        h = g.batch_norm(h, q[2], q[3], state, mode)?;
    }
    let out = g.conv2d(h, p[12], p[13], 1)?;
    let out = g.sigmoid(out);
    Ok((g.select_channel(out, 0)?, g.select_channel(out, 1)?))
}

/// Full forward pass over declaration-ordered parameter handles.
pub fn forward(
    g: &mut Graph,
    cfg: &ModelConfig,
    cell_band: Arc<Vec<Option<usize>>>,
    params: &[Var],
    norms: &mut [BatchNormState],
    x: Var,
    mode: NormMode,
) -> Result<Outputs> {
    let xs = g.shape(x);
    if xs.len() != 3 || xs[1] != cfg.input_channels || xs[2] != cfg.temporal_length {
        return Err(Error::shape(format!(
            "model expects input [B, {}, {}], got {xs:?}",
            cfg.input_channels, cfg.temporal_length
        )));
    }
    let l = layout(cfg);
    let f_b = base_module(g, &params[l.base], x)?;
    let (start, end) = boundary_head(g, &params[l.start_head], &params[l.end_head], f_b)?;
    let f_p = mpfg_forward(g, &params[l.mpfg], f_b, cell_band)?;
    let (p_c, p_r) = sec_head(g, &params[l.sec], f_p, cfg.dilation, norms, mode)?;
    Ok(Outputs {
        f_b,
        start,
        end,
        f_p,
        p_c,
        p_r,
    })
}

/// Configuration, parameters and the precomputed band assignment of one model.
#[derive(Clone, Debug)]
pub struct Smbg {
    pub config: ModelConfig,
    pub params: ModelParams,
    cell_band: Arc<Vec<Option<usize>>>,
}

impl Smbg {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, seed);
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check(&config)?;
        let cells = cell_bands(config.temporal_length, &config.bands, config.mask_semantics)?;
        Ok(Self {
            config,
            params,
            cell_band: Arc::new(cells),
        })
    }

    pub fn cell_band(&self) -> Arc<Vec<Option<usize>>> {
        self.cell_band.clone()
    }

    /// Adds every parameter to `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .tensors
            .iter()
            .map(|t| g.leaf(t.clone(), trainable))
            .collect()
    }

    /// Forward pass that may update normalization statistics.
    pub fn forward(&mut self, g: &mut Graph, params: &[Var], x: Var, mode: NormMode) -> Result<Outputs> {
        let cells = self.cell_band.clone();
        forward(g, &self.config, cells, params, &mut self.params.norms, x, mode)
    }

    /// Inference with running normalization statistics.
    pub fn predict(&self, features: &Tensor) -> Result<Prediction> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let x = g.constant(features.clone());
        let mut norms = self.params.norms.clone();
        let out = forward(
            &mut g,
            &self.config,
            self.cell_band.clone(),
            &params,
            &mut norms,
            x,
            NormMode::Eval,
        )?;
        Ok(Prediction {
            start: g.value(out.start).clone(),
            end: g.value(out.end).clone(),
            p_c: g.value(out.p_c).clone(),
            p_r: g.value(out.p_r).clone(),
        })
    }
}
