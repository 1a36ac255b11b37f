use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Duration bands of the multilevel proposal feature generator and their kernel sizes.
///
/// `edges = [0, l_1, ..., T]`; band `i` covers durations `[edges[i], edges[i+1])`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandSpec {
    pub edges: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
}

/// How a confidence-map cell is assigned to a band.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSemantics {
    /// `edges[i] <= e - s < edges[i+1]`; partitions the upper triangle exactly.
    #[default]
    Duration,
    /// `edges[i] <= s <= e < edges[i+1]`; cells spanning two bands stay unassigned.
    Literal,
}

impl BandSpec {
    pub fn new(edges: Vec<usize>, kernel_sizes: Vec<usize>) -> Result<Self> {
        let spec = Self { edges, kernel_sizes };
        spec.check_shape()?;
        Ok(spec)
    }

    /// Four bands with edges `{0, 17, 33, 57, 100}` and kernels `{17, 33, 57, 99}`.
    pub fn standard() -> Self {
        Self {
            edges: vec![0, 17, 33, 57, 100],
            kernel_sizes: vec![17, 33, 57, 99],
        }
    }

    /// Bands whose interior edges equal all but the last kernel size, closed at `t`.
    ///
    /// Reproduces the standard layout for `{17, 33, 57, 99}` at `t = 100`; a single kernel
    /// yields one band covering every duration.
    pub fn from_kernels(kernel_sizes: &[usize], t: usize) -> Result<Self> {
        if kernel_sizes.is_empty() {
            return Err(Error::invalid("at least one kernel size is required"));
        }
        let mut edges = vec![0];
        edges.extend_from_slice(&kernel_sizes[..kernel_sizes.len() - 1]);
        edges.push(t);
        let spec = Self::new(edges, kernel_sizes.to_vec())?;
        spec.validate_for(t)?;
        Ok(spec)
    }

    /// Same kernels with the final edge moved to `t`.
    pub fn with_length(&self, t: usize) -> Result<Self> {
        let mut edges = self.edges.clone();
        *edges.last_mut().expect("non-empty edges") = t;
        let spec = Self::new(edges, self.kernel_sizes.clone())?;
        spec.validate_for(t)?;
        Ok(spec)
    }

    fn check_shape(&self) -> Result<()> {
        if self.edges.len() < 2 {
            return Err(Error::invalid("band edges need at least [0, T]"));
        }
        if self.edges[0] != 0 {
            return Err(Error::invalid(format!(
                "first band edge must be 0, got {}",
                self.edges[0]
            )));
        }
        if self.edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "band edges must be strictly ascending: {:?}",
                self.edges
            )));
        }
        if self.kernel_sizes.len() != self.bands() {
            return Err(Error::invalid(format!(
                "{} kernel sizes for {} bands",
                self.kernel_sizes.len(),
                self.bands()
            )));
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k == 0 || k % 2 == 0) {
            return Err(Error::invalid(format!(
                "kernel sizes must be odd and positive, got {k}"
            )));
        }
        Ok(())
    }

    /// Checks the spec closes exactly at `t`, so that no valid cell is left unmasked.
    pub fn validate_for(&self, t: usize) -> Result<()> {
        self.check_shape()?;
        let last = *self.edges.last().expect("checked");
        if last != t {
            return Err(Error::invalid(format!(
                "band edges end at {last} but the map length is {t}"
            )));
        }
        Ok(())
    }

    pub fn bands(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn max_kernel(&self) -> usize {
        self.kernel_sizes.iter().copied().max().unwrap_or(1)
    }

    /// Band index serving proposals of duration `e - s`.
    pub fn band_of_duration(&self, duration: usize) -> Option<usize> {
        self.edges
            .windows(2)
            .position(|w| w[0] <= duration && duration < w[1])
    }

    fn band_of_cell(&self, s: usize, e: usize, semantics: MaskSemantics) -> Option<usize> {
        if e < s {
            return None;
        }
        match semantics {
            MaskSemantics::Duration => self.band_of_duration(e - s),
            MaskSemantics::Literal => self.edges.windows(2).position(|w| w[0] <= s && e < w[1]),
        }
    }
}

/// Binary `T × T` region weight of one band, row-major over `(start, end)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BandMask {
    t: usize,
    values: Vec<u8>,
}

impl BandMask {
    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn get(&self, s: usize, e: usize) -> u8 {
        self.values[s * self.t + e]
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Band index per cell, row-major over `(start, end)`; `None` below the diagonal.
pub fn cell_bands(t: usize, spec: &BandSpec, semantics: MaskSemantics) -> Result<Vec<Option<usize>>> {
    spec.validate_for(t)?;
    let mut out = vec![None; t * t];
    for s in 0..t {
        for e in s..t {
            out[s * t + e] = spec.band_of_cell(s, e, semantics);
        }
    }
    Ok(out)
}

pub fn build_masks(t: usize, spec: &BandSpec, semantics: MaskSemantics) -> Result<Vec<BandMask>> {
    let cells = cell_bands(t, spec, semantics)?;
    Ok((0..spec.bands())
        .map(|i| BandMask {
            t,
            values: cells.iter().map(|&c| u8::from(c == Some(i))).collect(),
        })
        .collect())
}
