//! Feature sequences: file formats, temporal rescaling and sliding windows.

use std::collections::BTreeMap;
use std::path::Path;

use crate::container::{write_file, Container};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Video id → features `[channels, T_raw]`.
pub type FeatureStore = BTreeMap<String, Tensor>;

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn check_matrix(t: &Tensor, path: &Path, name: &str) -> Result<()> {
    if t.ndim() != 2 || t.numel() == 0 {
        return Err(Error::parse(
            path,
            format!(
                "array {name} must be a non-empty [channels, T] matrix, got {:?}",
                t.shape()
            ),
        ));
    }
    if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
        let cols = t.shape()[1];
        return Err(Error::parse(
            path,
            format!(
                "array {name}: non-finite value at channel {}, step {}",
                i / cols,
                i % cols
            ),
        ));
    }
    Ok(())
}

/// Parses a CSV with one row per time step and one column per channel; the first row may be a
/// header. Rows and columns in messages are 1-based.
pub fn parse_csv(text: &str, path: &Path) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1)))?;
        let parsed: Vec<std::result::Result<f64, _>> = record.iter().map(str::parse::<f64>).collect();
        if i == 0 && parsed.iter().all(|p| p.is_err()) {
            continue;
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (j, p) in parsed.into_iter().enumerate() {
            let v = p.map_err(|_| {
                Error::parse(
                    path,
                    format!("row {}, column {}: not a number: {:?}", i + 1, j + 1, &record[j]),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    format!("row {}, column {}: non-finite value {v}", i + 1, j + 1),
                ));
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::parse(
                    path,
                    format!("row {}: {} columns, expected {}", i + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::parse(path, "no feature rows"));
    }
    let (t, c) = (rows.len(), rows[0].len());
    let mut data = vec![0.0; c * t];
    for (ti, row) in rows.iter().enumerate() {
        for (ci, &v) in row.iter().enumerate() {
            data[ci * t + ti] = v;
        }
    }
    Tensor::new(vec![c, t], data)
}

pub fn to_csv(features: &Tensor) -> String {
    let (c, t) = (features.shape()[0], features.shape()[1]);
    let d = features.data();
    let mut s = String::new();
    for ti in 0..t {
        for ci in 0..c {
            if ci > 0 {
                s.push(',');
            }
            s.push_str(&d[ci * t + ti].to_string());
        }
        s.push('\n');
    }
    s
}

/// Reads one video's features, `[channels, T_raw]`, from CSV or a container holding one array.
pub fn load_features(path: &Path) -> Result<Tensor> {
    if is_csv(path) {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return parse_csv(&text, path);
    }
    let c = Container::load(path)?;
    let (name, t) = match c.arrays.as_slice() {
        [(name, t)] => (name, t),
        _ => {
            let t = c.get("features").ok_or_else(|| {
                Error::parse(
                    path,
                    format!(
                        "expected one array or one named features, found {}",
                        c.arrays.len()
                    ),
                )
            })?;
            return check_matrix(t, path, "features").map(|_| t.clone());
        }
    };
    check_matrix(t, path, name)?;
    Ok(t.clone())
}

pub fn save_features(path: &Path, features: &Tensor) -> Result<()> {
    if features.ndim() != 2 {
        return Err(Error::shape(format!(
            "features must be [channels, T], got {:?}",
            features.shape()
        )));
    }
    if is_csv(path) {
        return write_file(path, to_csv(features).as_bytes());
    }
    let mut c = Container::new(serde_json::json!({ "kind": "features" }));
    c.push("features", features.clone());
    c.save(path)
}

/// Loads a whole dataset: a container with one array per video, or a directory of per-video
/// files named `<video id>.<ext>`.
pub fn load_feature_store(path: &Path) -> Result<FeatureStore> {
    let mut store = FeatureStore::new();
    if path.is_dir() {
        let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        for entry in entries {
            let p = entry.map_err(|e| Error::io(path, e))?.path();
            if !p.is_file() {
                continue;
            }
            let Some(id) = p.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            store.insert(id.to_string(), load_features(&p)?);
        }
        return Ok(store);
    }
    let c = Container::load(path)?;
    for (name, t) in c.arrays {
        check_matrix(&t, path, &name)?;
        store.insert(name, t);
    }
    Ok(store)
}

pub fn save_feature_store(path: &Path, store: &FeatureStore) -> Result<()> {
    let mut c = Container::new(serde_json::json!({ "kind": "feature_store", "videos": store.len() }));
    for (id, t) in store {
        c.push(id.clone(), t.clone());
    }
    c.save(path)
}

/// Resamples every channel at `len` evenly spaced points over `[0, T_raw - 1]`.
pub fn rescale_linear(features: &Tensor, len: usize) -> Result<Tensor> {
    if features.ndim() != 2 {
        return Err(Error::shape(format!(
            "features must be [channels, T], got {:?}",
            features.shape()
        )));
    }
    let (c, t_raw) = (features.shape()[0], features.shape()[1]);
    if t_raw < 2 {
        return Err(Error::invalid(format!(
            "rescaling needs at least 2 time steps, got {t_raw}"
        )));
    }
    if len == 0 {
        return Err(Error::invalid("target length must be positive"));
    }
    let d = features.data();
    let mut out = vec![0.0; c * len];
    for i in 0..len {
        let pos = if len == 1 {
            0.0
        } else {
            (i * (t_raw - 1)) as f64 / (len - 1) as f64
        };
        let i0 = (pos.floor() as usize).min(t_raw - 1);
        let frac = pos - i0 as f64;
        let i1 = (i0 + 1).min(t_raw - 1);
        for ch in 0..c {
            let (a, b) = (d[ch * t_raw + i0], d[ch * t_raw + i1]);
            out[ch * len + i] = if frac == 0.0 { a } else { a + frac * (b - a) };
        }
    }
    Tensor::new(vec![c, len], out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// `[channels, L]`, zero-padded past `valid`.
    pub features: Tensor,
    pub offset: usize,
    pub valid: usize,
}

pub fn window_offsets(t_raw: usize, len: usize, overlap: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid(format!(
            "overlap must lie in [0, 1), got {overlap}"
        )));
    }
    if len == 0 {
        return Err(Error::invalid("window length must be positive"));
    }
    if t_raw <= len {
        return Ok(vec![0]);
    }
    let stride = ((len as f64 * (1.0 - overlap)).floor() as usize).max(1);
    let mut offsets: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|&o| o + len < t_raw)
        .collect();
    offsets.push(t_raw - len);
    offsets.dedup();
    Ok(offsets)
}

/// Windows of length `len` at stride `len·(1 - overlap)`; the last one is right-aligned.
pub fn sliding_windows(features: &Tensor, len: usize, overlap: f64) -> Result<Vec<Window>> {
    if features.ndim() != 2 {
        return Err(Error::shape(format!(
            "features must be [channels, T], got {:?}",
            features.shape()
        )));
    }
    let (c, t_raw) = (features.shape()[0], features.shape()[1]);
    let d = features.data();
    window_offsets(t_raw, len, overlap)?
        .into_iter()
        .map(|offset| {
            let valid = len.min(t_raw - offset);
            let mut w = vec![0.0; c * len];
            for ch in 0..c {
                w[ch * len..ch * len + valid].copy_from_slice(&d[ch * t_raw + offset..][..valid]);
            }
            Ok(Window {
                features: Tensor::new(vec![c, len], w)?,
                offset,
                valid,
            })
        })
        .collect()
}
