//! Binary model files.
//!
//! Layout: the magic bytes `NGM\0`, a little-endian `u32` format version,
//! then one model block, then the binned variant's block when the header
//! says there is one. A block is a `u64` header length, the JSON header
//! (schema, masks, layer shapes, traces, config) and every layer's weight
//! (row-major) followed by its bias as little-endian `f64`.
//!
//! [`save_model`] also writes a readable `<file>.json` sidecar.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::FeatureSchema;
use crate::error::{NgmError, Result};
use crate::graph::DependencyMask;
use crate::learning::{FinalLosses, InputLayout, NgmModel, Segment, TrainConfig, TrainHistory};
use crate::numerics::{Activation, Layer, MlpParams};

pub const MAGIC: [u8; 4] = *b"NGM\0";
pub const FORMAT_VERSION: u32 = 1;

// headers larger than this are rejected rather than allocated
const MAX_HEADER: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct LayerShape {
    rows: usize,
    cols: usize,
    activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    schema: FeatureSchema,
    feature_mask: DependencyMask,
    mask: DependencyMask,
    layout: InputLayout,
    segments: Vec<Segment>,
    lambda_traces: Vec<Vec<f64>>,
    history: TrainHistory,
    losses: FinalLosses,
    residual_std: Vec<f64>,
    config: TrainConfig,
    layers: Vec<LayerShape>,
    has_binned: bool,
}

fn write_block<W: Write>(model: &NgmModel, w: &mut W) -> std::io::Result<()> {
    let header = Header {
        schema: model.schema.clone(),
        feature_mask: model.feature_mask.clone(),
        mask: model.mask.clone(),
        layout: model.layout,
        segments: model.segments.clone(),
        lambda_traces: model.lambda_traces.clone(),
        history: model.history.clone(),
        losses: model.losses,
        residual_std: model.residual_std.clone(),
        config: model.config.clone(),
        layers: model
            .params
            .layers()
            .iter()
            .map(|l| LayerShape {
                rows: l.out_dim(),
                cols: l.in_dim(),
                activation: l.activation,
            })
            .collect(),
        has_binned: model.binned.is_some(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for l in model.params.layers() {
        for r in 0..l.out_dim() {
            for c in 0..l.in_dim() {
                w.write_all(&l.weight[(r, c)].to_le_bytes())?;
            }
        }
        for b in l.bias.iter() {
            w.write_all(&b.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Serializes `model` (and its binned variant) to `w`.
pub fn write_model<W: Write>(model: &NgmModel, mut w: W) -> Result<()> {
    let run = |w: &mut W| -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_block(model, w)?;
        if let Some(b) = &model.binned {
            write_block(b, w)?;
        }
        w.flush()
    };
    run(&mut w).map_err(|e| NgmError::Format(format!("write failed: {e}")))
}

fn truncated(e: std::io::Error) -> NgmError {
    NgmError::Format(format!("truncated or unreadable model: {e}"))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn read_block<R: Read>(r: &mut R) -> Result<(NgmModel, bool)> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(truncated)?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(NgmError::Format(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(truncated)?;
    let h: Header = serde_json::from_slice(&json).map_err(|e| NgmError::Format(format!("bad header: {e}")))?;
    let mut layers = Vec::with_capacity(h.layers.len());
    for s in &h.layers {
        let w = read_f64s(r, s.rows * s.cols)?;
        let b = read_f64s(r, s.rows)?;
        layers.push(Layer {
            weight: DMatrix::from_row_slice(s.rows, s.cols, &w),
            bias: DVector::from_vec(b),
            activation: s.activation,
        });
    }
    let params = MlpParams::new(layers).map_err(|e| NgmError::Format(format!("bad layers: {e}")))?;
    if h.mask.rows() != params.input_dim() || h.mask.cols() != params.output_dim() {
        return Err(NgmError::Format("mask does not match the stored network".into()));
    }
    let model = NgmModel {
        params,
        schema: h.schema,
        feature_mask: h.feature_mask,
        mask: h.mask,
        layout: h.layout,
        segments: h.segments,
        lambda_traces: h.lambda_traces,
        history: h.history,
        losses: h.losses,
        residual_std: h.residual_std,
        config: h.config,
        binned: None,
    };
    Ok((model, h.has_binned))
}

/// Reads a model written by [`write_model`].
pub fn read_model<R: Read>(mut r: R) -> Result<NgmModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if magic != MAGIC {
        return Err(NgmError::Format("not a model file (bad magic)".into()));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version).map_err(truncated)?;
    let version = u32::from_le_bytes(version);
    if version != FORMAT_VERSION {
        return Err(NgmError::Format(format!(
            "unsupported format version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let (mut model, has_binned) = read_block(&mut r)?;
    if has_binned {
        let (binned, _) = read_block(&mut r)?;
        model.binned = Some(Box::new(binned));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(truncated)? != 0 {
        return Err(NgmError::Format("trailing bytes after the model".into()));
    }
    Ok(model)
}

/// `<path>.json`, next to the model file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Human-readable summary written next to the model file.
pub fn model_metadata(model: &NgmModel) -> serde_json::Value {
    let part = |m: &NgmModel| {
        serde_json::json!({
            "layout": m.layout,
            "layer_dims": m.params.dims(),
            "parameters": m.params.param_count(),
            "losses": m.losses,
            "masked_ratio": m.masked_ratio(),
            "lambda_traces": m.lambda_traces,
            "best_epoch": m.history.best_epoch,
        })
    };
    serde_json::json!({
        "format_version": FORMAT_VERSION,
        "features": model.schema,
        "config": model.config,
        "model": part(model),
        "binned": model.binned.as_deref().map(part),
    })
}

/// Writes the model file and its JSON sidecar.
pub fn save_model(model: &NgmModel, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| NgmError::io(path, e))?;
    write_model(model, BufWriter::new(f))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&model_metadata(model))?;
    std::fs::write(&side, text + "\n").map_err(|e| NgmError::io(side, e))
}

pub fn load_model(path: &Path) -> Result<NgmModel> {
    let f = File::open(path).map_err(|e| NgmError::io(path, e))?;
    read_model(BufReader::new(f))
}
