//! `.ckpt` files: one JSON manifest line, then every parameter as
//! little-endian f32 in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build, ModelConfig, ModelGraph, NodeOp, Preprocess};
use crate::error::{Error, Result};
use crate::nn::{Layer, LayerKind};

const FORMAT: &str = "icedual-ckpt";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: ModelConfig,
    preprocess: Preprocess,
    layers: Vec<LayerEntry>,
    total_values: usize,
}

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    kind: LayerKind,
    /// Shapes of the stored buffers, in blob order.
    shapes: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factor: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
}

/// Buffers stored for a layer: trainable parameters, then batchnorm running
/// moments.
fn buffers(layer: &Layer<f32>) -> Vec<(Vec<usize>, &[f32])> {
    let mut out: Vec<(Vec<usize>, &[f32])> = layer
        .params()
        .into_iter()
        .map(|p| (p.shape.clone(), p.value.as_slice()))
        .collect();
    if let Layer::BatchNorm(bn) = layer {
        out.push((vec![bn.channels], &bn.running_mean));
        out.push((vec![bn.channels], &bn.running_var));
    }
    out
}

pub fn write_checkpoint(g: &ModelGraph<f32>, preprocess: &Preprocess) -> Result<Vec<u8>> {
    let mut layers = Vec::new();
    let mut blob = Vec::new();
    for node in g.nodes() {
        let NodeOp::Layer(layer) = &node.op else { continue };
        let bufs = buffers(layer);
        let mut entry = LayerEntry {
            name: node.name.clone(),
            kind: layer.kind(),
            shapes: bufs.iter().map(|(s, _)| s.clone()).collect(),
            stride: None,
            factor: None,
            momentum: None,
            eps: None,
        };
        match layer {
            Layer::Conv(c) => entry.stride = Some(c.stride),
            Layer::Upsample(u) => entry.factor = Some(u.factor),
            Layer::BatchNorm(b) => {
                entry.momentum = Some(b.momentum);
                entry.eps = Some(b.eps);
            }
            _ => {}
        }
        for (_, values) in bufs {
            blob.extend(values.iter().flat_map(|v| v.to_le_bytes()));
        }
        layers.push(entry);
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        config: g.config().clone(),
        preprocess: preprocess.clone(),
        layers,
        total_values: blob.len() / 4,
    };
    let mut out = serde_json::to_vec(&manifest)?;
    out.push(b'\n');
    out.extend(blob);
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(ModelGraph<f32>, Preprocess)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("checkpoint has no manifest line".into()))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if value.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
        return Err(Error::MalformedHeader("not a model checkpoint".into()));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let blob = &bytes[nl + 1..];
    if blob.len() != manifest.total_values * 4 {
        return Err(Error::PayloadLength {
            expected: manifest.total_values,
            found_bytes: blob.len(),
        });
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));

    let mut g: ModelGraph<f32> = build(&manifest.config)?;
    let mut entries = manifest.layers.iter();
    for node in g.nodes_mut() {
        let NodeOp::Layer(layer) = &mut node.op else { continue };
        let entry = entries
            .next()
            .ok_or_else(|| Error::MalformedHeader("manifest lists too few layers".into()))?;
        if entry.name != node.name || entry.kind != layer.kind() {
            return Err(Error::MalformedHeader(format!(
                "layer {} ({:?}) does not match architecture node {} ({:?})",
                entry.name,
                entry.kind,
                node.name,
                layer.kind()
            )));
        }
        let expected: Vec<Vec<usize>> = buffers(layer).into_iter().map(|(s, _)| s).collect();
        if expected != entry.shapes {
            return Err(Error::MalformedHeader(format!(
                "layer {}: stored shapes {:?}, architecture needs {:?}",
                entry.name, entry.shapes, expected
            )));
        }
        let mut take = |n: usize| -> Vec<f32> { values.by_ref().take(n).collect() };
        for p in layer.params_mut() {
            p.value = take(p.len());
        }
        if let Layer::BatchNorm(bn) = layer {
            bn.running_mean = take(bn.channels);
            bn.running_var = take(bn.channels);
            if let (Some(m), Some(e)) = (entry.momentum, entry.eps) {
                bn.momentum = m;
                bn.eps = e;
            }
        }
    }
    if entries.next().is_some() {
        return Err(Error::MalformedHeader("manifest lists too many layers".into()));
    }
    Ok((g, manifest.preprocess))
}

pub fn save_checkpoint(g: &ModelGraph<f32>, preprocess: &Preprocess, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(g, preprocess)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelGraph<f32>, Preprocess)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes).map_err(|e| match e {
        Error::MalformedHeader(m) => Error::Parse {
            path: path.into(),
            message: m,
        },
        e => e,
    })
}
