//! Checkpoint file format.
//!
//! A checkpoint is a UTF-8 JSON document:
//!
//! ```json
//! {"version": 1,
//!  "arch": [{"kind":"input","shape":[8,8,1]}, {"kind":"dense","in_dim":64,"out_dim":10}, ...],
//!  "params": [[], [0.25, -1.5, ...], ...],
//!  "class_count": 10}
//! ```
//!
//! `params` holds one array per `arch` entry (empty for parameter-free
//! entries), row-major, weights before bias. Values are decimal renderings of
//! 32-bit floats and round-trip exactly: loading a saved checkpoint rebuilds
//! a network whose forward outputs are bit-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::{Layer, Shape};
use super::Network;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerDesc {
    Input { shape: [usize; 3] },
    Dense { in_dim: usize, out_dim: usize },
    Conv2d { in_ch: usize, out_ch: usize, kh: usize, kw: usize, stride: usize },
    Relu,
    Flatten,
    Softmax,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    arch: Vec<LayerDesc>,
    params: Vec<Vec<f32>>,
    class_count: usize,
}

pub(super) fn describe(net: &Network) -> Vec<LayerDesc> {
    let shape = net.input_shape();
    let mut arch = vec![LayerDesc::Input {
        shape: [shape.h, shape.w, shape.c],
    }];
    for layer in net.layers() {
        arch.push(match layer {
            Layer::Dense { in_dim, out_dim, .. } => LayerDesc::Dense {
                in_dim: *in_dim,
                out_dim: *out_dim,
            },
            Layer::Conv2d {
                in_ch,
                out_ch,
                kh,
                kw,
                stride,
                ..
            } => LayerDesc::Conv2d {
                in_ch: *in_ch,
                out_ch: *out_ch,
                kh: *kh,
                kw: *kw,
                stride: *stride,
            },
            Layer::Relu => LayerDesc::Relu,
            Layer::Flatten => LayerDesc::Flatten,
            Layer::Softmax => LayerDesc::Softmax,
        });
    }
    arch
}

fn to_doc(net: &Network) -> CheckpointDoc {
    let mut params = vec![Vec::new()];
    for layer in net.layers() {
        let (w, b) = layer.params();
        let mut flat = Vec::with_capacity(w.len() + b.len());
        flat.extend_from_slice(w);
        flat.extend_from_slice(b);
        params.push(flat);
    }
    CheckpointDoc {
        version: CHECKPOINT_VERSION,
        arch: describe(net),
        params,
        class_count: net.class_count(),
    }
}

fn from_doc(doc: CheckpointDoc) -> Result<Network> {
    if doc.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {} (expected {})",
            doc.version, CHECKPOINT_VERSION
        )));
    }
    if doc.params.len() != doc.arch.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} arch entries but {} parameter arrays",
            doc.arch.len(),
            doc.params.len()
        )));
    }
    let mut arch = doc.arch.iter();
    let input_shape = match arch.next() {
        Some(LayerDesc::Input { shape }) => Shape {
            h: shape[0],
            w: shape[1],
            c: shape[2],
        },
        _ => {
            return Err(Error::Format(
                "checkpoint arch must start with an input descriptor".into(),
            ))
        }
    };
    let mut layers = Vec::new();
    for desc in arch {
        layers.push(match desc {
            LayerDesc::Input { .. } => {
                return Err(Error::Format("unexpected nested input descriptor".into()))
            }
            LayerDesc::Dense { in_dim, out_dim } => Layer::dense_zeroed(*in_dim, *out_dim),
            LayerDesc::Conv2d {
                in_ch,
                out_ch,
                kh,
                kw,
                stride,
            } => Layer::conv2d_zeroed(*in_ch, *out_ch, *kh, *kw, *stride),
            LayerDesc::Relu => Layer::Relu,
            LayerDesc::Flatten => Layer::Flatten,
            LayerDesc::Softmax => Layer::Softmax,
        });
    }
    let skeleton = Network::new(input_shape, layers, doc.class_count)?;
    let mut flat = Vec::with_capacity(skeleton.param_count());
    for (i, arr) in doc.params.iter().enumerate().skip(1) {
        let expected = skeleton.layers()[i - 1].param_count();
        if arr.len() != expected {
            return Err(Error::Format(format!(
                "layer {} expects {} parameters, checkpoint has {}",
                i - 1,
                expected,
                arr.len()
            )));
        }
        flat.extend_from_slice(arr);
    }
    skeleton.unflatten_weights(&flat)
}

pub fn checkpoint_to_json_value(net: &Network) -> serde_json::Value {
    serde_json::to_value(to_doc(net)).expect("checkpoint serialization is infallible")
}

pub fn checkpoint_from_json_value(value: serde_json::Value) -> Result<Network> {
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format("checkpoint is missing a version tag".into()))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    from_doc(serde_json::from_value(value)?)
}

pub fn save_checkpoint<P: AsRef<Path>>(net: &Network, path: P) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut file, &to_doc(net))?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Network> {
    let file = BufReader::new(File::open(path)?);
    let value: serde_json::Value = serde_json::from_reader(file)?;
    checkpoint_from_json_value(value)
}
