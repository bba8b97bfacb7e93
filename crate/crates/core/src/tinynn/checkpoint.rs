use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{BatchNorm, Layer, LayerSpec, Linear, MlpModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &str = "MILNN v1";

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    layers: Vec<LayerSpec>,
    values: usize,
    #[serde(default)]
    meta: serde_json::Value,
}

fn tensors<T: Scalar>(model: &MlpModel<T>) -> Vec<&[T]> {
    let mut out = Vec::new();
    for layer in model.layers() {
        match layer {
            Layer::Linear(l) => {
                out.push(l.weight.as_slice().expect("standard layout"));
                out.push(l.bias.as_slice().expect("standard layout"));
            }
            Layer::BatchNorm(b) => {
                for t in [&b.gamma, &b.beta, &b.running_mean, &b.running_var] {
                    out.push(t.as_slice().expect("standard layout"));
                }
            }
            _ => {}
        }
    }
    out
}

/// Writes a text header line, a JSON line describing the layers, then every
/// weight, bias and batch-norm statistic as little-endian f64.
pub fn write_checkpoint<T: Scalar, W: Write>(
    model: &MlpModel<T>,
    meta: serde_json::Value,
    mut out: W,
) -> Result<()> {
    let ts = tensors(model);
    let header = Header {
        dtype: T::DTYPE.to_string(),
        layers: model.specs().to_vec(),
        values: ts.iter().map(|t| t.len()).sum(),
        meta,
    };
    let wrap = |e| Error::io("<checkpoint>", e);
    writeln!(out, "{MAGIC}").map_err(wrap)?;
    writeln!(out, "{}", serde_json::to_string(&header)?).map_err(wrap)?;
    for t in ts {
        for v in t {
            out.write_all(&v.as_f64().to_le_bytes()).map_err(wrap)?;
        }
    }
    out.flush().map_err(wrap)
}

pub fn read_checkpoint<T: Scalar, R: BufRead>(mut input: R) -> Result<(MlpModel<T>, serde_json::Value)> {
    let wrap = |e| Error::io("<checkpoint>", e);
    let mut line = String::new();
    input.read_line(&mut line).map_err(wrap)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic line {:?}", line.trim_end())));
    }
    line.clear();
    input.read_line(&mut line).map_err(wrap)?;
    let header: Header = serde_json::from_str(line.trim_end())?;
    let mut raw = Vec::new();
    input.read_to_end(&mut raw).map_err(wrap)?;
    if raw.len() != header.values * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} values, found {} bytes",
            header.values,
            raw.len()
        )));
    }
    let mut values = raw
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))));
    let mut take = |n: usize| -> Vec<T> { values.by_ref().take(n).collect() };
    let mut layers = Vec::with_capacity(header.layers.len());
    for spec in &header.layers {
        layers.push(match *spec {
            LayerSpec::Linear { input, output } => {
                let weight = Array2::from_shape_vec((input, output), take(input * output))
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                Layer::Linear(Linear {
                    weight,
                    bias: Array1::from(take(output)),
                })
            }
            LayerSpec::BatchNorm { features } => Layer::BatchNorm(BatchNorm {
                gamma: Array1::from(take(features)),
                beta: Array1::from(take(features)),
                running_mean: Array1::from(take(features)),
                running_var: Array1::from(take(features)),
            }),
            LayerSpec::Dropout { p } => Layer::Dropout(p),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Softmax => Layer::Softmax,
        });
    }
    let model = MlpModel::from_parts(header.layers, layers)?;
    if tensors(&model).iter().map(|t| t.len()).sum::<usize>() != header.values {
        return Err(Error::Checkpoint("value count does not match the layers".into()));
    }
    Ok((model, header.meta))
}

pub fn save_checkpoint<T: Scalar>(model: &MlpModel<T>, meta: serde_json::Value, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, meta, BufWriter::new(f))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(MlpModel<T>, serde_json::Value)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}
