//! Binary checkpoint layout (little endian):
//!
//! ```text
//! magic  b"SLLMCKPT"
//! u32    format version
//! u64    header length, then a JSON header (spec, encoder, layer shapes, loss trace)
//! f64*   per layer: weights (row-major) then biases
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Dense, Mlp, PredictorSpec, TrainedPredictor};
use crate::data::Encoder;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SLLMCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: PredictorSpec,
    activation: Activation,
    encoder: Encoder,
    shapes: Vec<(usize, usize)>,
    loss_trace: Vec<f64>,
}

pub(super) fn save(model: &TrainedPredictor, path: &Path) -> Result<()> {
    let header = Header {
        spec: model.spec.clone(),
        activation: model.network.activation(),
        encoder: model.encoder.clone(),
        shapes: model
            .network
            .layers()
            .iter()
            .map(|l| (l.inputs, l.outputs))
            .collect(),
        loss_trace: model.loss_trace.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(header.len() + 64);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for layer in model.network.layers() {
        for x in layer.weights.iter().chain(&layer.bias) {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub(super) fn load(path: &Path) -> Result<TrainedPredictor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cursor = Cursor { bytes: &bytes, at: 0 };
    if cursor.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a predictor checkpoint".into()));
    }
    let version = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let header_len = u64::from_le_bytes(cursor.take(8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(cursor.take(header_len)?)?;
    let mut layers = Vec::with_capacity(header.shapes.len());
    for &(inputs, outputs) in &header.shapes {
        let mut read = |n: usize| -> Result<Vec<f64>> {
            (0..n)
                .map(|_| Ok(f64::from_le_bytes(cursor.take(8)?.try_into().unwrap())))
                .collect()
        };
        let weights = read(inputs * outputs)?;
        let bias = read(outputs)?;
        layers.push(Dense {
            inputs,
            outputs,
            weights,
            bias,
        });
    }
    if cursor.at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after weights".into()));
    }
    if layers.is_empty() || layers[0].inputs != header.encoder.dim() {
        return Err(Error::Checkpoint("layer shapes do not match the encoder".into()));
    }
    Ok(TrainedPredictor {
        spec: header.spec,
        network: Mlp::from_layers(layers, header.activation),
        encoder: header.encoder,
        loss_trace: header.loss_trace,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("checkpoint is truncated".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }
}
