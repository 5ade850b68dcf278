//! Checkpoint files.
//!
//! ```text
//! DRGAZE-CHECKPOINT 1
//! channels 3
//! ...                        model configuration, one `key value` per line
//! meta seed 42               free-form run metadata
//! tensors 142
//! eye.initial.weight<TAB>0<TAB>32x3x3x3
//! ...                        name, byte offset into the payload, shape
//! end
//! <payload: every tensor in DRGZ format, in the order listed>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{Element, Tensor};

use super::{DrGazeModel, EyeBranchConfig, ModelConfig, ModelParams};

const HEADER: &str = "DRGAZE-CHECKPOINT 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: DrGazeModel<T>,
    /// Run metadata such as the seed and split that produced the weights.
    pub meta: BTreeMap<String, String>,
}

fn config_lines(config: &ModelConfig) -> Vec<(&'static str, usize)> {
    let e = &config.eye;
    vec![
        ("channels", e.channels),
        ("features", e.features),
        ("blocks", e.blocks),
        ("growth", e.growth),
        ("layers", e.layers),
        ("height", e.height),
        ("width", e.width),
        ("embed", config.embed),
        ("hidden", config.hidden),
        ("scale_targets", config.scale_targets as usize),
    ]
}

pub fn write_checkpoint<T: Element>(checkpoint: &Checkpoint<T>) -> Vec<u8> {
    let model = &checkpoint.model;
    let mut header = format!("{HEADER}\n");
    for (key, value) in config_lines(&model.config) {
        header.push_str(&format!("{key} {value}\n"));
    }
    for (key, value) in &checkpoint.meta {
        header.push_str(&format!("meta {key} {value}\n"));
    }
    let named = model.params.named();
    header.push_str(&format!("tensors {}\n", named.len()));
    let mut payload = Vec::new();
    for (name, tensor) in &named {
        let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("{name}\t{}\t{}\n", payload.len(), dims.join("x")));
        payload.extend(io::encode(*tensor));
    }
    header.push_str("end\n");
    let mut bytes = header.into_bytes();
    bytes.extend(payload);
    bytes
}

pub fn save_checkpoint<T: Element>(path: impl AsRef<Path>, checkpoint: &Checkpoint<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(checkpoint)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Element>(bytes: &[u8], path: &Path) -> Result<Checkpoint<T>> {
    let bad = |msg: String| Error::format(path, msg);

    // Header is text up to and including the "end" line.
    let mut pos = 0usize;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header is not terminated by an `end` line".into()))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8".into()))?;
        pos += nl + 1;
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    let payload = &bytes[pos..];

    let mut lines = lines.into_iter();
    if lines.next() != Some(HEADER) {
        return Err(bad(format!("expected first line {HEADER:?}")));
    }

    let mut config_values = BTreeMap::new();
    let mut meta = BTreeMap::new();
    let mut tensor_count = None;
    for line in lines.by_ref() {
        let mut parts = line.splitn(2, ' ');
        let key = parts.next().unwrap_or_default();
        let value = parts
            .next()
            .ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
        match key {
            "meta" => {
                let (k, v) = value.split_once(' ').unwrap_or((value, ""));
                meta.insert(k.to_string(), v.to_string());
            }
            "tensors" => {
                tensor_count = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| bad(format!("bad tensor count {value:?}")))?,
                );
                break;
            }
            _ => {
                let v = value
                    .parse::<usize>()
                    .map_err(|_| bad(format!("config key {key} has non-integer value {value:?}")))?;
                config_values.insert(key.to_string(), v);
            }
        }
    }
    let tensor_count = tensor_count.ok_or_else(|| bad("missing `tensors` line".into()))?;

    let mut get = |key: &str| {
        config_values
            .remove(key)
            .ok_or_else(|| bad(format!("missing config key {key}")))
    };
    let config = ModelConfig {
        eye: EyeBranchConfig {
            channels: get("channels")?,
            features: get("features")?,
            blocks: get("blocks")?,
            growth: get("growth")?,
            layers: get("layers")?,
            height: get("height")?,
            width: get("width")?,
        },
        embed: get("embed")?,
        hidden: get("hidden")?,
        scale_targets: get("scale_targets")? != 0,
    };
    if let Some(key) = config_values.keys().next() {
        return Err(bad(format!("unknown config key {key}")));
    }
    config.validate()?;

    let expected = ModelParams::shapes(&config);
    let expected_named = expected.named();
    if expected_named.len() != tensor_count {
        return Err(bad(format!(
            "configuration implies {} tensors but the index lists {tensor_count}",
            expected_named.len()
        )));
    }
    let mut tensors = Vec::with_capacity(tensor_count);
    for (name, shape) in expected_named {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("index ends before tensor {name}")))?;
        let fields: Vec<&str> = line.split('\t').collect();
        let [listed, offset, dims] = fields[..] else {
            return Err(bad(format!("malformed index line {line:?}")));
        };
        if listed != name {
            return Err(bad(format!("expected tensor {name}, index lists {listed}")));
        }
        let offset: usize = offset.parse().map_err(|_| bad(format!("bad offset for {name}")))?;
        let listed_shape: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse().map_err(|_| bad(format!("bad shape for {name}"))))
            .collect::<Result<_>>()?;
        if &listed_shape != shape {
            return Err(bad(format!(
                "tensor {name} has shape {listed_shape:?}, configuration requires {shape:?}"
            )));
        }
        let chunk = payload
            .get(offset..)
            .ok_or_else(|| bad(format!("offset of {name} is past the end of the file")))?;
        let (tensor, _) = io::decode::<T>(chunk).map_err(|msg| bad(format!("{name}: {msg}")))?;
        if tensor.shape() != shape.as_slice() {
            return Err(bad(format!("stored tensor {name} does not match its index entry")));
        }
        tensors.push(tensor);
    }
    if lines.next().is_some() {
        return Err(bad("extra lines after the tensor index".into()));
    }
    let params: ModelParams<Tensor<T>> = expected.replace(tensors)?;
    Ok(Checkpoint {
        model: DrGazeModel::from_params(config, params)?,
        meta,
    })
}

pub fn load_checkpoint<T: Element>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, path)
}
