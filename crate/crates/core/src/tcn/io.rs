//! Versioned JSON model container with parameters as nested decimal arrays.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{TcnConfig, TcnModel};
use crate::data::Normalizer;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: &str = "1";
const FORMAT_NAME: &str = "pdm-tcn";

/// Shape of each named tensor, used to nest and un-nest flat parameters.
fn tensor_shape(model: &TcnModel, name: &str) -> Vec<usize> {
    let cfg = &model.config;
    if name == "head.weight" {
        return vec![cfg.n_classes, cfg.hidden_per_level];
    }
    if name == "head.bias" {
        return vec![cfg.n_classes];
    }
    let mut parts = name.split('.');
    let level: usize = parts.nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let layer = parts.next().unwrap_or_default();
    let block = &model.blocks[level];
    let conv = match layer {
        "conv1" => &block.conv1,
        "conv2" => &block.conv2,
        _ => block.downsample.as_ref().unwrap_or(&block.conv1),
    };
    if name.ends_with(".bias") {
        vec![conv.out_channels]
    } else {
        vec![conv.out_channels, conv.in_channels, conv.kernel_size]
    }
}

fn nest(flat: &[f64], shape: &[usize]) -> Value {
    match shape {
        [] | [_] => json!(flat),
        [_, rest @ ..] => {
            let stride: usize = rest.iter().product();
            Value::Array(flat.chunks(stride.max(1)).map(|c| nest(c, rest)).collect())
        }
    }
}

fn unnest(value: &Value, shape: &[usize], name: &str, out: &mut Vec<f64>) -> Result<()> {
    let bad = || Error::MalformedModel(format!("tensor {name} does not match shape {shape:?}"));
    let arr = value.as_array().ok_or_else(bad)?;
    let (&n, rest) = shape.split_first().ok_or_else(bad)?;
    if arr.len() != n {
        return Err(bad());
    }
    for v in arr {
        if rest.is_empty() {
            out.push(v.as_f64().filter(|x| x.is_finite()).ok_or_else(bad)?);
        } else {
            unnest(v, rest, name, out)?;
        }
    }
    Ok(())
}

pub fn model_to_json(model: &TcnModel) -> Result<String> {
    let mut tensors = Map::new();
    for (name, values) in model.parameters() {
        let shape = tensor_shape(model, &name);
        tensors.insert(name, nest(values, &shape));
    }
    let doc = json!({
        "format": FORMAT_NAME,
        "version": MODEL_FORMAT_VERSION,
        "config": model.config,
        "normalizer": model.normalizer,
        "tensors": tensors,
    });
    serde_json::to_string_pretty(&doc).map_err(|e| Error::MalformedModel(e.to_string()))
}

pub fn model_from_json(text: &str) -> Result<TcnModel> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::MalformedModel(e.to_string()))?;
    let version = doc
        .get("version")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::MalformedModel("missing version".into()))?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version.to_string(),
            expected: MODEL_FORMAT_VERSION.to_string(),
        });
    }
    let field = |key: &str| {
        doc.get(key)
            .cloned()
            .ok_or_else(|| Error::MalformedModel(format!("missing {key}")))
    };
    let config: TcnConfig = serde_json::from_value(field("config")?)
        .map_err(|e| Error::MalformedModel(format!("config: {e}")))?;
    let normalizer: Normalizer = serde_json::from_value(field("normalizer")?)
        .map_err(|e| Error::MalformedModel(format!("normalizer: {e}")))?;
    let tensors = field("tensors")?;
    let tensors = tensors
        .as_object()
        .ok_or_else(|| Error::MalformedModel("tensors must be an object".into()))?;

    let mut model =
        TcnModel::zeros(config, normalizer).map_err(|e| Error::MalformedModel(e.to_string()))?;
    let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    if let Some(extra) = tensors.keys().find(|k| !names.contains(k)) {
        return Err(Error::MalformedModel(format!("unexpected tensor {extra}")));
    }
    let mut loaded = Vec::with_capacity(names.len());
    for name in &names {
        let value = tensors
            .get(name)
            .ok_or_else(|| Error::MalformedModel(format!("missing tensor {name}")))?;
        let mut flat = Vec::new();
        unnest(value, &tensor_shape(&model, name), name, &mut flat)?;
        loaded.push(flat);
    }
    for (slot, values) in model.parameters_mut().into_iter().zip(loaded) {
        *slot = values;
    }
    Ok(model)
}

pub fn save_model(model: &TcnModel, path: &Path) -> Result<()> {
    let text = model_to_json(model)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TcnModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}
