//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may appear once.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// Every key [`apply`] understands, in the order [`to_pairs`] emits them.
pub const KEYS: &[&str] = &[
    "lr",
    "weight_decay",
    "beta1",
    "beta2",
    "eps",
    "steps",
    "batch_size",
    "seed",
    "symmetric_loss",
    "freq_scope",
    "class_aware_sampling",
    "sampler_smoothing",
    "tau",
    "beta",
    "lambda1",
    "lambda2",
    "lambda3",
    "image_side",
    "hidden",
    "d_v",
    "d_t",
    "d",
    "vocab_buckets",
    "learnable_temperature",
];

/// Parses text into key/value pairs. Errors carry the 1-based line number.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let (k, v) = s.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected key = value, got {s:?}"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Parse {
                line,
                message: "key and value must be nonempty".into(),
            });
        }
        if !KEYS.contains(&k) {
            return Err(Error::Parse {
                line,
                message: format!("unknown key {k:?}"),
            });
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate key {k:?}"),
            });
        }
    }
    Ok(out)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))
}

/// Sets one key on `cfg`.
pub fn set(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "lr" => cfg.lr = parse_value(key, value)?,
        "weight_decay" => cfg.weight_decay = parse_value(key, value)?,
        "beta1" => cfg.beta1 = parse_value(key, value)?,
        "beta2" => cfg.beta2 = parse_value(key, value)?,
        "eps" => cfg.eps = parse_value(key, value)?,
        "steps" => cfg.steps = parse_value(key, value)?,
        "batch_size" => cfg.batch_size = parse_value(key, value)?,
        "seed" => cfg.seed = parse_value(key, value)?,
        "symmetric_loss" => cfg.symmetric_loss = parse_value(key, value)?,
        "freq_scope" => cfg.freq_scope = value.parse()?,
        "class_aware_sampling" => cfg.class_aware_sampling = parse_value(key, value)?,
        "sampler_smoothing" => cfg.sampler_smoothing = parse_value(key, value)?,
        "tau" => cfg.loss.tau = parse_value(key, value)?,
        "beta" => cfg.loss.beta = parse_value(key, value)?,
        "lambda1" => cfg.loss.lambda1 = parse_value(key, value)?,
        "lambda2" => cfg.loss.lambda2 = parse_value(key, value)?,
        "lambda3" => cfg.loss.lambda3 = parse_value(key, value)?,
        "image_side" => cfg.encoder.image_side = parse_value(key, value)?,
        "hidden" => cfg.encoder.hidden = parse_value(key, value)?,
        "d_v" => cfg.encoder.d_v = parse_value(key, value)?,
        "d_t" => cfg.encoder.d_t = parse_value(key, value)?,
        "d" => cfg.encoder.d = parse_value(key, value)?,
        "vocab_buckets" => cfg.encoder.vocab_buckets = parse_value(key, value)?,
        "learnable_temperature" => cfg.encoder.learnable_temperature = parse_value(key, value)?,
        other => return Err(Error::Config(format!("unknown key {other:?}"))),
    }
    Ok(())
}

/// Applies every pair, then validates the result.
pub fn apply(cfg: &mut TrainConfig, pairs: &BTreeMap<String, String>) -> Result<()> {
    for (k, v) in pairs {
        set(cfg, k, v)?;
    }
    cfg.validate()
}

/// Every key of `cfg` as text, in [`KEYS`] order. Floats use shortest
/// round-trip formatting.
pub fn to_pairs(cfg: &TrainConfig) -> Vec<(String, String)> {
    let e = &cfg.encoder;
    let l = &cfg.loss;
    let vals: Vec<String> = vec![
        format!("{:?}", cfg.lr),
        format!("{:?}", cfg.weight_decay),
        format!("{:?}", cfg.beta1),
        format!("{:?}", cfg.beta2),
        format!("{:?}", cfg.eps),
        cfg.steps.to_string(),
        cfg.batch_size.to_string(),
        cfg.seed.to_string(),
        cfg.symmetric_loss.to_string(),
        cfg.freq_scope.to_string(),
        cfg.class_aware_sampling.to_string(),
        format!("{:?}", cfg.sampler_smoothing),
        format!("{:?}", l.tau),
        format!("{:?}", l.beta),
        format!("{:?}", l.lambda1),
        format!("{:?}", l.lambda2),
        format!("{:?}", l.lambda3),
        e.image_side.to_string(),
        e.hidden.to_string(),
        e.d_v.to_string(),
        e.d_t.to_string(),
        e.d.to_string(),
        e.vocab_buckets.to_string(),
        e.learnable_temperature.to_string(),
    ];
    KEYS.iter().map(|k| k.to_string()).zip(vals).collect()
}

/// Renders `cfg` in the file format.
pub fn render(cfg: &TrainConfig) -> String {
    to_pairs(cfg).iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
