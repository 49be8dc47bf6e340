use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use retarget_core::interpreter::TensorMap;
use retarget_core::ir::{parse_model, Graph};
use retarget_core::profiles::{self, load_profile, CapabilityProfile};
use retarget_core::tensor::TensorData;
use retarget_core::{DType, TensorValue};
use serde::{Deserialize, Serialize};

use crate::Usage;

pub const PROFILE_PATH_VAR: &str = "RETARGET_PROFILE_PATH";

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn load_model(path: &Path) -> Result<Graph> {
    let text = read(path)?;
    parse_model(&text).with_context(|| format!("invalid model {}", path.display()))
}

fn search_dirs() -> Vec<PathBuf> {
    std::env::var_os(PROFILE_PATH_VAR)
        .map(|v| std::env::split_paths(&v).collect())
        .unwrap_or_default()
}

/// Built-in name first, then a file path, then the search directories.
pub fn resolve_profile(spec: &str) -> Result<CapabilityProfile> {
    if let Ok(p) = profiles::builtin(spec) {
        return Ok(p);
    }
    let direct = Path::new(spec);
    if direct.is_file() {
        return load_profile(&read(direct)?).with_context(|| format!("invalid profile {spec}"));
    }
    for dir in search_dirs() {
        for candidate in [dir.join(format!("{spec}.profile.json")), dir.join(spec)] {
            if candidate.is_file() {
                return load_profile(&read(&candidate)?)
                    .with_context(|| format!("invalid profile {}", candidate.display()));
            }
        }
    }
    Err(anyhow!(Usage(format!(
        "unknown profile '{spec}' (built-in: {}; or give a path, or add a directory to {PROFILE_PATH_VAR})",
        profiles::builtin_names().join(", ")
    ))))
}

/// Built-in profiles followed by any found in the search directories.
pub fn all_profiles() -> Result<Vec<CapabilityProfile>> {
    let mut out = profiles::builtin_profiles();
    for dir in search_dirs() {
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".profile.json"))
            .collect();
        paths.sort();
        for p in paths {
            out.push(load_profile(&read(&p)?).with_context(|| format!("invalid profile {}", p.display()))?);
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorIn {
    data: Vec<serde_json::Value>,
    dtype: DType,
    shape: Vec<usize>,
}

#[derive(Serialize)]
pub struct TensorOut {
    pub data: TensorData,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

/// Tensors file: `{"name": {"dtype": ..., "shape": [...], "data": [...]}}`.
pub fn load_tensors(path: &Path) -> Result<TensorMap> {
    let text = read(path)?;
    let raw: BTreeMap<String, TensorIn> =
        serde_json::from_str(&text).with_context(|| format!("malformed tensors file {}", path.display()))?;
    raw.into_iter()
        .map(|(name, t)| {
            let data = TensorData::from_json(t.dtype, &t.data).map_err(|e| anyhow!("tensor '{name}': {e}"))?;
            let v = TensorValue::from_data(t.shape, data).map_err(|e| anyhow!("tensor '{name}': {e}"))?;
            Ok((name, v))
        })
        .collect()
}

pub fn tensors_json(map: &TensorMap) -> BTreeMap<&str, TensorOut> {
    map.iter()
        .map(|(k, v)| {
            (
                k.as_str(),
                TensorOut {
                    data: v.to_data(),
                    dtype: v.dtype(),
                    shape: v.shape().to_vec(),
                },
            )
        })
        .collect()
}

pub fn to_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// `model.nng.json` -> `model`.
pub fn model_stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for suffix in [".nng.json", ".json"] {
        if let Some(stem) = name.strip_suffix(suffix) {
            return stem.to_string();
        }
    }
    name
}
