use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DetectorConfig, DetectorError};
use crate::seed::{derive_seed, sha256_hex};

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f32) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Named tensors, kept in name order so iteration and files are stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, DetectorError> {
        self.tensors
            .get(name)
            .ok_or_else(|| DetectorError::MissingTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    fn values(&self, name: &str, rank: usize) -> Result<(Vec<usize>, Vec<f64>), DetectorError> {
        let t = self.get(name)?;
        if t.shape.len() != rank {
            return Err(DetectorError::ShapeMismatch {
                name: name.to_string(),
                expected: vec![0; rank],
                got: t.shape.clone(),
            });
        }
        Ok((t.shape.clone(), t.data.iter().map(|&v| v as f64).collect()))
    }

    pub(crate) fn array1(&self, name: &str) -> Result<Array1<f64>, DetectorError> {
        let (_, v) = self.values(name, 1)?;
        Ok(Array1::from(v))
    }

    pub(crate) fn array2(&self, name: &str) -> Result<Array2<f64>, DetectorError> {
        let (s, v) = self.values(name, 2)?;
        Ok(Array2::from_shape_vec((s[0], s[1]), v).expect("shape matches data"))
    }

    pub(crate) fn array4(&self, name: &str) -> Result<Array4<f64>, DetectorError> {
        let (s, v) = self.values(name, 4)?;
        Ok(Array4::from_shape_vec((s[0], s[1], s[2], s[3]), v).expect("shape matches data"))
    }
}

pub fn count_parameters(store: &ParameterStore) -> usize {
    store.iter().map(|(_, t)| t.numel()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    /// Uniform in `±sqrt(6 / fan_in)` (ReLU-preserving) for conv kernels.
    Conv { fan_in: usize },
    /// Uniform in `±sqrt(1 / fan_in)` for linear layers.
    Linear { fan_in: usize },
    Zeros,
    Ones,
}

pub(crate) struct ShapeSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn push_conv(v: &mut Vec<ShapeSpec>, name: String, c_out: usize, c_in_per_group: usize, k: usize) {
    v.push(ShapeSpec {
        name,
        shape: vec![c_out, c_in_per_group, k, k],
        init: Init::Conv {
            fan_in: c_in_per_group * k * k,
        },
    });
}

pub(crate) fn push_bn(v: &mut Vec<ShapeSpec>, prefix: &str, c: usize) {
    for (field, init) in [
        ("gamma", Init::Ones),
        ("beta", Init::Zeros),
        ("running_mean", Init::Zeros),
        ("running_var", Init::Ones),
    ] {
        v.push(ShapeSpec {
            name: format!("{prefix}.{field}"),
            shape: vec![c],
            init,
        });
    }
}

pub(crate) fn adapter_kernel(stage: usize) -> usize {
    if stage == 0 {
        3
    } else {
        2
    }
}

pub(crate) fn shape_specs(cfg: &DetectorConfig) -> Vec<ShapeSpec> {
    let mut v = Vec::new();
    let k = cfg.cot_kernel;
    let mut prev = 1;
    for (s, (&c, &blocks)) in cfg.stage_channels.iter().zip(&cfg.blocks_per_stage).enumerate() {
        let p = format!("stage{s}");
        push_conv(&mut v, format!("{p}.adapter.conv.weight"), c, prev, adapter_kernel(s));
        push_bn(&mut v, &format!("{p}.adapter.bn"), c);
        for b in 0..blocks {
            let q = format!("{p}.block{b}");
            push_conv(&mut v, format!("{q}.conv1.weight"), c, c, 3);
            push_bn(&mut v, &format!("{q}.bn1"), c);
            push_conv(&mut v, format!("{q}.conv2.weight"), c, c, 3);
            push_bn(&mut v, &format!("{q}.bn2"), c);
            push_conv(&mut v, format!("{q}.cot.key.weight"), c, c / cfg.cot_groups, k);
            push_bn(&mut v, &format!("{q}.cot.key_bn"), c);
            push_conv(&mut v, format!("{q}.cot.value.weight"), c, c, 1);
            push_bn(&mut v, &format!("{q}.cot.value_bn"), c);
            let mid = cfg.attention_mid(c);
            push_conv(&mut v, format!("{q}.cot.attn1.weight"), mid, 2 * c, 1);
            push_bn(&mut v, &format!("{q}.cot.attn_bn"), mid);
            push_conv(&mut v, format!("{q}.cot.attn2.weight"), k * k * cfg.cot_heads, mid, 1);
            v.push(ShapeSpec {
                name: format!("{q}.cot.attn2.bias"),
                shape: vec![k * k * cfg.cot_heads],
                init: Init::Zeros,
            });
            if b == 0 {
                push_conv(&mut v, format!("{q}.shortcut.weight"), c, c, 1);
                push_bn(&mut v, &format!("{q}.shortcut_bn"), c);
            }
        }
        prev = c;
    }
    let d = cfg.stage_channels[3];
    let a = cfg.pool_attention_dim;
    v.push(ShapeSpec {
        name: "pool.w.weight".into(),
        shape: vec![a, d],
        init: Init::Linear { fan_in: d },
    });
    v.push(ShapeSpec {
        name: "pool.w.bias".into(),
        shape: vec![a],
        init: Init::Zeros,
    });
    v.push(ShapeSpec {
        name: "pool.v".into(),
        shape: vec![a],
        init: Init::Linear { fan_in: a },
    });
    v.push(ShapeSpec {
        name: "fc.weight".into(),
        shape: vec![cfg.n_classes, 2 * d],
        init: Init::Linear { fan_in: 2 * d },
    });
    v.push(ShapeSpec {
        name: "fc.bias".into(),
        shape: vec![cfg.n_classes],
        init: Init::Zeros,
    });
    v
}

/// Tensor names and shapes implied by a config, in construction order.
pub fn expected_shapes(cfg: &DetectorConfig) -> Vec<(String, Vec<usize>)> {
    shape_specs(cfg).into_iter().map(|s| (s.name, s.shape)).collect()
}

pub(crate) fn materialize(specs: &[ShapeSpec], seed: u64) -> ParameterStore {
    let mut store = ParameterStore::new();
    for spec in specs {
        let t = match spec.init {
            Init::Zeros => Tensor::zeros(&spec.shape),
            Init::Ones => Tensor::filled(&spec.shape, 1.0),
            Init::Conv { fan_in } | Init::Linear { fan_in } => {
                let num = if matches!(spec.init, Init::Conv { .. }) { 6.0 } else { 1.0 };
                let bound = (num / fan_in as f64).sqrt();
                // one stream per tensor, so adding a tensor never reshuffles the others
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &spec.name));
                let n = spec.shape.iter().product();
                Tensor {
                    shape: spec.shape.clone(),
                    data: (0..n)
                        .map(|_| rng.random_range(-bound..bound) as f32)
                        .collect(),
                }
            }
        };
        store.insert(spec.name.clone(), t);
    }
    store
}

/// Deterministic initialization. The sigma half of the classifier weights
/// starts at zero so that an all-zero input maps to all-zero logits (the
/// pooled sigma is `sqrt(eps)`, not 0, for a constant sequence).
pub fn init_parameters(cfg: &DetectorConfig, seed: u64) -> Result<ParameterStore, DetectorError> {
    cfg.validate()?;
    let mut store = materialize(&shape_specs(cfg), seed);
    let d = cfg.stage_channels[3];
    let fc = store.get_mut("fc.weight").expect("fc.weight is always created");
    for row in fc.data.chunks_mut(2 * d) {
        row[d..].iter_mut().for_each(|w| *w = 0.0);
    }
    Ok(store)
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsManifest {
    format_version: u32,
    dtype: String,
    config: DetectorConfig,
    total_bytes: usize,
    sha256: String,
    tensors: Vec<TensorEntry>,
}

/// The JSON manifest sits next to the blob as `<path>.json`.
pub fn weights_manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_parameters(
    store: &ParameterStore,
    cfg: &DetectorConfig,
    path: &Path,
) -> Result<(), DetectorError> {
    let mut blob = Vec::with_capacity(count_parameters(store) * 4);
    let mut tensors = Vec::with_capacity(store.len());
    for (name, t) in store.iter() {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape.clone(),
            offset: blob.len(),
        });
        for v in &t.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = WeightsManifest {
        format_version: WEIGHTS_FORMAT_VERSION,
        dtype: "f32le".into(),
        config: cfg.clone(),
        total_bytes: blob.len(),
        sha256: sha256_hex(&blob),
        tensors,
    };
    fs::write(path, &blob)?;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DetectorError::Malformed(e.to_string()))?;
    fs::write(weights_manifest_path(path), json + "\n")?;
    Ok(())
}

/// Loads and validates a weight file against the config recorded in its manifest.
pub fn load_parameters(path: &Path) -> Result<(DetectorConfig, ParameterStore), DetectorError> {
    let raw = fs::read_to_string(weights_manifest_path(path))?;
    let probe: serde_json::Value =
        serde_json::from_str(&raw).map_err(|e| DetectorError::Malformed(e.to_string()))?;
    let version = probe
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| DetectorError::Malformed("missing format_version".into()))?;
    if version != WEIGHTS_FORMAT_VERSION as u64 {
        return Err(DetectorError::UnsupportedVersion(version as u32));
    }
    let manifest: WeightsManifest =
        serde_json::from_value(probe).map_err(|e| DetectorError::Malformed(e.to_string()))?;
    if manifest.dtype != "f32le" {
        return Err(DetectorError::Malformed(format!("dtype {}", manifest.dtype)));
    }
    manifest.config.validate()?;

    let blob = fs::read(path)?;
    if blob.len() != manifest.total_bytes {
        return Err(DetectorError::Truncated {
            expected: manifest.total_bytes,
            found: blob.len(),
        });
    }
    if sha256_hex(&blob) != manifest.sha256 {
        return Err(DetectorError::Checksum);
    }

    let expected: BTreeMap<String, Vec<usize>> = expected_shapes(&manifest.config).into_iter().collect();
    let mut store = ParameterStore::new();
    for entry in &manifest.tensors {
        let want = expected
            .get(&entry.name)
            .ok_or_else(|| DetectorError::Malformed(format!("unexpected tensor {}", entry.name)))?;
        if *want != entry.shape {
            return Err(DetectorError::ShapeMismatch {
                name: entry.name.clone(),
                expected: want.clone(),
                got: entry.shape.clone(),
            });
        }
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * n;
        if end > blob.len() {
            return Err(DetectorError::Truncated {
                expected: end,
                found: blob.len(),
            });
        }
        let data: Vec<f32> = blob[entry.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DetectorError::NonFinite(entry.name.clone()));
        }
        store.insert(entry.name.clone(), Tensor { shape: entry.shape.clone(), data });
    }
    if let Some(name) = expected.keys().find(|k| store.get(k).is_err()) {
        return Err(DetectorError::MissingTensor(name.clone()));
    }
    Ok((manifest.config, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_examples() {
        assert_eq!(count_parameters(&ParameterStore::new()), 0);
        let mut s = ParameterStore::new();
        s.insert("c.weight", Tensor::zeros(&[16, 8, 3, 3]));
        s.insert("c.bias", Tensor::zeros(&[16]));
        assert_eq!(count_parameters(&s), 1168);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = DetectorConfig::tiny();
        let a = init_parameters(&cfg, 7).unwrap();
        assert_eq!(a, init_parameters(&cfg, 7).unwrap());
        assert_ne!(a, init_parameters(&cfg, 8).unwrap());
        let fc = a.get("fc.weight").unwrap();
        let d = cfg.stage_channels[3];
        assert!(fc.data[..d].iter().any(|&w| w != 0.0));
        assert!(fc.data[d..2 * d].iter().all(|&w| w == 0.0));
        let bn = a.get("stage1.adapter.bn.running_var").unwrap();
        assert!(bn.data.iter().all(|&v| v == 1.0));
    }
}
