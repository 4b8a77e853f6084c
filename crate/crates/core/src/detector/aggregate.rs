// Layer-wise aggregation of a stacked encoder output: per-layer projection,
// GeLU and layer norm, a softmax-weighted sum over layers, then a final
// layer norm.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::ops::{gelu, layer_norm_rows, linear, softmax};
use super::params::{materialize, Init, ParameterStore, ShapeSpec};
use super::DetectorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub n_layers: usize,
    pub in_dim: usize,
    #[serde(default = "default_proj_dim")]
    pub proj_dim: usize,
}

fn default_proj_dim() -> usize {
    128
}

impl AggregatorConfig {
    pub fn new(n_layers: usize, in_dim: usize) -> Self {
        Self {
            n_layers,
            in_dim,
            proj_dim: default_proj_dim(),
        }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.n_layers == 0 || self.in_dim == 0 || self.proj_dim == 0 {
            return Err(DetectorError::InvalidConfig(
                "aggregator dimensions must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn ln_specs(v: &mut Vec<ShapeSpec>, prefix: &str, d: usize) {
    v.push(ShapeSpec { name: format!("{prefix}.gamma"), shape: vec![d], init: Init::Ones });
    v.push(ShapeSpec { name: format!("{prefix}.beta"), shape: vec![d], init: Init::Zeros });
}

/// Projections are random; layer-weight logits start equal (uniform mix) and
/// both layer norms start as the identity affine.
pub fn init_aggregator(cfg: &AggregatorConfig, seed: u64) -> Result<ParameterStore, DetectorError> {
    cfg.validate()?;
    let mut v = Vec::new();
    for l in 0..cfg.n_layers {
        v.push(ShapeSpec {
            name: format!("agg.layer{l}.proj.weight"),
            shape: vec![cfg.proj_dim, cfg.in_dim],
            init: Init::Linear { fan_in: cfg.in_dim },
        });
        v.push(ShapeSpec {
            name: format!("agg.layer{l}.proj.bias"),
            shape: vec![cfg.proj_dim],
            init: Init::Zeros,
        });
        ln_specs(&mut v, &format!("agg.layer{l}.ln"), cfg.proj_dim);
    }
    v.push(ShapeSpec {
        name: "agg.layer_logits".into(),
        shape: vec![cfg.n_layers],
        init: Init::Zeros,
    });
    ln_specs(&mut v, "agg.out_ln", cfg.proj_dim);
    Ok(materialize(&v, seed))
}

/// `stack` is `L x T x D`; returns `T x proj_dim`.
pub fn aggregate_layers(
    stack: &Array3<f64>,
    store: &ParameterStore,
    cfg: &AggregatorConfig,
) -> Result<Array2<f64>, DetectorError> {
    cfg.validate()?;
    let (l, t, d) = stack.dim();
    if l != cfg.n_layers || d != cfg.in_dim {
        return Err(DetectorError::ShapeMismatch {
            name: "layer stack".into(),
            expected: vec![cfg.n_layers, t, cfg.in_dim],
            got: vec![l, t, d],
        });
    }
    let logits = store.array1("agg.layer_logits")?;
    if logits.len() != l {
        return Err(DetectorError::ShapeMismatch {
            name: "agg.layer_logits".into(),
            expected: vec![l],
            got: vec![logits.len()],
        });
    }
    let weights = softmax(logits.view());
    let mut acc = Array2::<f64>::zeros((t, cfg.proj_dim));
    for (i, layer) in stack.axis_iter(Axis(0)).enumerate() {
        let p = format!("agg.layer{i}");
        let w = store.array2(&format!("{p}.proj.weight"))?;
        if w.dim() != (cfg.proj_dim, d) {
            return Err(DetectorError::ShapeMismatch {
                name: format!("{p}.proj.weight"),
                expected: vec![cfg.proj_dim, d],
                got: vec![w.dim().0, w.dim().1],
            });
        }
        let b = store.array1(&format!("{p}.proj.bias"))?;
        let z = linear(layer, w.view(), Some(b.view())).mapv(gelu);
        let z = layer_norm_rows(
            &z,
            store.array1(&format!("{p}.ln.gamma"))?.view(),
            store.array1(&format!("{p}.ln.beta"))?.view(),
        );
        acc.scaled_add(weights[i], &z);
    }
    Ok(layer_norm_rows(
        &acc,
        store.array1("agg.out_ln.gamma")?.view(),
        store.array1("agg.out_ln.beta")?.view(),
    ))
}
