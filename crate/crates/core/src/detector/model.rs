use ndarray::{concatenate, s, Array1, Array3, ArrayView1, ArrayView2, Axis, Zip};

use super::ops::{conv2d, linear, relu_inplace, softmax, BatchNorm, ConvGeom};
use super::params::{adapter_kernel, ParameterStore};
use super::{DetectorConfig, DetectorError, Logits, MIN_BANDS, MIN_FRAMES};
use crate::features::LogMelSpectrogram;

/// Added under the square root of the pooled variance.
pub const POOL_EPS: f64 = 1e-9;

fn conv(
    x: &Array3<f64>,
    store: &ParameterStore,
    name: &str,
    bias: Option<&str>,
    geom: ConvGeom,
) -> Result<Array3<f64>, DetectorError> {
    let w = store.array4(name)?;
    let (_, cig, _, _) = w.dim();
    if cig * geom.groups != x.dim().0 {
        return Err(DetectorError::ShapeMismatch {
            name: name.to_string(),
            expected: vec![cig * geom.groups],
            got: vec![x.dim().0],
        });
    }
    let b = bias.map(|n| store.array1(n)).transpose()?;
    Ok(conv2d(x, w.view(), b.as_ref().map(|b| b.view()), geom))
}

fn batch_norm(x: &mut Array3<f64>, store: &ParameterStore, prefix: &str) -> Result<(), DetectorError> {
    let gamma = store.array1(&format!("{prefix}.gamma"))?;
    let beta = store.array1(&format!("{prefix}.beta"))?;
    let mean = store.array1(&format!("{prefix}.running_mean"))?;
    let var = store.array1(&format!("{prefix}.running_var"))?;
    if gamma.len() != x.dim().0 {
        return Err(DetectorError::ShapeMismatch {
            name: format!("{prefix}.gamma"),
            expected: vec![x.dim().0],
            got: vec![gamma.len()],
        });
    }
    BatchNorm {
        gamma: gamma.view(),
        beta: beta.view(),
        mean: mean.view(),
        var: var.view(),
    }
    .apply(x);
    Ok(())
}

/// Conv, BN, ReLU. Stage 0 keeps resolution (3x3, stride 1); later stages
/// halve both axes with a 2x2 stride-2 kernel.
pub fn adapter_forward(
    x: &Array3<f64>,
    store: &ParameterStore,
    stage: usize,
) -> Result<Array3<f64>, DetectorError> {
    let p = format!("stage{stage}.adapter");
    let geom = if adapter_kernel(stage) == 3 {
        ConvGeom::SAME3
    } else {
        ConvGeom { stride: 2, pad: 0, groups: 1 }
    };
    let mut y = conv(x, store, &format!("{p}.conv.weight"), None, geom)?;
    batch_norm(&mut y, store, &format!("{p}.bn"))?;
    relu_inplace(&mut y);
    Ok(y)
}

/// Contextual-transformer attention over a k x k neighbourhood.
/// `prefix` names the block, e.g. `stage2.block0.cot`.
pub fn cot_block_forward(
    x: &Array3<f64>,
    store: &ParameterStore,
    prefix: &str,
    cfg: &DetectorConfig,
) -> Result<Array3<f64>, DetectorError> {
    let k = cfg.cot_kernel;
    let half = k / 2;
    let (c, f, t) = x.dim();
    if c % cfg.cot_heads != 0 {
        return Err(DetectorError::InvalidConfig(format!(
            "{c} channels not divisible into {} heads",
            cfg.cot_heads
        )));
    }

    let mut keys = conv(
        x,
        store,
        &format!("{prefix}.key.weight"),
        None,
        ConvGeom { stride: 1, pad: half, groups: cfg.cot_groups },
    )?;
    batch_norm(&mut keys, store, &format!("{prefix}.key_bn"))?;
    relu_inplace(&mut keys);

    let mut values = conv(x, store, &format!("{prefix}.value.weight"), None, ConvGeom::POINT)?;
    batch_norm(&mut values, store, &format!("{prefix}.value_bn"))?;

    let joint = concatenate(Axis(0), &[keys.view(), x.view()]).expect("same spatial dims");
    let mut a = conv(&joint, store, &format!("{prefix}.attn1.weight"), None, ConvGeom::POINT)?;
    batch_norm(&mut a, store, &format!("{prefix}.attn_bn"))?;
    relu_inplace(&mut a);
    let logits = conv(
        &a,
        store,
        &format!("{prefix}.attn2.weight"),
        Some(&format!("{prefix}.attn2.bias")),
        ConvGeom::POINT,
    )?;
    let kk = k * k;
    if logits.dim().0 != kk * cfg.cot_heads {
        return Err(DetectorError::ShapeMismatch {
            name: format!("{prefix}.attn2.weight"),
            expected: vec![kk * cfg.cot_heads],
            got: vec![logits.dim().0],
        });
    }

    let per_head = c / cfg.cot_heads;
    let mut out = keys;
    for head in 0..cfg.cot_heads {
        // softmax over the k*k window at every position, one plane per offset
        let mut w = logits.slice(s![head * kk..(head + 1) * kk, .., ..]).to_owned();
        let m = w.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
        for mut plane in w.outer_iter_mut() {
            Zip::from(&mut plane).and(&m).for_each(|v, &m| *v = (*v - m).exp());
        }
        let z = w.sum_axis(Axis(0));
        for mut plane in w.outer_iter_mut() {
            Zip::from(&mut plane).and(&z).for_each(|v, &z| *v /= z);
        }
        for ch in head * per_head..(head + 1) * per_head {
            for n in 0..kk {
                let df = (n / k) as isize - half as isize;
                let dt = (n % k) as isize - half as isize;
                let (i0, i1) = ((-df).max(0) as usize, (f as isize - df).min(f as isize));
                let (j0, j1) = ((-dt).max(0) as usize, (t as isize - dt).min(t as isize));
                if i1 <= i0 as isize || j1 <= j0 as isize {
                    continue;
                }
                let (i1, j1) = (i1 as usize, j1 as usize);
                let src = values.slice(s![
                    ch,
                    (i0 as isize + df) as usize..(i1 as isize + df) as usize,
                    (j0 as isize + dt) as usize..(j1 as isize + dt) as usize
                ]);
                Zip::from(out.slice_mut(s![ch, i0..i1, j0..j1]))
                    .and(w.slice(s![n, i0..i1, j0..j1]))
                    .and(src)
                    .for_each(|o, &w, &v| *o += w * v);
            }
        }
    }
    Ok(out)
}

/// Residual block: conv-BN-ReLU, conv-BN, CoT, then shortcut add and ReLU.
/// A block with `{prefix}.shortcut.weight` uses a 1x1 projection shortcut.
pub fn res_cot_forward(
    x: &Array3<f64>,
    store: &ParameterStore,
    prefix: &str,
    cfg: &DetectorConfig,
) -> Result<Array3<f64>, DetectorError> {
    let mut y = conv(x, store, &format!("{prefix}.conv1.weight"), None, ConvGeom::SAME3)?;
    batch_norm(&mut y, store, &format!("{prefix}.bn1"))?;
    relu_inplace(&mut y);
    let mut y = conv(&y, store, &format!("{prefix}.conv2.weight"), None, ConvGeom::SAME3)?;
    batch_norm(&mut y, store, &format!("{prefix}.bn2"))?;
    let mut y = cot_block_forward(&y, store, &format!("{prefix}.cot"), cfg)?;

    let shortcut_name = format!("{prefix}.shortcut.weight");
    if store.get(&shortcut_name).is_ok() {
        let mut sc = conv(x, store, &shortcut_name, None, ConvGeom::POINT)?;
        batch_norm(&mut sc, store, &format!("{prefix}.shortcut_bn"))?;
        y += &sc;
    } else {
        if x.dim() != y.dim() {
            return Err(DetectorError::ShapeMismatch {
                name: format!("{prefix} identity shortcut"),
                expected: vec![x.dim().0, x.dim().1, x.dim().2],
                got: vec![y.dim().0, y.dim().1, y.dim().2],
            });
        }
        y += x;
    }
    relu_inplace(&mut y);
    Ok(y)
}

/// Attentive statistics pooling with explicit parameters: `w` is `A x D`.
pub fn attentive_stats_pool_with(
    h: ArrayView2<f64>,
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
    v: ArrayView1<f64>,
) -> Result<Array1<f64>, DetectorError> {
    let (t, d) = h.dim();
    if t == 0 {
        return Err(DetectorError::EmptySequence);
    }
    if w.dim().1 != d || w.dim().0 != b.len() || b.len() != v.len() {
        return Err(DetectorError::ShapeMismatch {
            name: "pool".into(),
            expected: vec![v.len(), d],
            got: vec![w.dim().0, w.dim().1],
        });
    }
    let e = linear(h, w, Some(b)).mapv(f64::tanh).dot(&v);
    let alpha = softmax(e.view());
    let mu = alpha.dot(&h);
    let second = alpha.dot(&h.mapv(|x| x * x));
    let sigma = Array1::from_shape_fn(d, |i| ((second[i] - mu[i] * mu[i]).max(0.0) + POOL_EPS).sqrt());
    Ok(concatenate(Axis(0), &[mu.view(), sigma.view()]).expect("1-D concat"))
}

/// Pools a `T x D` sequence into `concat(mu, sigma)` using the `pool.*` tensors.
pub fn attentive_stats_pool(h: ArrayView2<f64>, store: &ParameterStore) -> Result<Array1<f64>, DetectorError> {
    let w = store.array2("pool.w.weight")?;
    let b = store.array1("pool.w.bias")?;
    let v = store.array1("pool.v")?;
    attentive_stats_pool_with(h, w.view(), b.view(), v.view())
}

fn embed(x: Array3<f64>, store: &ParameterStore, cfg: &DetectorConfig) -> Result<Array1<f64>, DetectorError> {
    let mut x = x;
    for (s, &blocks) in cfg.blocks_per_stage.iter().enumerate() {
        x = adapter_forward(&x, store, s)?;
        for b in 0..blocks {
            x = res_cot_forward(&x, store, &format!("stage{s}.block{b}"), cfg)?;
        }
    }
    // C x F x T -> T x C, averaging frequency
    let h = x.mean_axis(Axis(1)).expect("nonempty frequency axis").reversed_axes();
    attentive_stats_pool(h.view(), store)
}

/// Full forward pass on a `frames x bands` log-mel input.
pub fn detector_forward(
    feat: &LogMelSpectrogram,
    store: &ParameterStore,
    cfg: &DetectorConfig,
) -> Result<Logits, DetectorError> {
    let (frames, bands) = feat.values.dim();
    if frames < MIN_FRAMES {
        return Err(DetectorError::TooFewFrames { frames, min: MIN_FRAMES });
    }
    if bands < MIN_BANDS {
        return Err(DetectorError::TooFewBands { bands, min: MIN_BANDS });
    }
    let x = feat.values.t().as_standard_layout().into_owned().insert_axis(Axis(0));
    let e = embed(x, store, cfg)?;
    let fc_w = store.array2("fc.weight")?;
    let fc_b = store.array1("fc.bias")?;
    if fc_w.dim() != (cfg.n_classes, e.len()) {
        return Err(DetectorError::ShapeMismatch {
            name: "fc.weight".into(),
            expected: vec![cfg.n_classes, e.len()],
            got: vec![fc_w.dim().0, fc_w.dim().1],
        });
    }
    let out = fc_w.dot(&e) + fc_b;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(DetectorError::NonFinite("logits".into()));
    }
    Ok(Logits {
        l_spoof: out[0],
        l_bonafide: out[1],
    })
}

/// Config and weights bundled for repeated scoring; safe to share across threads.
#[derive(Debug, Clone)]
pub struct Detector {
    pub config: DetectorConfig,
    pub params: ParameterStore,
}

impl Detector {
    pub fn new(config: DetectorConfig, params: ParameterStore) -> Result<Self, DetectorError> {
        config.validate()?;
        Ok(Self { config, params })
    }

    pub fn forward(&self, feat: &LogMelSpectrogram) -> Result<Logits, DetectorError> {
        detector_forward(feat, &self.params, &self.config)
    }

    pub fn score(&self, feat: &LogMelSpectrogram) -> Result<f64, DetectorError> {
        Ok(self.forward(feat)?.score())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::init_parameters;
    use ndarray::{s, Array2};

    fn feat(frames: usize, bands: usize, salt: u64) -> LogMelSpectrogram {
        let mut s = salt.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let values = Array2::from_shape_fn((frames, bands), |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 8.0 - 12.0
        });
        LogMelSpectrogram { values, frame_hop_s: 0.01 }
    }

    #[test]
    fn tiny_forward_is_finite_and_deterministic() {
        let cfg = DetectorConfig::tiny();
        let store = init_parameters(&cfg, 1).unwrap();
        let x = feat(40, 64, 3);
        let a = detector_forward(&x, &store, &cfg).unwrap();
        assert_eq!(a, detector_forward(&x, &store, &cfg).unwrap());
        assert!(a.l_spoof.is_finite() && a.l_bonafide.is_finite());
    }

    #[test]
    fn zero_input_zero_logits() {
        let cfg = DetectorConfig::tiny();
        let store = init_parameters(&cfg, 2).unwrap();
        let x = LogMelSpectrogram { values: Array2::zeros((32, 64)), frame_hop_s: 0.01 };
        let l = detector_forward(&x, &store, &cfg).unwrap();
        assert_eq!((l.l_spoof, l.l_bonafide), (0.0, 0.0));
    }

    #[test]
    fn short_or_narrow_input_rejected() {
        let cfg = DetectorConfig::tiny();
        let store = init_parameters(&cfg, 2).unwrap();
        assert!(matches!(
            detector_forward(&feat(15, 64, 0), &store, &cfg),
            Err(DetectorError::TooFewFrames { frames: 15, .. })
        ));
        assert!(matches!(
            detector_forward(&feat(20, 4, 0), &store, &cfg),
            Err(DetectorError::TooFewBands { .. })
        ));
        assert!(detector_forward(&feat(16, 8, 0), &store, &cfg).is_ok());
    }

    #[test]
    fn pooling_constant_and_single_frame() {
        let d = 6;
        let w = Array2::from_shape_fn((4, d), |(i, j)| (i as f64 - j as f64) * 0.1);
        let b = Array1::from_elem(4, 0.05);
        let v = Array1::from_elem(4, 0.3);
        let h = Array2::from_shape_fn((9, d), |(_, j)| j as f64 - 2.5);
        let out = attentive_stats_pool_with(h.view(), w.view(), b.view(), v.view()).unwrap();
        assert_eq!(out.len(), 2 * d);
        for j in 0..d {
            assert!((out[j] - (j as f64 - 2.5)).abs() < 1e-9);
            assert!(out[d + j] <= 1e-4);
        }
        let one = h.slice(s![0..1, ..]);
        let out = attentive_stats_pool_with(one, w.view(), b.view(), v.view()).unwrap();
        assert!((out[d] - POOL_EPS.sqrt()).abs() < 1e-12);
        let empty = Array2::<f64>::zeros((0, d));
        assert!(attentive_stats_pool_with(empty.view(), w.view(), b.view(), v.view()).is_err());
    }
}
