// Inference-only tensor primitives on C x F x T activations.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView4, Axis};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub const SAME3: ConvGeom = ConvGeom { stride: 1, pad: 1, groups: 1 };
    pub const POINT: ConvGeom = ConvGeom { stride: 1, pad: 0, groups: 1 };

    pub fn out_len(&self, n: usize, k: usize) -> usize {
        (n + 2 * self.pad).saturating_sub(k) / self.stride + 1
    }
}

/// 2-D cross-correlation through per-group im2col and a GEMM.
/// `w` is `(C_out, C_in / groups, kh, kw)`.
pub(crate) fn conv2d(
    x: &Array3<f64>,
    w: ArrayView4<f64>,
    bias: Option<ArrayView1<f64>>,
    geom: ConvGeom,
) -> Array3<f64> {
    let (c_in, f, t) = x.dim();
    let (c_out, cig, kh, kw) = w.dim();
    let g = geom.groups;
    debug_assert_eq!(cig * g, c_in);
    let (fo, to) = (geom.out_len(f, kh), geom.out_len(t, kw));
    let cog = c_out / g;
    let mut out = Array2::<f64>::zeros((c_out, fo * to));
    let pointwise = kh == 1 && kw == 1 && geom.stride == 1 && geom.pad == 0;

    for gi in 0..g {
        let wg = w
            .slice(s![gi * cog..(gi + 1) * cog, .., .., ..])
            .to_shape((cog, cig * kh * kw))
            .expect("weight slice is contiguous")
            .to_owned();
        let xg = x.slice(s![gi * cig..(gi + 1) * cig, .., ..]);
        let cols = if pointwise {
            xg.to_shape((cig, f * t)).expect("reshape").to_owned()
        } else {
            let mut cols = Array2::<f64>::zeros((cig * kh * kw, fo * to));
            for ci in 0..cig {
                let plane = xg.index_axis(Axis(0), ci);
                for a in 0..kh {
                    for b in 0..kw {
                        let mut row = cols.row_mut((ci * kh + a) * kw + b);
                        for i in 0..fo {
                            let fi = (i * geom.stride + a) as isize - geom.pad as isize;
                            if fi < 0 || fi >= f as isize {
                                continue;
                            }
                            let src = plane.row(fi as usize);
                            let dst = &mut row.as_slice_mut().expect("contiguous im2col row")[i * to..(i + 1) * to];
                            if geom.stride == 1 {
                                // valid j satisfy 0 <= j + b - pad < t
                                let j0 = geom.pad.saturating_sub(b);
                                let j1 = (t + geom.pad).saturating_sub(b).min(to);
                                for j in j0..j1 {
                                    dst[j] = src[j + b - geom.pad];
                                }
                            } else {
                                for (j, d) in dst.iter_mut().enumerate() {
                                    let tj = (j * geom.stride + b) as isize - geom.pad as isize;
                                    if tj >= 0 && (tj as usize) < t {
                                        *d = src[tj as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            cols
        };
        out.slice_mut(s![gi * cog..(gi + 1) * cog, ..])
            .assign(&wg.dot(&cols));
    }
    if let Some(b) = bias {
        for (mut row, &bv) in out.rows_mut().into_iter().zip(b.iter()) {
            row += bv;
        }
    }
    out.into_shape_with_order((c_out, fo, to)).expect("conv output shape")
}

/// Inference-mode batch norm with running statistics, applied per channel.
pub(crate) struct BatchNorm<'a> {
    pub gamma: ArrayView1<'a, f64>,
    pub beta: ArrayView1<'a, f64>,
    pub mean: ArrayView1<'a, f64>,
    pub var: ArrayView1<'a, f64>,
}

impl BatchNorm<'_> {
    pub fn apply(&self, x: &mut Array3<f64>) {
        for (c, mut plane) in x.outer_iter_mut().enumerate() {
            let scale = self.gamma[c] / (self.var[c] + BN_EPS).sqrt();
            let shift = self.beta[c] - self.mean[c] * scale;
            plane.mapv_inplace(|v| v * scale + shift);
        }
    }
}

pub(crate) fn relu_inplace<D: ndarray::Dimension>(x: &mut ndarray::Array<f64, D>) {
    x.mapv_inplace(|v| v.max(0.0));
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Normalizes each row, then applies the affine `gamma`, `beta`.
pub(crate) fn layer_norm_rows(
    x: &Array2<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (d, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gamma[d] + beta[d];
        }
    }
    y
}

/// Numerically stable softmax.
pub(crate) fn softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let m = x.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = x.mapv(|v| (v - m).exp());
    let z = e.sum();
    e / z
}

/// `x · wᵀ + b` for row-major `x` (N x D_in) and `w` (D_out x D_in).
pub(crate) fn linear(x: ArrayView2<f64>, w: ArrayView2<f64>, b: Option<ArrayView1<f64>>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    if let Some(b) = b {
        y += &b;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn naive(x: &Array3<f64>, w: &Array4<f64>, geom: ConvGeom) -> Array3<f64> {
        let (c_in, f, t) = x.dim();
        let (c_out, cig, kh, kw) = w.dim();
        let cog = c_out / geom.groups;
        let (fo, to) = (geom.out_len(f, kh), geom.out_len(t, kw));
        Array3::from_shape_fn((c_out, fo, to), |(o, i, j)| {
            let g = o / cog;
            let mut acc = 0.0;
            for ci in 0..cig {
                for a in 0..kh {
                    for b in 0..kw {
                        let fi = (i * geom.stride + a) as isize - geom.pad as isize;
                        let tj = (j * geom.stride + b) as isize - geom.pad as isize;
                        if fi >= 0 && tj >= 0 && (fi as usize) < f && (tj as usize) < t {
                            acc += w[[o, ci, a, b]] * x[[g * cig + ci, fi as usize, tj as usize]];
                        }
                    }
                }
            }
            let _ = c_in;
            acc
        })
    }

    fn pseudo(n: usize, salt: u64) -> Vec<f64> {
        let mut s = salt.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn im2col_matches_direct_loops() {
        let cases = [
            (4, 8, 3, ConvGeom::SAME3),
            (4, 8, 2, ConvGeom { stride: 2, pad: 0, groups: 1 }),
            (8, 8, 3, ConvGeom { stride: 1, pad: 1, groups: 4 }),
            (6, 3, 1, ConvGeom::POINT),
        ];
        for (k, &(ci, co, ks, geom)) in cases.iter().enumerate() {
            let x = Array3::from_shape_vec((ci, 9, 11), pseudo(ci * 99, k as u64)).unwrap();
            let w = Array4::from_shape_vec(
                (co, ci / geom.groups, ks, ks),
                pseudo(co * ci / geom.groups * ks * ks, 100 + k as u64),
            )
            .unwrap();
            let fast = conv2d(&x, w.view(), None, geom);
            let slow = naive(&x, &w, geom);
            assert_eq!(fast.dim(), slow.dim());
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_rows_standardize() {
        let x = Array2::from_shape_vec((3, 16), pseudo(48, 9)).unwrap();
        let ones = Array1::ones(16);
        let zeros = Array1::zeros(16);
        let y = layer_norm_rows(&x, ones.view(), zeros.view());
        for row in y.rows() {
            assert!(row.mean().unwrap().abs() < 1e-12);
            let var = row.mapv(|v| v * v).mean().unwrap();
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((gelu(-1.0) + 0.158_655_253_931_457_05).abs() < 1e-12);
    }
}
