use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{AudioClip, CANONICAL_RATE_HZ};

use super::PresentError;

/// Second-order IIR section, direct form I, coefficients normalized by a0.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn design(kind: PassKind, cutoff_hz: f64, q: f64, sample_rate_hz: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * cutoff_hz / sample_rate_hz;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b = match kind {
            PassKind::Low => [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0],
            PassKind::High => [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0],
        };
        Self {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    pub fn run(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2
                    - self.a[0] * y1
                    - self.a[1] * y2;
                (x2, x1, y2, y1) = (x1, x0, y1, y0);
                y0
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum PassKind {
    Low,
    High,
}

// Pole-pair Q values of a 4th-order Butterworth response.
const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_7];

pub const TELEPHONY_LOW_HZ: f64 = 300.0;
pub const TELEPHONY_HIGH_HZ: f64 = 3400.0;

/// 300-3400 Hz narrowband voice channel: 4th-order Butterworth highpass and
/// lowpass, as four cascaded biquads with zero initial state.
pub fn bandpass_telephony(clip: &AudioClip) -> Result<AudioClip, PresentError> {
    if clip.sample_rate_hz() != CANONICAL_RATE_HZ {
        return Err(PresentError::RateMismatch {
            expected: CANONICAL_RATE_HZ,
            got: clip.sample_rate_hz(),
        });
    }
    let sr = clip.sample_rate_hz() as f64;
    let mut y = clip.samples().to_vec();
    for q in BUTTER4_Q {
        y = Biquad::design(PassKind::High, TELEPHONY_LOW_HZ, q, sr).run(&y);
    }
    for q in BUTTER4_Q {
        y = Biquad::design(PassKind::Low, TELEPHONY_HIGH_HZ, q, sr).run(&y);
    }
    Ok(AudioClip::from_finite(y, clip.sample_rate_hz()))
}

const DIRECT_CONV_MAX_TAPS: usize = 64;

/// First `out_len` samples of the full linear convolution `x * h`.
pub(crate) fn linear_convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; out_len];
    }
    if h.len() <= DIRECT_CONV_MAX_TAPS {
        return (0..out_len)
            .map(|n| {
                let kmax = n.min(h.len() - 1);
                (0..=kmax)
                    .filter(|&k| n - k < x.len())
                    .map(|k| h[k] * x[n - k])
                    .sum()
            })
            .collect();
    }
    let size = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex<f64>> = v.iter().map(|&r| Complex::new(r, 0.0)).collect();
        b.resize(size, Complex::new(0.0, 0.0));
        b
    };
    let mut xf = pad(x);
    let mut hf = pad(h);
    fwd.process(&mut xf);
    fwd.process(&mut hf);
    xf.iter_mut().zip(&hf).for_each(|(a, b)| *a *= b);
    inv.process(&mut xf);
    let scale = 1.0 / size as f64;
    xf.iter().take(out_len).map(|c| c.re * scale).collect()
}

/// Linear convolution with an impulse response, truncated to the input length.
/// If the result peaks above 1.0 it is rescaled to the input's peak.
pub fn convolve_ir(clip: &AudioClip, ir: &AudioClip) -> Result<AudioClip, PresentError> {
    if ir.is_empty() {
        return Err(PresentError::EmptyIr);
    }
    if ir.sample_rate_hz() != clip.sample_rate_hz() {
        return Err(PresentError::RateMismatch {
            expected: clip.sample_rate_hz(),
            got: ir.sample_rate_hz(),
        });
    }
    let mut y = linear_convolve(clip.samples(), ir.samples(), clip.len());
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        let scale = clip.peak() / peak;
        y.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(AudioClip::from_finite(y, clip.sample_rate_hz()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::sine;

    fn steady_rms(c: &AudioClip, skip: usize) -> f64 {
        let s = &c.samples()[skip..];
        (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt()
    }

    #[test]
    fn passes_1k_rejects_60hz_and_dc() {
        let tone = sine(1000.0, 1.0, 2.0, 8000);
        let out = bandpass_telephony(&tone).unwrap();
        let gain_db = 20.0 * (steady_rms(&out, 4000) / steady_rms(&tone, 4000)).log10();
        assert!(gain_db.abs() < 1.0, "1 kHz gain {gain_db} dB");

        let hum = sine(60.0, 1.0, 2.0, 8000);
        let out = bandpass_telephony(&hum).unwrap();
        let att_db = 20.0 * (steady_rms(&out, 8000) / steady_rms(&hum, 8000)).log10();
        assert!(att_db <= -20.0, "60 Hz gain {att_db} dB");

        let dc = AudioClip::new(vec![0.5; 16000], 8000).unwrap();
        let out = bandpass_telephony(&dc).unwrap();
        let tail = out.samples()[12000..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(tail < 0.01, "dc residue {tail}");
    }

    #[test]
    fn unit_impulse_is_identity_and_delay_shifts() {
        let x = sine(440.0, 0.7, 0.05, 8000);
        let delta = AudioClip::new(vec![1.0], 8000).unwrap();
        assert_eq!(convolve_ir(&x, &delta).unwrap(), x);

        let d = 7;
        let mut taps = vec![0.0; d];
        taps.push(1.0);
        let y = convolve_ir(&x, &AudioClip::new(taps, 8000).unwrap()).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(y.samples()[..d].iter().all(|&v| v == 0.0));
        assert_eq!(&y.samples()[d..], &x.samples()[..x.len() - d]);
    }

    #[test]
    fn fft_path_matches_direct() {
        let x: Vec<f64> = (0..3000).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let h: Vec<f64> = (0..300).map(|i| (-(i as f64) / 40.0).exp() * ((i % 7) as f64 - 3.0) / 10.0).collect();
        let fast = linear_convolve(&x, &h, x.len());
        let slow: Vec<f64> = (0..x.len())
            .map(|n| (0..=n.min(h.len() - 1)).map(|k| h[k] * x[n - k]).sum())
            .collect();
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn convolution_is_linear() {
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.13).sin()).collect();
        let y: Vec<f64> = (0..500).map(|i| (i as f64 * 0.031).cos() * 0.5).collect();
        for h_len in [9usize, 200] {
            let h: Vec<f64> = (0..h_len).map(|i| 1.0 / (1.0 + i as f64)).collect();
            let (a, b) = (0.3, -1.7);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = linear_convolve(&mix, &h, 500);
            let cx = linear_convolve(&x, &h, 500);
            let cy = linear_convolve(&y, &h, 500);
            for n in 0..500 {
                assert!((lhs[n] - (a * cx[n] + b * cy[n])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn overflow_is_renormalized_to_input_peak() {
        let x = sine(200.0, 0.9, 0.1, 8000);
        let ir = AudioClip::new(vec![1.0, 1.0, 1.0], 8000).unwrap();
        let y = convolve_ir(&x, &ir).unwrap();
        assert!((y.peak() - x.peak()).abs() < 1e-12);
        assert!(convolve_ir(&x, &AudioClip::new(vec![], 8000).unwrap()).is_err());
    }
}
