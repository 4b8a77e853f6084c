//! Signal-level training augmentations: volume, RawBoost-style convolutive,
//! impulsive and stationary coloured noise, and codec passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;

use super::codec::{codec_roundtrip, Codec};
use super::filters::linear_convolve;
use super::PresentError;

pub fn apply_gain(clip: &AudioClip, gain_db: f64) -> AudioClip {
    if gain_db == 0.0 {
        return clip.clone();
    }
    let g = 10f64.powf(gain_db / 20.0);
    clip.map(|s| s * g)
}

/// `threshold * tanh(x / threshold)`.
pub fn soft_clip(clip: &AudioClip, threshold: f64) -> Result<AudioClip, PresentError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(PresentError::InvalidParameter(format!(
            "clip threshold {threshold} outside (0, 1]"
        )));
    }
    Ok(clip.map(|s| threshold * (s / threshold).tanh()))
}

const NOISE_COLOR_TAPS: usize = 8;

/// Adds white Gaussian noise shaped by a seeded random FIR, scaled so that
/// `10 log10(P_signal / P_noise) = snr_db` exactly.
pub fn add_colored_noise(clip: &AudioClip, snr_db: f64, seed: u64) -> Result<AudioClip, PresentError> {
    if !snr_db.is_finite() {
        return Err(PresentError::InvalidParameter("snr_db must be finite".into()));
    }
    let p_signal = clip.power();
    if !(p_signal > 0.0) {
        return Err(PresentError::SilentInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fir: Vec<f64> = (0..NOISE_COLOR_TAPS)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let white: Vec<f64> = (0..clip.len() + NOISE_COLOR_TAPS)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    // drop the filter start-up so the noise is stationary from sample 0
    let colored = linear_convolve(&white, &fir, white.len());
    let noise = &colored[NOISE_COLOR_TAPS..];
    let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    if !(p_noise > 0.0) {
        return Err(PresentError::SilentInput);
    }
    let scale = (p_signal / 10f64.powf(snr_db / 10.0) / p_noise).sqrt();
    let out = clip
        .samples()
        .iter()
        .zip(noise)
        .map(|(s, n)| s + scale * n)
        .collect();
    Ok(AudioClip::from_finite(out, clip.sample_rate_hz()))
}

/// Random multi-notch filter settings for [`convolutive_distortion`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NotchParams {
    pub n_filters: usize,
    /// Notch depths are drawn from `[0, max_depth]`; 0 gives an identity filter.
    pub max_depth: f64,
    pub min_bandwidth_hz: f64,
    pub max_bandwidth_hz: f64,
    pub min_center_hz: f64,
    pub max_center_hz: f64,
    /// Odd FIR length.
    pub taps: usize,
}

impl Default for NotchParams {
    fn default() -> Self {
        Self {
            n_filters: 5,
            max_depth: 0.9,
            min_bandwidth_hz: 50.0,
            max_bandwidth_hz: 400.0,
            min_center_hz: 100.0,
            max_center_hz: 3800.0,
            taps: 129,
        }
    }
}

/// Linear-phase FIR (frequency sampling, Hann window) whose magnitude is a
/// product of Gaussian notches, scaled to unit mean gain.
fn notch_fir(params: &NotchParams, sample_rate_hz: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = params.taps | 1;
    let half = n / 2;
    let notches: Vec<(f64, f64, f64)> = (0..params.n_filters)
        .map(|_| {
            let depth = rng.random::<f64>() * params.max_depth;
            let center = params.min_center_hz
                + rng.random::<f64>() * (params.max_center_hz - params.min_center_hz);
            let bw = params.min_bandwidth_hz
                + rng.random::<f64>() * (params.max_bandwidth_hz - params.min_bandwidth_hz);
            (depth, center, bw.max(1.0))
        })
        .collect();
    // magnitude at bins k = 0..=half of an n-point grid
    let mag: Vec<f64> = (0..=half)
        .map(|k| {
            let f = k as f64 * sample_rate_hz as f64 / n as f64;
            notches.iter().fold(1.0, |acc, &(depth, center, bw)| {
                acc * (1.0 - depth * (-((f - center) / bw).powi(2)).exp())
            })
        })
        .collect();
    let mean = (mag[0] + 2.0 * mag[1..].iter().sum::<f64>()) / n as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    (0..n)
        .map(|i| {
            let m = i as f64 - half as f64;
            let sum = mag[0]
                + 2.0
                    * (1..=half)
                        .map(|k| mag[k] * (two_pi * k as f64 * m / n as f64).cos())
                        .sum::<f64>();
            let hann = 0.5 + 0.5 * (two_pi * m / (n + 1) as f64).cos();
            sum / n as f64 / mean * hann
        })
        .collect()
}

/// Convolutive channel distortion with a seeded multi-notch FIR. Group delay
/// is compensated, so the output is aligned with and as long as the input.
pub fn convolutive_distortion(
    clip: &AudioClip,
    params: &NotchParams,
    seed: u64,
) -> Result<AudioClip, PresentError> {
    if params.n_filters == 0 {
        return Err(PresentError::InvalidParameter("n_filters must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&params.max_depth) {
        return Err(PresentError::InvalidParameter("max_depth outside [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = notch_fir(params, clip.sample_rate_hz(), &mut rng);
    let delay = h.len() / 2;
    let full = linear_convolve(clip.samples(), &h, clip.len() + delay);
    Ok(AudioClip::from_finite(full[delay..].to_vec(), clip.sample_rate_hz()))
}

/// Seeded Bernoulli impulse positions with `rate_per_s * duration` expected count.
pub fn impulse_positions(len: usize, sample_rate_hz: u32, rate_per_s: f64, seed: u64) -> Vec<usize> {
    if rate_per_s <= 0.0 {
        return Vec::new();
    }
    let p = (rate_per_s / sample_rate_hz as f64).min(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).filter(|_| rng.random::<f64>() < p).collect()
}

const LOCAL_RMS_HALF_WINDOW: usize = 40;

/// Signal-dependent impulsive noise: impulses at seeded positions with
/// amplitude `amplitude_rel * local_rms * u`, `u` uniform in ±[0.5, 1].
pub fn impulsive_noise(
    clip: &AudioClip,
    rate_per_s: f64,
    amplitude_rel: f64,
    seed: u64,
) -> Result<AudioClip, PresentError> {
    if !(rate_per_s >= 0.0) || !amplitude_rel.is_finite() {
        return Err(PresentError::InvalidParameter(
            "impulse rate must be >= 0 and amplitude finite".into(),
        ));
    }
    let positions = impulse_positions(clip.len(), clip.sample_rate_hz(), rate_per_s, seed);
    if positions.is_empty() {
        return Ok(clip.clone());
    }
    let x = clip.samples();
    let mut energy = vec![0.0; x.len() + 1];
    for (i, s) in x.iter().enumerate() {
        energy[i + 1] = energy[i] + s * s;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut y = x.to_vec();
    for n in positions {
        let lo = n.saturating_sub(LOCAL_RMS_HALF_WINDOW);
        let hi = (n + LOCAL_RMS_HALF_WINDOW + 1).min(x.len());
        let local = ((energy[hi] - energy[lo]).max(0.0) / (hi - lo) as f64).sqrt();
        let mag = 0.5 + 0.5 * rng.random::<f64>();
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        y[n] += sign * mag * amplitude_rel * local;
    }
    Ok(AudioClip::from_finite(y, clip.sample_rate_hz()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentKind {
    Volume { min_db: f64, max_db: f64 },
    Convolutive(NotchParams),
    Impulsive { rate_per_s: f64, amplitude_rel: f64 },
    ColoredNoise { min_snr_db: f64, max_snr_db: f64 },
    Codec { codec: Codec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    #[serde(flatten)]
    pub kind: AugmentKind,
    pub seed: u64,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Result<f64, PresentError> {
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(PresentError::InvalidParameter(format!("bad range [{lo}, {hi}]")));
    }
    Ok(lo + (hi - lo) * rng.random::<f64>())
}

/// Applies one augmentation; a pure function of `(clip, spec)`.
pub fn augment(clip: &AudioClip, spec: &AugmentSpec) -> Result<AudioClip, PresentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match &spec.kind {
        AugmentKind::Volume { min_db, max_db } => {
            Ok(apply_gain(clip, uniform(&mut rng, *min_db, *max_db)?))
        }
        AugmentKind::Convolutive(p) => convolutive_distortion(clip, p, rng.random()),
        AugmentKind::Impulsive {
            rate_per_s,
            amplitude_rel,
        } => impulsive_noise(clip, *rate_per_s, *amplitude_rel, rng.random()),
        AugmentKind::ColoredNoise {
            min_snr_db,
            max_snr_db,
        } => {
            let snr = uniform(&mut rng, *min_snr_db, *max_snr_db)?;
            add_colored_noise(clip, snr, rng.random())
        }
        AugmentKind::Codec { codec } => codec_roundtrip(clip, *codec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::sine;

    fn speechlike() -> AudioClip {
        AudioClip::concat(&[
            sine(300.0, 0.4, 0.5, 8000),
            sine(1200.0, 0.3, 0.5, 8000),
        ])
        .unwrap()
    }

    #[test]
    fn gain_cases() {
        let x = sine(500.0, 0.9, 0.1, 8000);
        assert_eq!(apply_gain(&x, 0.0), x);
        let half = apply_gain(&x, 20.0 * 0.5f64.log10());
        for (a, b) in half.samples().iter().zip(x.samples()) {
            assert!((a - b / 2.0).abs() < 1e-9);
        }
        let loud = apply_gain(&x, 6.0);
        assert!((loud.peak() - x.peak() * 10f64.powf(0.3)).abs() < 1e-9);
        assert!(loud.peak() > 1.7);
    }

    #[test]
    fn soft_clip_bounds() {
        let th = 0.8;
        let x = AudioClip::new((-200..=200).map(|i| i as f64 / 20.0).collect(), 8000).unwrap();
        let y = soft_clip(&x, th).unwrap();
        assert!(y.samples().iter().all(|v| v.abs() < th));
        assert_eq!(y.samples()[200], 0.0);
        for (a, b) in x.samples().iter().zip(y.samples()) {
            if a.abs() <= 0.1 * th && *a != 0.0 {
                assert!(((b - a) / a).abs() < 0.01);
            }
        }
        assert!(soft_clip(&x, 0.0).is_err());
        assert!(soft_clip(&x, 1.5).is_err());
    }

    #[test]
    fn colored_noise_snr_and_determinism() {
        let x = speechlike();
        for snr in [0.0, 10.0, 25.0] {
            let y = add_colored_noise(&x, snr, 3).unwrap();
            let noise: Vec<f64> = y.samples().iter().zip(x.samples()).map(|(a, b)| a - b).collect();
            let pn = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
            let measured = 10.0 * (x.power() / pn).log10();
            assert!((measured - snr).abs() <= 0.1, "{measured} vs {snr}");
        }
        let quiet = add_colored_noise(&x, 100.0, 1).unwrap();
        let diff: f64 = quiet.samples().iter().zip(x.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
        assert!(diff.sqrt() < 1e-4);
        assert_eq!(add_colored_noise(&x, 10.0, 9).unwrap(), add_colored_noise(&x, 10.0, 9).unwrap());
        assert_ne!(add_colored_noise(&x, 10.0, 9).unwrap(), add_colored_noise(&x, 10.0, 10).unwrap());
        assert!(matches!(
            add_colored_noise(&AudioClip::silence(100, 8000), 10.0, 1),
            Err(PresentError::SilentInput)
        ));
    }

    #[test]
    fn zero_depth_notches_are_identity() {
        let x = speechlike();
        let p = NotchParams {
            max_depth: 0.0,
            ..Default::default()
        };
        let y = convolutive_distortion(&x, &p, 5).unwrap();
        assert_eq!(y.len(), x.len());
        for (a, b) in y.samples().iter().zip(x.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn notch_filter_is_deterministic_and_notches() {
        let x = speechlike();
        let p = NotchParams::default();
        let a = convolutive_distortion(&x, &p, 42).unwrap();
        assert_eq!(a, convolutive_distortion(&x, &p, 42).unwrap());
        assert_ne!(a, convolutive_distortion(&x, &p, 43).unwrap());
        assert_eq!(a.len(), x.len());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = notch_fir(&p, 8000, &mut rng);
        assert_eq!(h.len(), 129);
        for i in 0..64 {
            assert!((h[i] - h[128 - i]).abs() < 1e-12, "linear phase");
        }
    }

    #[test]
    fn impulse_count_concentrates() {
        let n = impulse_positions(100 * 8000, 8000, 10.0, 77).len();
        assert!((900..=1100).contains(&n), "{n}");
        assert!(impulse_positions(8000, 8000, 0.0, 1).is_empty());
    }

    #[test]
    fn impulsive_identity_and_determinism() {
        let x = speechlike();
        assert_eq!(impulsive_noise(&x, 0.0, 1.0, 4).unwrap(), x);
        let a = impulsive_noise(&x, 50.0, 2.0, 4).unwrap();
        assert_eq!(a, impulsive_noise(&x, 50.0, 2.0, 4).unwrap());
        assert_ne!(a, x);
    }

    #[test]
    fn augment_spec_parses_and_dispatches() {
        let spec: AugmentSpec =
            serde_json::from_str(r#"{"kind":"volume","min_db":-6,"max_db":6,"seed":3}"#).unwrap();
        let x = speechlike();
        let y = augment(&x, &spec).unwrap();
        assert_eq!(y, augment(&x, &spec).unwrap());
        let ratio = y.peak() / x.peak();
        assert!((0.5..=2.0).contains(&ratio));
        let codec: AugmentSpec =
            serde_json::from_str(r#"{"kind":"codec","codec":"alaw","seed":0}"#).unwrap();
        assert_eq!(augment(&x, &codec).unwrap().len(), x.len());
    }
}
