//! Mono audio buffers and the protocol primitives built on them: WAV I/O,
//! sample-rate conversion and energy-based voice activity detection.

mod resample;
pub(crate) mod vad;
mod wav;

pub use resample::resample;
pub use vad::{
    detect_voice, net_speech_prefix, net_speech_seconds, trim_nonspeech, VadConfig, VadMask,
};
pub use wav::{load_wav, to_pcm16, write_wav};

use thiserror::Error;

/// Canonical processing rate. Every model and channel stage runs at 8 kHz.
pub const CANONICAL_RATE_HZ: u32 = 8000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("multichannel unsupported ({0} channels)")]
    Multichannel(u16),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("malformed wav: {0}")]
    Malformed(String),
    #[error("invalid vad config: {0}")]
    InvalidVadConfig(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A mono sequence of finite samples at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Builds a clip from samples already known to be finite (internal DSP output).
    pub(crate) fn from_finite(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        debug_assert!(sample_rate_hz > 0);
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn silence(len: usize, sample_rate_hz: u32) -> Self {
        Self::from_finite(vec![0.0; len], sample_rate_hz.max(1))
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    /// Applies `f` to every sample. Non-finite results are replaced by zero.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|&s| {
                let y = f(s);
                if y.is_finite() {
                    y
                } else {
                    0.0
                }
            })
            .collect();
        Self::from_finite(samples, self.sample_rate_hz)
    }

    pub fn concat(parts: &[AudioClip]) -> Result<Self, AudioError> {
        let rate = parts.first().map_or(CANONICAL_RATE_HZ, |p| p.sample_rate_hz);
        if parts.iter().any(|p| p.sample_rate_hz != rate) {
            return Err(AudioError::Malformed("mixed sample rates in concat".into()));
        }
        let samples = parts.iter().flat_map(|p| p.samples.iter().copied()).collect();
        Ok(Self::from_finite(samples, rate))
    }
}

/// Sine tone generator used by tests, examples and the demo.
pub fn sine(freq_hz: f64, amplitude: f64, duration_s: f64, sample_rate_hz: u32) -> AudioClip {
    let n = (duration_s * sample_rate_hz as f64).round() as usize;
    let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate_hz as f64;
    AudioClip::from_finite(
        (0..n).map(|i| amplitude * (w * i as f64).sin()).collect(),
        sample_rate_hz.max(1),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan_and_zero_rate() {
        assert!(matches!(
            AudioClip::new(vec![0.0, f64::NAN], 8000),
            Err(AudioError::NonFinite(1))
        ));
        assert!(matches!(
            AudioClip::new(vec![], 0),
            Err(AudioError::ZeroSampleRate)
        ));
        assert!(AudioClip::new(vec![], 8000).unwrap().is_empty());
    }

    #[test]
    fn sine_has_expected_power() {
        let s = sine(1000.0, 1.0, 1.0, 8000);
        assert_eq!(s.len(), 8000);
        assert!((s.power() - 0.5).abs() < 1e-9);
    }
}
