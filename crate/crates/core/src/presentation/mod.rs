//! Presentation-channel simulation: how raw audio reaches a phone call by
//! injection or loudspeaker playback, then crosses a narrowband telephony
//! link. Also hosts the waveform augmentations used for training.

mod augment;
mod codec;
mod filters;

pub use augment::{
    add_colored_noise, apply_gain, augment, convolutive_distortion, impulse_positions,
    impulsive_noise, soft_clip, AugmentKind, AugmentSpec, NotchParams,
};
pub use codec::{
    alaw_to_linear, codec_roundtrip, linear_to_alaw, linear_to_ulaw, ulaw_to_linear, Codec,
};
pub use filters::{bandpass_telephony, convolve_ir, Biquad, TELEPHONY_HIGH_HZ, TELEPHONY_LOW_HZ};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioClip, CANONICAL_RATE_HZ};

#[derive(Debug, Error)]
pub enum PresentError {
    #[error("sample rate mismatch: expected {expected} Hz, got {got} Hz")]
    RateMismatch { expected: u32, got: u32 },
    #[error("impulse response is empty")]
    EmptyIr,
    #[error("playback path requires an impulse response")]
    MissingIr,
    #[error("input is silent (zero power)")]
    SilentInput,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPath {
    /// Bluetooth-style digital injection: the codec is the only impairment.
    #[default]
    InjectionDigital,
    /// Wired analog injection: level mismatch saturates the input stage.
    InjectionAnalog,
    /// Loudspeaker into a handset microphone.
    Playback,
}

impl ChannelPath {
    pub fn default_bandpass(self) -> bool {
        !matches!(self, ChannelPath::InjectionDigital)
    }
}

/// A fixed value or a `[lo, hi]` range sampled uniformly from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamRange {
    Fixed(f64),
    Range([f64; 2]),
}

impl Default for ParamRange {
    fn default() -> Self {
        ParamRange::Fixed(0.0)
    }
}

impl ParamRange {
    fn validate(&self, what: &str) -> Result<(), PresentError> {
        let ok = match *self {
            ParamRange::Fixed(v) => v.is_finite(),
            ParamRange::Range([lo, hi]) => lo.is_finite() && hi.is_finite() && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(PresentError::InvalidParameter(format!("{what}: {self:?}")))
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            ParamRange::Fixed(v) => v,
            ParamRange::Range([lo, hi]) => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

pub const DEFAULT_CLIP_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub path: ChannelPath,
    pub ir: Option<AudioClip>,
    pub codec: Codec,
    pub bandpass: bool,
    pub gain_db: ParamRange,
    pub noise_snr_db: Option<ParamRange>,
    pub clip_threshold: f64,
}

impl ChannelConfig {
    pub fn new(path: ChannelPath) -> Self {
        Self {
            path,
            ir: None,
            codec: Codec::default(),
            bandpass: path.default_bandpass(),
            gain_db: ParamRange::default(),
            noise_snr_db: None,
            clip_threshold: DEFAULT_CLIP_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<(), PresentError> {
        self.gain_db.validate("gain_db")?;
        if let Some(snr) = &self.noise_snr_db {
            snr.validate("noise_snr_db")?;
        }
        if !(self.clip_threshold > 0.0 && self.clip_threshold <= 1.0) {
            return Err(PresentError::InvalidParameter(format!(
                "clip_threshold {} outside (0, 1]",
                self.clip_threshold
            )));
        }
        if let Some(ir) = &self.ir {
            if ir.is_empty() {
                return Err(PresentError::EmptyIr);
            }
        }
        Ok(())
    }
}

/// Runs the path pipeline. Random draws come from one ChaCha8 stream seeded
/// with `seed`, in the order gain, noise SNR, noise seed.
///
/// - playback: gain, IR, bandpass, codec, noise
/// - analog injection: gain, soft clip, noise, bandpass, codec
/// - digital injection: gain, codec
pub fn present(clip: &AudioClip, cfg: &ChannelConfig, seed: u64) -> Result<AudioClip, PresentError> {
    if clip.sample_rate_hz() != CANONICAL_RATE_HZ {
        return Err(PresentError::RateMismatch {
            expected: CANONICAL_RATE_HZ,
            got: clip.sample_rate_hz(),
        });
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = cfg.gain_db.draw(&mut rng);
    let snr = cfg.noise_snr_db.map(|r| r.draw(&mut rng));
    let noise_seed: u64 = rng.random();
    let noise = |x: AudioClip| match snr {
        Some(s) => add_colored_noise(&x, s, noise_seed),
        None => Ok(x),
    };
    let band = |x: AudioClip| {
        if cfg.bandpass {
            bandpass_telephony(&x)
        } else {
            Ok(x)
        }
    };

    let x = apply_gain(clip, gain);
    match cfg.path {
        ChannelPath::Playback => {
            let ir = cfg.ir.as_ref().ok_or(PresentError::MissingIr)?;
            let x = convolve_ir(&x, ir)?;
            let x = band(x)?;
            let x = codec_roundtrip(&x, cfg.codec)?;
            noise(x)
        }
        ChannelPath::InjectionAnalog => {
            let x = soft_clip(&x, cfg.clip_threshold)?;
            let x = noise(x)?;
            let x = band(x)?;
            codec_roundtrip(&x, cfg.codec)
        }
        ChannelPath::InjectionDigital => {
            let x = band(x)?;
            codec_roundtrip(&x, cfg.codec)
        }
    }
}

/// One line of a batch presentation job file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresentJob {
    pub input: String,
    pub output: String,
    #[serde(default)]
    pub path: ChannelPath,
    #[serde(default)]
    pub codec: Codec,
    #[serde(default)]
    pub gain_db: ParamRange,
    #[serde(default)]
    pub snr_db: Option<ParamRange>,
    /// Mono WAV impulse response.
    #[serde(default)]
    pub ir: Option<String>,
    /// Overrides the seed derived from the run seed and `utt_id`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub utt_id: Option<String>,
    #[serde(default)]
    pub bandpass: Option<bool>,
    #[serde(default)]
    pub clip_threshold: Option<f64>,
}

impl PresentJob {
    /// Key for per-job seeding; falls back to the output path.
    pub fn key(&self) -> &str {
        self.utt_id.as_deref().unwrap_or(&self.output)
    }

    pub fn channel_config(&self, ir: Option<AudioClip>) -> ChannelConfig {
        ChannelConfig {
            path: self.path,
            ir,
            codec: self.codec,
            bandpass: self.bandpass.unwrap_or(self.path.default_bandpass()),
            gain_db: self.gain_db,
            noise_snr_db: self.snr_db,
            clip_threshold: self.clip_threshold.unwrap_or(DEFAULT_CLIP_THRESHOLD),
        }
    }
}
