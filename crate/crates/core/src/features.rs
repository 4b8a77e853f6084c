//! Log-mel spectrogram front end.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::seed::sha256_hex;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("mel filter {0} has no FFT bins; reduce n_mels or raise n_fft")]
    EmptyFilter(usize),
    #[error("too short for features: {samples} samples < window {window}")]
    TooShort { samples: usize, window: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub n_mels: usize,
    pub win_s: f64,
    pub hop_s: f64,
    pub n_fft: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Floor applied to mel power before the natural log.
    pub log_floor: f64,
    /// Per-utterance mean/variance normalization of every mel band.
    pub normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_mels: 64,
            win_s: 0.025,
            hop_s: 0.010,
            n_fft: 256,
            fmin_hz: 20.0,
            fmax_hz: 3800.0,
            log_floor: 1e-10,
            normalize: false,
        }
    }
}

impl FeatureConfig {
    pub fn win_samples(&self, sample_rate_hz: u32) -> usize {
        (self.win_s * sample_rate_hz as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate_hz: u32) -> usize {
        (self.hop_s * sample_rate_hz as f64).round() as usize
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.to_string()));
        if self.n_mels == 0 {
            return bad("n_mels must be >= 1");
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz) {
            return bad("need 0 <= fmin < fmax");
        }
        if self.fmax_hz > sample_rate_hz as f64 / 2.0 {
            return bad("fmax above Nyquist");
        }
        let win = self.win_samples(sample_rate_hz);
        if win == 0 || self.hop_samples(sample_rate_hz) == 0 {
            return bad("window and hop must span at least one sample");
        }
        if self.n_fft < win {
            return bad("n_fft smaller than window");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, used to tag feature dumps.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters, `n_mels x (n_fft / 2 + 1)`, with unit peaks and
/// centres equally spaced in mel between `fmin_hz` and `fmax_hz`.
pub fn mel_filterbank(cfg: &FeatureConfig, sample_rate_hz: u32) -> Result<Array2<f64>, FeatureError> {
    cfg.validate(sample_rate_hz)?;
    let n_bins = cfg.n_fft / 2 + 1;
    let (mlo, mhi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate_hz as f64 / cfg.n_fft as f64;
    let mut fb = Array2::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c));
            if w > 0.0 {
                fb[[m, k]] = w;
            }
        }
        if fb.row(m).sum() <= 0.0 {
            return Err(FeatureError::EmptyFilter(m));
        }
    }
    Ok(fb)
}

/// Frames x mel-band matrix of natural-log mel power.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub values: Array2<f64>,
    pub frame_hop_s: f64,
}

impl LogMelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed power spectra through the mel filterbank, then `ln(max(p, floor))`.
///
/// Frame count is `1 + (N - win) / hop`. With `normalize` set, each band is
/// standardized over time, so the floor bound no longer applies.
pub fn log_mel(clip: &AudioClip, cfg: &FeatureConfig) -> Result<LogMelSpectrogram, FeatureError> {
    let sr = clip.sample_rate_hz();
    let fb = mel_filterbank(cfg, sr)?;
    let win = cfg.win_samples(sr);
    let hop = cfg.hop_samples(sr);
    let x = clip.samples();
    if x.len() < win {
        return Err(FeatureError::TooShort {
            samples: x.len(),
            window: win,
        });
    }
    let n_frames = 1 + (x.len() - win) / hop;
    let n_bins = cfg.n_fft / 2 + 1;
    let window = hann(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut power = Array2::<f64>::zeros((n_frames, n_bins));
    for t in 0..n_frames {
        let frame = &x[t * hop..t * hop + win];
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(if i < win { frame[i] * window[i] } else { 0.0 }, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..n_bins {
            power[[t, k]] = buf[k].norm_sqr();
        }
    }
    let mut values = power.dot(&fb.t());
    values.mapv_inplace(|p| p.max(cfg.log_floor).ln());
    if cfg.normalize {
        for mut col in values.columns_mut() {
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = (var + 1e-10).sqrt();
            col.mapv_inplace(|v| (v - mean) / sd);
        }
    }
    Ok(LogMelSpectrogram {
        values,
        frame_hop_s: hop as f64 / sr as f64,
    })
}

/// Sidecar describing a raw feature dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDumpInfo {
    pub frames: usize,
    pub n_mels: usize,
    pub dtype: String,
    pub layout: String,
    pub frame_hop_s: f64,
    pub config_hash: String,
}

/// Writes `values` as little-endian f32, row-major, to `path` and a one-line
/// JSON sidecar to `<path>.json`.
pub fn write_feature_dump(
    spec: &LogMelSpectrogram,
    cfg: &FeatureConfig,
    path: impl AsRef<Path>,
) -> Result<FeatureDumpInfo, FeatureError> {
    let path = path.as_ref();
    let mut blob = Vec::with_capacity(spec.values.len() * 4);
    for v in spec.values.iter() {
        blob.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, blob)?;
    let info = FeatureDumpInfo {
        frames: spec.n_frames(),
        n_mels: spec.n_mels(),
        dtype: "f32le".into(),
        layout: "row-major".into(),
        frame_hop_s: spec.frame_hop_s,
        config_hash: cfg.hash(),
    };
    let mut side = std::fs::File::create(sidecar_path(path))?;
    writeln!(side, "{}", serde_json::to_string(&info).expect("info serializes"))?;
    Ok(info)
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
