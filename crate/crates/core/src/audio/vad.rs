use serde::{Deserialize, Serialize};

use super::{AudioClip, AudioError};

/// Energy VAD settings.
///
/// A frame is speech when its log-energy exceeds
/// `max(noise_floor + energy_margin_db, abs_floor_db)`. The noise floor is the
/// 10th percentile of the energies of frames above `abs_floor_db`, capped at
/// `max_noise_floor_db` so that stationary loud signals still count as speech.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VadConfig {
    pub frame_len_s: f64,
    pub hop_s: f64,
    pub energy_margin_db: f64,
    pub abs_floor_db: f64,
    pub max_noise_floor_db: f64,
    pub hangover_frames: usize,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_len_s: 0.025,
            hop_s: 0.010,
            energy_margin_db: 12.0,
            abs_floor_db: -55.0,
            max_noise_floor_db: -40.0,
            hangover_frames: 5,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<(), AudioError> {
        if !(self.hop_s > 0.0) {
            return Err(AudioError::InvalidVadConfig("hop_s must be positive"));
        }
        if !(self.frame_len_s >= self.hop_s) {
            return Err(AudioError::InvalidVadConfig("frame_len_s must be >= hop_s"));
        }
        if !self.energy_margin_db.is_finite()
            || !self.abs_floor_db.is_finite()
            || !self.max_noise_floor_db.is_finite()
        {
            return Err(AudioError::InvalidVadConfig("thresholds must be finite"));
        }
        Ok(())
    }
}

/// Per-hop speech flags. Flag `i` owns samples `[i * hop, (i + 1) * hop)` of
/// the analysed clip; its energy is measured over a window centred on that slot.
#[derive(Debug, Clone, PartialEq)]
pub struct VadMask {
    pub flags: Vec<bool>,
    pub hop_s: f64,
    pub hop_samples: usize,
}

impl VadMask {
    pub fn empty(hop_s: f64, hop_samples: usize) -> Self {
        Self {
            flags: Vec::new(),
            hop_s,
            hop_samples,
        }
    }

    pub fn speech_frames(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    fn speech_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
    }
}

fn frame_energy_db(x: &[f64], start: i64, win: usize) -> f64 {
    let lo = start.max(0) as usize;
    let hi = ((start + win as i64).max(0) as usize).min(x.len());
    let sum: f64 = if lo < hi {
        x[lo..hi].iter().map(|s| s * s).sum()
    } else {
        0.0
    };
    10.0 * (sum / win as f64 + 1e-12).log10()
}

/// Runs the energy VAD. Clips shorter than one analysis frame give an empty mask.
pub fn detect_voice(clip: &AudioClip, cfg: &VadConfig) -> Result<VadMask, AudioError> {
    cfg.validate()?;
    let sr = clip.sample_rate_hz() as f64;
    let hop = ((cfg.hop_s * sr).round() as usize).max(1);
    let win = ((cfg.frame_len_s * sr).round() as usize).max(hop);
    let x = clip.samples();
    if x.len() < win {
        return Ok(VadMask::empty(cfg.hop_s, hop));
    }
    let n_frames = x.len().div_ceil(hop);
    let offset = hop as i64 / 2 - win as i64 / 2;
    let energies: Vec<f64> = (0..n_frames)
        .map(|i| frame_energy_db(x, (i * hop) as i64 + offset, win))
        .collect();

    let mut audible: Vec<f64> = energies
        .iter()
        .copied()
        .filter(|&e| e > cfg.abs_floor_db)
        .collect();
    if audible.is_empty() {
        return Ok(VadMask {
            flags: vec![false; n_frames],
            hop_s: cfg.hop_s,
            hop_samples: hop,
        });
    }
    audible.sort_by(f64::total_cmp);
    let p10 = audible[(audible.len() - 1) / 10];
    let floor = p10.min(cfg.max_noise_floor_db);
    let threshold = (floor + cfg.energy_margin_db).max(cfg.abs_floor_db);

    let raw: Vec<bool> = energies.iter().map(|&e| e > threshold).collect();
    let mut flags = raw.clone();
    if cfg.hangover_frames > 0 {
        for i in 0..n_frames {
            // end of a run: extend forward
            if raw[i] && (i + 1 == n_frames || !raw[i + 1]) {
                let end = (i + cfg.hangover_frames).min(n_frames - 1);
                flags[i + 1..=end].iter_mut().for_each(|f| *f = true);
            }
        }
    }
    Ok(VadMask {
        flags,
        hop_s: cfg.hop_s,
        hop_samples: hop,
    })
}

pub fn net_speech_seconds(mask: &VadMask) -> f64 {
    mask.speech_frames() as f64 * mask.hop_s
}

pub(crate) fn gather_slots(
    clip: &AudioClip,
    hop: usize,
    slots: impl Iterator<Item = usize>,
) -> AudioClip {
    let x = clip.samples();
    let mut out = Vec::new();
    for i in slots {
        let lo = i * hop;
        if lo >= x.len() {
            break;
        }
        out.extend_from_slice(&x[lo..(lo + hop).min(x.len())]);
    }
    AudioClip::from_finite(out, clip.sample_rate_hz())
}

/// Concatenates the speech-flagged hops of `clip`, in order.
pub fn trim_nonspeech(clip: &AudioClip, mask: &VadMask) -> AudioClip {
    gather_slots(clip, mask.hop_samples, mask.speech_slots())
}

/// Number of speech hops needed to reach `seconds` of net speech.
pub(crate) fn hops_for(seconds: f64, hop_s: f64) -> usize {
    ((seconds / hop_s) - 1e-9).ceil().max(0.0) as usize
}

/// Speech of the shortest prefix of `clip` holding at least `k_s` seconds of
/// flagged speech, with silences removed. Saturates at the whole trimmed clip.
pub fn net_speech_prefix(clip: &AudioClip, mask: &VadMask, k_s: f64) -> AudioClip {
    let needed = hops_for(k_s, mask.hop_s);
    gather_slots(clip, mask.hop_samples, mask.speech_slots().take(needed))
}
