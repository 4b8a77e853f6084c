//! WebAssembly bindings for the demo page in `www/`. Each export returns JSON
//! text, so the page needs no generated types, and the same functions run
//! natively under `cargo test`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use spoofbench_core::audio::{detect_voice, net_speech_seconds, AudioClip, VadConfig, CANONICAL_RATE_HZ};
use spoofbench_core::corpus::Label;
use spoofbench_core::eval::{det_curve, pooled_eval, TrialScore};
use spoofbench_core::features::{log_mel, FeatureConfig, LogMelSpectrogram};
use spoofbench_core::presentation::{present, ChannelConfig, ChannelPath, Codec, ParamRange};
use wasm_bindgen::prelude::*;

const SR: u32 = CANONICAL_RATE_HZ;
const MAX_DET_POINTS: usize = 400;

fn parse<T: serde::de::DeserializeOwned>(what: &str, name: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(name.to_string())).map_err(|_| format!("unknown {what} {name:?}"))
}

/// Two seconds of a gliding harmonic tone with syllable-like gaps and mains hum.
fn demo_utterance() -> AudioClip {
    let n = 2 * SR as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            let env = (std::f64::consts::PI * t * 3.0).sin().abs().powf(0.6);
            // pitch glides as 140 + 60 sin(2 pi 0.7 t) Hz
            let w = 2.0 * std::f64::consts::PI * 0.7;
            let phase = 2.0 * std::f64::consts::PI * (140.0 * t - 60.0 / w * ((w * t).cos() - 1.0));
            let voiced: f64 = (1..=12).map(|h| (h as f64 * phase).sin() / h as f64).sum();
            0.25 * env * voiced + 0.05 * (2.0 * std::f64::consts::PI * 60.0 * t).sin()
        })
        .collect();
    AudioClip::new(samples, SR).expect("finite samples")
}

fn room_ir(seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let len = SR as usize / 10;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| (-(i as f64) / (0.02 * SR as f64)).exp() * rng.random_range(-1.0..1.0))
        .collect();
    taps[0] = 1.0;
    AudioClip::new(taps, SR).expect("finite taps")
}

fn mel_rows(m: &LogMelSpectrogram) -> Vec<f32> {
    m.values.iter().map(|&v| v as f32).collect()
}

fn channel_json(path: &str, codec: &str, gain_db: f64, snr_db: f64, seed: u32) -> Result<Value, String> {
    let path: ChannelPath = parse("path", path)?;
    let codec: Codec = parse("codec", codec)?;
    let clip = demo_utterance();
    let mut cfg = ChannelConfig::new(path);
    cfg.codec = codec;
    cfg.gain_db = ParamRange::Fixed(gain_db);
    cfg.noise_snr_db = snr_db.is_finite().then_some(ParamRange::Fixed(snr_db));
    if path == ChannelPath::Playback {
        cfg.ir = Some(room_ir(seed as u64));
    }
    let out = present(&clip, &cfg, seed as u64).map_err(|e| e.to_string())?;
    let feat = FeatureConfig::default();
    let a = log_mel(&clip, &feat).map_err(|e| e.to_string())?;
    let b = log_mel(&out, &feat).map_err(|e| e.to_string())?;
    Ok(json!({
        "frames": a.n_frames().min(b.n_frames()),
        "n_mels": a.n_mels(),
        "input": mel_rows(&a),
        "output": mel_rows(&b),
        "input_rms": clip.rms(),
        "output_rms": out.rms(),
    }))
}

/// Log-mel spectrograms of a synthetic utterance before and after a
/// presentation channel. `snr_db` of `NaN` disables additive noise.
#[wasm_bindgen]
pub fn channel_demo(path: &str, codec: &str, gain_db: f64, snr_db: f64, seed: u32) -> Result<String, String> {
    channel_json(path, codec, gain_db, snr_db, seed).map(|v| v.to_string())
}

fn gaussian_trials(separation: f64, n_bonafide: usize, n_spoof: usize, seed: u32) -> Vec<TrialScore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let bona = Normal::new(0.0, 1.0).expect("unit normal");
    let spoof = Normal::new(separation, 1.0).expect("unit normal");
    let mut trials: Vec<TrialScore> = (0..n_bonafide)
        .map(|i| TrialScore::new(&format!("b{i}"), "demo", Label::Bonafide, bona.sample(&mut rng)))
        .collect();
    trials.extend((0..n_spoof).map(|i| TrialScore::new(&format!("s{i}"), "demo", Label::Spoof, spoof.sample(&mut rng))));
    trials
}

fn det_json(separation: f64, n_bonafide: usize, n_spoof: usize, far_target: f64, seed: u32) -> Result<Value, String> {
    let trials = gaussian_trials(separation, n_bonafide, n_spoof, seed);
    let report = pooled_eval(&trials, far_target).map_err(|e| e.to_string())?;
    let curve = det_curve(&trials).map_err(|e| e.to_string())?;
    let step = curve.points.len().div_ceil(MAX_DET_POINTS).max(1);
    let mut points: Vec<[f64; 2]> = curve.points.iter().step_by(step).map(|p| [p.far, p.mdr]).collect();
    if let Some(last) = curve.points.last() {
        points.push([last.far, last.mdr]);
    }
    Ok(json!({ "report": report, "points": points }))
}

/// EER, MDR at the target FAR and a thinned DET curve for two Gaussian score
/// classes `separation` standard deviations apart.
#[wasm_bindgen]
pub fn det_demo(separation: f64, n_bonafide: usize, n_spoof: usize, far_target: f64, seed: u32) -> Result<String, String> {
    det_json(separation, n_bonafide, n_spoof, far_target, seed).map(|v| v.to_string())
}

fn vad_json(speech_s: f64, noise_db: f64, margin_db: f64, hangover_frames: usize, seed: u32) -> Result<Value, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let noise_amp = 10f64.powf(noise_db / 20.0);
    let gap = SR as usize / 2;
    let burst = (0.4 * SR as f64) as usize;
    let mut samples = vec![0.0; gap];
    let mut left = (speech_s * SR as f64) as usize;
    while left > 0 {
        let n = left.min(burst);
        let f = rng.random_range(200.0..900.0);
        samples.extend((0..n).map(|i| 0.3 * (2.0 * std::f64::consts::PI * f * i as f64 / SR as f64).sin()));
        samples.extend(std::iter::repeat_n(0.0, gap / 2 + rng.random_range(0..gap)));
        left -= n;
    }
    for s in &mut samples {
        *s += noise_amp * rng.random_range(-1.0..1.0) * 3f64.sqrt();
    }
    let clip = AudioClip::new(samples, SR).map_err(|e| e.to_string())?;
    let cfg = VadConfig {
        energy_margin_db: margin_db,
        hangover_frames,
        ..VadConfig::default()
    };
    let mask = detect_voice(&clip, &cfg).map_err(|e| e.to_string())?;
    let energy_db: Vec<f64> = clip
        .samples()
        .chunks(mask.hop_samples)
        .map(|c| 10.0 * (c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64 + 1e-12).log10())
        .collect();
    Ok(json!({
        "hop_s": mask.hop_s,
        "duration_s": clip.duration_s(),
        "net_speech_s": net_speech_seconds(&mask),
        "flags": mask.flags,
        "energy_db": energy_db,
    }))
}

/// Tone bursts in white noise run through the energy VAD; returns the
/// per-hop energy, the speech mask and the net speech duration.
#[wasm_bindgen]
pub fn vad_demo(speech_s: f64, noise_db: f64, margin_db: f64, hangover_frames: usize, seed: u32) -> Result<String, String> {
    vad_json(speech_s, noise_db, margin_db, hangover_frames, seed).map(|v| v.to_string())
}
