#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spoofbench_core::audio::{sine, write_wav, AudioClip};
use spoofbench_core::corpus::{write_manifest, Label, Manifest, ManifestEntry};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spoofbench"));
    c.env_remove("SPOOFBENCH_CONFIG");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn spoofbench")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "spoofbench {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Tone bursts separated by silence until `speech_s` seconds of tone are in.
pub fn bursty_clip(speech_s: f64, freq_hz: f64, amp: f64) -> AudioClip {
    let mut parts = vec![AudioClip::silence(2000, 8000)];
    let mut left = speech_s;
    let mut k = 0;
    while left > 1e-9 {
        let d = left.min(1.0);
        parts.push(sine(freq_hz + 37.0 * (k % 5) as f64, amp, d, 8000));
        parts.push(AudioClip::silence(4000, 8000));
        left -= d;
        k += 1;
    }
    AudioClip::concat(&parts).unwrap()
}

pub struct ToyClip {
    pub utt_id: String,
    pub label: Label,
    pub dataset: String,
    pub path: PathBuf,
}

/// Writes `n` clips with `speech_s` seconds of tone each; labels alternate and
/// the spoof class uses a different pitch and level.
pub fn write_corpus(dir: &Path, prefix: &str, dataset: &str, n: usize, speech_s: f64) -> Vec<ToyClip> {
    std::fs::create_dir_all(dir).unwrap();
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Bonafide } else { Label::Spoof };
            let (f, a) = match label {
                Label::Bonafide => (300.0 + 11.0 * i as f64, 0.4),
                Label::Spoof => (900.0 + 13.0 * i as f64, 0.25),
            };
            let utt_id = format!("{prefix}{i:03}");
            let path = dir.join(format!("{utt_id}.wav"));
            write_wav(&path, &bursty_clip(speech_s, f, a)).unwrap();
            ToyClip { utt_id, label, dataset: dataset.to_string(), path }
        })
        .collect()
}

pub fn manifest_of(clips: &[ToyClip]) -> Manifest {
    Manifest::new(
        clips
            .iter()
            .map(|c| ManifestEntry::new(&c.utt_id, p(&c.path), c.label, &c.dataset))
            .collect(),
    )
    .unwrap()
}

pub fn write_manifest_of(clips: &[ToyClip], path: &Path) {
    write_manifest(&manifest_of(clips), path).unwrap();
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
