//! Manifests, protocol filters, net-speech segmentation and pooled test sets.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::vad::{gather_slots, hops_for};
use crate::audio::{AudioClip, VadMask};
use crate::seed::derive_seed;

/// Segments with less net speech than this are discarded at test time.
pub const MIN_NET_SPEECH_S: f64 = 0.5;
/// Per-class, per-dataset sample size of the pooled test set.
pub const POOL_PER_CLASS: usize = 3000;
/// Net speech per segment when long recordings are cut up.
pub const SEGMENT_NET_SPEECH_S: f64 = 20.0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate utt_id {0:?}")]
    DuplicateId(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("insufficient {label} in {dataset}: have {have}, need {need}")]
    Insufficient {
        dataset: String,
        label: Label,
        have: usize,
        need: usize,
    },
    #[error("invalid pool spec: {0}")]
    InvalidSpec(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Bonafide, Label::Spoof];

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Presentation {
    #[default]
    Raw,
    Injected,
    Played,
}

/// One line of a manifest. Fields not modelled here are kept in `extra` and
/// written back after the known fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub path: String,
    pub label: Label,
    pub dataset: String,
    #[serde(default)]
    pub attack_id: Option<String>,
    #[serde(default)]
    pub presentation: Presentation,
    #[serde(default)]
    pub net_speech_s: f64,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl ManifestEntry {
    pub fn new(utt_id: &str, path: &str, label: Label, dataset: &str) -> Self {
        Self {
            utt_id: utt_id.to_string(),
            path: path.to_string(),
            label,
            dataset: dataset.to_string(),
            attack_id: None,
            presentation: Presentation::Raw,
            net_speech_s: 0.0,
            extra: serde_json::Map::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Builds a manifest, rejecting repeated ids.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.utt_id.as_str()) {
                return Err(CorpusError::DuplicateId(e.utt_id.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, dataset: &str, label: Label) -> usize {
        self.entries
            .iter()
            .filter(|e| e.dataset == dataset && e.label == label)
            .count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, CorpusError> {
        Self::from_reader(text.as_bytes())
    }

    fn from_reader(reader: impl std::io::Read) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry =
                serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if !(entry.net_speech_s >= 0.0) {
                return Err(CorpusError::Malformed {
                    line: i + 1,
                    message: "net_speech_s must be >= 0".into(),
                });
            }
            entries.push(entry);
        }
        Self::new(entries)
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest, CorpusError> {
    Manifest::from_reader(std::fs::File::open(path)?)
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(manifest.to_jsonl().as_bytes())?;
    Ok(())
}

/// Keeps entries with `net_speech_s >= min_s`, in order.
pub fn filter_min_net_speech(manifest: &Manifest, min_s: f64) -> Manifest {
    Manifest {
        entries: manifest
            .entries
            .iter()
            .filter(|e| e.net_speech_s >= min_s)
            .cloned()
            .collect(),
    }
}

/// Cuts the speech of a clip into consecutive segments of `target_s` net
/// speech. A shorter final remainder is kept when it holds at least `min_s`.
/// Segments are speech-only (silent hops removed).
pub fn segment_by_net_speech(
    clip: &AudioClip,
    mask: &VadMask,
    target_s: f64,
    min_s: f64,
) -> Vec<AudioClip> {
    assert!(target_s > 0.0, "segment length must be positive");
    let per_segment = hops_for(target_s, mask.hop_s).max(1);
    let slots: Vec<usize> = mask
        .flags
        .iter()
        .enumerate()
        .filter_map(|(i, &f)| f.then_some(i))
        .collect();
    slots
        .chunks(per_segment)
        .filter(|chunk| {
            chunk.len() == per_segment || chunk.len() as f64 * mask.hop_s >= min_s - 1e-12
        })
        .map(|chunk| gather_slots(clip, mask.hop_samples, chunk.iter().copied()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub per_class_per_dataset: usize,
    pub seed: u64,
    pub min_net_speech_s: f64,
}

impl Default for PoolSpec {
    fn default() -> Self {
        Self {
            per_class_per_dataset: POOL_PER_CLASS,
            seed: 0,
            min_net_speech_s: MIN_NET_SPEECH_S,
        }
    }
}

/// Samples `per_class_per_dataset` entries of each class from every dataset.
///
/// Sampling order: after the net-speech filter, each (dataset, class) group is
/// sorted by `utt_id`, shuffled with a ChaCha8 generator seeded from
/// `derive_seed(seed, "pool/<dataset>/<label>")`, and the prefix is taken.
/// The pool is returned sorted by `utt_id`.
pub fn build_pool(manifests: &[Manifest], spec: &PoolSpec) -> Result<Manifest, CorpusError> {
    if spec.per_class_per_dataset == 0 {
        return Err(CorpusError::InvalidSpec("per_class_per_dataset must be >= 1"));
    }
    if !(spec.min_net_speech_s >= 0.0) {
        return Err(CorpusError::InvalidSpec("min_net_speech_s must be >= 0"));
    }
    let mut seen = HashSet::new();
    let mut groups: BTreeMap<&str, BTreeMap<Label, Vec<&ManifestEntry>>> = BTreeMap::new();
    for e in manifests.iter().flat_map(|m| &m.entries) {
        if !seen.insert(e.utt_id.as_str()) {
            return Err(CorpusError::DuplicateId(e.utt_id.clone()));
        }
        let by_label = groups.entry(e.dataset.as_str()).or_default();
        if e.net_speech_s >= spec.min_net_speech_s {
            by_label.entry(e.label).or_default().push(e);
        }
    }
    let need = spec.per_class_per_dataset;
    let mut pool = Vec::with_capacity(groups.len() * 2 * need);
    for (dataset, by_label) in &mut groups {
        for label in Label::ALL {
            let group = by_label.entry(label).or_default();
            if group.len() < need {
                return Err(CorpusError::Insufficient {
                    dataset: dataset.to_string(),
                    label,
                    have: group.len(),
                    need,
                });
            }
            group.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
            let key = format!("pool/{dataset}/{label}");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &key));
            group.shuffle(&mut rng);
            pool.extend(group[..need].iter().map(|e| (*e).clone()));
        }
    }
    pool.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    Ok(Manifest { entries: pool })
}
