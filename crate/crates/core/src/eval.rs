//! Scoring protocol: EER, missed detection rate at a target false alarm rate,
//! pooled and per-dataset evaluation, checkpoint averaging and DET curves.
//!
//! Conventions: scores are higher for spoof. At threshold `t` a bonafide trial
//! with `score >= t` is a false alarm and a spoof trial with `score < t` is a
//! miss. Operating points are taken at every distinct score value plus one
//! point above the maximum, so ties move together as a single step.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

/// Target false alarm rate for the headline missed-detection figure (1 %).
pub const DEFAULT_FAR_TARGET: f64 = 0.01;
/// Net-speech decision checkpoints, in seconds.
pub const DEFAULT_CHECKPOINTS_S: [f64; 6] = [2.0, 3.0, 6.0, 9.0, 12.0, 15.0];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{context}: need at least one bonafide and one spoof trial")]
    SingleClass { context: String },
    #[error("non-finite score for {0}")]
    NonFinite(String),
    #[error("far_target must be in (0, 1], got {0}")]
    InvalidFarTarget(f64),
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error("trial {0} has no checkpoint_s")]
    MissingCheckpoint(String),
    #[error("checkpoint {0} s is not part of the protocol")]
    UnknownCheckpoint(f64),
    #[error("no trials")]
    Empty,
    #[error("score file: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub utt_id: String,
    pub dataset: String,
    pub label: Label,
    pub checkpoint_s: Option<f64>,
    pub score: f64,
}

impl TrialScore {
    pub fn new(utt_id: &str, dataset: &str, label: Label, score: f64) -> Self {
        Self {
            utt_id: utt_id.to_string(),
            dataset: dataset.to_string(),
            label,
            checkpoint_s: None,
            score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub mdr_at_far: f64,
    pub threshold_at_far: f64,
    pub far_target: f64,
    /// `100 * (1 - mdr_at_far)`.
    pub detection_rate: f64,
    pub n_spoof: usize,
    pub n_bonafide: usize,
}

/// Arithmetic mean of several reports (the "Average" row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub eer: f64,
    pub mdr_at_far: f64,
    pub detection_rate: f64,
    pub far_target: f64,
    pub n_reports: usize,
}

impl AverageRow {
    fn of<'a>(reports: impl Iterator<Item = &'a MetricReport>, far_target: f64) -> Self {
        let (mut eer, mut mdr, mut n) = (0.0, 0.0, 0usize);
        for r in reports {
            eer += r.eer;
            mdr += r.mdr_at_far;
            n += 1;
        }
        let (eer, mdr) = (eer / n as f64, mdr / n as f64);
        Self {
            eer,
            mdr_at_far: mdr,
            detection_rate: 100.0 * (1.0 - mdr),
            far_target,
            n_reports: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalProtocol {
    pub checkpoints_s: Vec<f64>,
    pub pooled: bool,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            checkpoints_s: DEFAULT_CHECKPOINTS_S.to_vec(),
            pooled: true,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.checkpoints_s.is_empty() {
            return Err(EvalError::InvalidProtocol("no checkpoints".into()));
        }
        if self.checkpoints_s.iter().any(|c| !(*c > 0.0)) {
            return Err(EvalError::InvalidProtocol("checkpoints must be positive".into()));
        }
        if self.checkpoints_s.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::InvalidProtocol(
                "checkpoints must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Empirical operating points over distinct thresholds.
struct Sweep {
    thresholds: Vec<f64>,
    far: Vec<f64>,
    mdr: Vec<f64>,
    /// Distinct sorted scores.
    values: Vec<f64>,
    n_bonafide: usize,
    n_spoof: usize,
}

fn half_step_below(values: &[f64]) -> f64 {
    if values.len() >= 2 {
        values[0] - (values[1] - values[0]) / 2.0
    } else {
        values[0] - 0.5
    }
}

fn half_step_above(values: &[f64]) -> f64 {
    let m = values.len();
    if m >= 2 {
        values[m - 1] + (values[m - 1] - values[m - 2]) / 2.0
    } else {
        values[m - 1] + 0.5
    }
}

impl Sweep {
    fn new(trials: &[TrialScore], context: &str) -> Result<Self, EvalError> {
        let mut pairs: Vec<(f64, Label)> = Vec::with_capacity(trials.len());
        for t in trials {
            if !t.score.is_finite() {
                return Err(EvalError::NonFinite(t.utt_id.clone()));
            }
            pairs.push((t.score, t.label));
        }
        let n_bonafide = pairs.iter().filter(|p| p.1 == Label::Bonafide).count();
        let n_spoof = pairs.len() - n_bonafide;
        if n_bonafide == 0 || n_spoof == 0 {
            return Err(EvalError::SingleClass {
                context: context.to_string(),
            });
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let (nb, ns) = (n_bonafide as f64, n_spoof as f64);
        let mut values = Vec::new();
        let mut far = Vec::new();
        let mut mdr = Vec::new();
        // counts of trials strictly below the current threshold
        let (mut bona_below, mut spoof_below) = (0usize, 0usize);
        let mut i = 0;
        while i < pairs.len() {
            let v = pairs[i].0;
            values.push(v);
            far.push((n_bonafide - bona_below) as f64 / nb);
            mdr.push(spoof_below as f64 / ns);
            while i < pairs.len() && pairs[i].0 == v {
                match pairs[i].1 {
                    Label::Bonafide => bona_below += 1,
                    Label::Spoof => spoof_below += 1,
                }
                i += 1;
            }
        }
        far.push(0.0);
        mdr.push(1.0);
        let mut thresholds = values.clone();
        thresholds.push(half_step_above(&values));
        Ok(Self {
            thresholds,
            far,
            mdr,
            values,
            n_bonafide,
            n_spoof,
        })
    }

    fn eer(&self) -> (f64, f64) {
        // far[0] = 1 > mdr[0] = 0 and far[last] = 0 < mdr[last] = 1
        let j = (1..self.far.len())
            .find(|&j| self.far[j] <= self.mdr[j])
            .expect("sweep ends with far 0 and mdr 1");
        interpolate_crossing(
            (self.thresholds[j - 1], self.far[j - 1], self.mdr[j - 1]),
            (self.thresholds[j], self.far[j], self.mdr[j]),
        )
    }

    fn mdr_at_far(&self, far_target: f64) -> (f64, f64) {
        let j = (0..self.far.len())
            .find(|&j| self.far[j] <= far_target)
            .expect("last operating point has far 0");
        let threshold = if j == 0 {
            half_step_below(&self.values)
        } else if j == self.values.len() {
            self.thresholds[j]
        } else {
            (self.values[j - 1] + self.values[j]) / 2.0
        };
        (self.mdr[j], threshold)
    }
}

/// Linear interpolation of the FAR/MDR crossing between two adjacent
/// operating points `(threshold, far, mdr)` where `far - mdr` changes from
/// positive to non-positive. Returns `(eer, threshold)`.
pub fn interpolate_crossing(a: (f64, f64, f64), b: (f64, f64, f64)) -> (f64, f64) {
    let da = a.1 - a.2;
    let db = b.1 - b.2;
    let t = if da - db == 0.0 { 1.0 } else { da / (da - db) };
    let eer = a.1 + t * (b.1 - a.1);
    (eer, a.0 + t * (b.0 - a.0))
}

/// Equal error rate and the interpolated threshold at which it occurs.
pub fn compute_eer(trials: &[TrialScore]) -> Result<(f64, f64), EvalError> {
    Ok(Sweep::new(trials, "eer")?.eer())
}

/// Missed detection rate at the lowest achievable threshold whose false alarm
/// rate does not exceed `far_target`. No interpolation.
pub fn compute_mdr_at_far(trials: &[TrialScore], far_target: f64) -> Result<(f64, f64), EvalError> {
    check_far(far_target)?;
    Ok(Sweep::new(trials, "mdr_at_far")?.mdr_at_far(far_target))
}

fn check_far(far_target: f64) -> Result<(), EvalError> {
    if far_target > 0.0 && far_target <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::InvalidFarTarget(far_target))
    }
}

fn report(trials: &[TrialScore], far_target: f64, context: &str) -> Result<MetricReport, EvalError> {
    check_far(far_target)?;
    let sweep = Sweep::new(trials, context)?;
    let (eer, eer_threshold) = sweep.eer();
    let (mdr, threshold_at_far) = sweep.mdr_at_far(far_target);
    Ok(MetricReport {
        eer,
        eer_threshold,
        mdr_at_far: mdr,
        threshold_at_far,
        far_target,
        detection_rate: 100.0 * (1.0 - mdr),
        n_spoof: sweep.n_spoof,
        n_bonafide: sweep.n_bonafide,
    })
}

/// Metrics on the union of all trials with a single threshold.
pub fn pooled_eval(trials: &[TrialScore], far_target: f64) -> Result<MetricReport, EvalError> {
    report(trials, far_target, "pooled")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBreakdown {
    pub datasets: BTreeMap<String, MetricReport>,
    pub average: AverageRow,
}

pub fn per_dataset_eval(trials: &[TrialScore], far_target: f64) -> Result<DatasetBreakdown, EvalError> {
    if trials.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut groups: BTreeMap<&str, Vec<TrialScore>> = BTreeMap::new();
    for t in trials {
        groups.entry(t.dataset.as_str()).or_default().push(t.clone());
    }
    let datasets = groups
        .into_iter()
        .map(|(name, ts)| Ok((name.to_string(), report(&ts, far_target, &format!("dataset {name}"))?)))
        .collect::<Result<BTreeMap<_, _>, EvalError>>()?;
    let average = AverageRow::of(datasets.values(), far_target);
    Ok(DatasetBreakdown { datasets, average })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetric {
    pub checkpoint_s: f64,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointBreakdown {
    pub checkpoints: Vec<CheckpointMetric>,
    pub average: AverageRow,
}

/// Per-checkpoint EER and MDR@FAR, then their arithmetic mean across
/// checkpoints. Checkpoints with no trials at all (every utterance shorter)
/// are left out of the mean.
pub fn checkpoint_eval(
    trials: &[TrialScore],
    protocol: &EvalProtocol,
    far_target: f64,
) -> Result<CheckpointBreakdown, EvalError> {
    protocol.validate()?;
    let mut groups: Vec<Vec<TrialScore>> = vec![Vec::new(); protocol.checkpoints_s.len()];
    for t in trials {
        let c = t
            .checkpoint_s
            .ok_or_else(|| EvalError::MissingCheckpoint(t.utt_id.clone()))?;
        let k = protocol
            .checkpoints_s
            .iter()
            .position(|&p| (p - c).abs() < 1e-9)
            .ok_or(EvalError::UnknownCheckpoint(c))?;
        groups[k].push(t.clone());
    }
    let checkpoints = protocol
        .checkpoints_s
        .iter()
        .zip(&groups)
        .filter(|(_, g)| !g.is_empty())
        .map(|(&c, g)| {
            Ok(CheckpointMetric {
                checkpoint_s: c,
                report: report(g, far_target, &format!("checkpoint {c} s"))?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    if checkpoints.is_empty() {
        return Err(EvalError::Empty);
    }
    let average = AverageRow::of(checkpoints.iter().map(|c| &c.report), far_target);
    Ok(CheckpointBreakdown {
        checkpoints,
        average,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub mdr: f64,
}

/// Operating points ordered by rising threshold: far non-increasing from 1,
/// mdr non-decreasing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

impl DetCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,far,mdr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.far, p.mdr));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let points = rdr
            .deserialize()
            .collect::<Result<Vec<DetPoint>, csv::Error>>()?;
        Ok(Self { points })
    }

    /// EER read off the staircase with the same interpolation as [`compute_eer`].
    pub fn eer(&self) -> Option<(f64, f64)> {
        let p = &self.points;
        (1..p.len()).find(|&j| p[j].far <= p[j].mdr).map(|j| {
            interpolate_crossing(
                (p[j - 1].threshold, p[j - 1].far, p[j - 1].mdr),
                (p[j].threshold, p[j].far, p[j].mdr),
            )
        })
    }
}

pub fn det_curve(trials: &[TrialScore]) -> Result<DetCurve, EvalError> {
    let sweep = Sweep::new(trials, "det")?;
    let points = (0..sweep.far.len())
        .map(|j| DetPoint {
            threshold: sweep.thresholds[j],
            far: sweep.far[j],
            mdr: sweep.mdr[j],
        })
        .collect();
    Ok(DetCurve { points })
}

pub const SCORE_HEADER: [&str; 5] = ["utt_id", "dataset", "label", "checkpoint_s", "score"];

/// Writes trials as CSV with header `utt_id,dataset,label,checkpoint_s,score`.
pub fn write_scores(trials: &[TrialScore], mut out: impl Write) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(SCORE_HEADER)?;
    for t in trials {
        w.write_record([
            t.utt_id.clone(),
            t.dataset.clone(),
            t.label.to_string(),
            t.checkpoint_s.map(|c| c.to_string()).unwrap_or_default(),
            t.score.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<TrialScore>, EvalError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != SCORE_HEADER {
        return Err(EvalError::InvalidProtocol(format!(
            "score header must be {}, got {}",
            SCORE_HEADER.join(","),
            header.join(",")
        )));
    }
    let trials = rdr
        .deserialize()
        .collect::<Result<Vec<TrialScore>, csv::Error>>()?;
    if let Some(t) = trials.iter().find(|t| !t.score.is_finite()) {
        return Err(EvalError::NonFinite(t.utt_id.clone()));
    }
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trials(bona: &[f64], spoof: &[f64]) -> Vec<TrialScore> {
        bona.iter()
            .enumerate()
            .map(|(i, &s)| TrialScore::new(&format!("b{i}"), "d", Label::Bonafide, s))
            .chain(
                spoof
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| TrialScore::new(&format!("s{i}"), "d", Label::Spoof, s)),
            )
            .collect()
    }

    #[test]
    fn perfect_and_inverted() {
        let t = trials(&[0.1, 0.2, 0.3], &[0.7, 0.8]);
        assert_eq!(compute_eer(&t).unwrap().0, 0.0);
        assert_eq!(compute_mdr_at_far(&t, 0.01).unwrap().0, 0.0);
        let inv = trials(&[0.7, 0.8], &[0.1, 0.2, 0.3]);
        assert_eq!(compute_eer(&inv).unwrap().0, 1.0);
    }

    #[test]
    fn small_worked_example() {
        // FAR/MDR steps: (1,0) (2/3,0) (2/3,1/3) (1/3,1/3) ... crossing at 1/3
        let t = trials(&[0.1, 0.4, 0.6], &[0.3, 0.7, 0.9]);
        let (eer, thr) = compute_eer(&t).unwrap();
        assert!((eer - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(thr, 0.6);
    }

    #[test]
    fn degenerate_far_target() {
        let t = trials(&[0.1, 0.5, 0.9], &[0.2, 0.6]);
        let (mdr, thr) = compute_mdr_at_far(&t, 1.0).unwrap();
        assert_eq!(mdr, 0.0);
        assert!(thr < 0.1);
        assert!(compute_mdr_at_far(&t, 0.0).is_err());
        assert!(compute_mdr_at_far(&t, 1.5).is_err());
    }

    #[test]
    fn single_class_errors() {
        let t = trials(&[0.1, 0.2], &[]);
        assert!(matches!(compute_eer(&t), Err(EvalError::SingleClass { .. })));
        assert!(det_curve(&t).is_err());
    }

    #[test]
    fn all_tied_scores() {
        let t = trials(&[0.0, 0.0], &[0.0, 0.0, 0.0]);
        let (eer, _) = compute_eer(&t).unwrap();
        assert!((eer - 0.5).abs() < 1e-12);
        let (mdr, _) = compute_mdr_at_far(&t, 0.01).unwrap();
        assert_eq!(mdr, 1.0);
    }

    #[test]
    fn per_dataset_average_and_pooled_counts() {
        let mut t = trials(&[0.1, 0.2], &[0.8, 0.9]);
        let mut other = trials(&[0.8, 0.9], &[0.1, 0.2]);
        other.iter_mut().for_each(|x| {
            x.dataset = "e".into();
            x.utt_id.push('e');
        });
        t.extend(other);
        let b = per_dataset_eval(&t, 0.01).unwrap();
        assert_eq!(b.datasets["d"].eer, 0.0);
        assert_eq!(b.datasets["e"].eer, 1.0);
        assert_eq!(b.average.eer, 0.5);
        let p = pooled_eval(&t, 0.01).unwrap();
        assert_eq!(p.n_spoof, 4);
        assert_eq!(p.n_bonafide, 4);
    }

    #[test]
    fn per_dataset_names_single_class_dataset() {
        let mut t = trials(&[0.1], &[0.9]);
        t.push(TrialScore::new("x", "lonely", Label::Spoof, 0.4));
        let err = per_dataset_eval(&t, 0.01).unwrap_err();
        assert!(err.to_string().contains("lonely"));
    }

    #[test]
    fn checkpoint_mean_of_two() {
        // checkpoint 2: mdr 0.1 (1 of 10 spoof below every bonafide)
        // checkpoint 3: mdr 0.3
        let mut all = Vec::new();
        for (c, misses) in [(2.0, 1usize), (3.0, 3usize)] {
            let spoof: Vec<f64> = (0..10).map(|i| if i < misses { -1.0 } else { 5.0 }).collect();
            let mut t = trials(&[0.0; 10], &spoof);
            t.iter_mut().for_each(|x| x.checkpoint_s = Some(c));
            all.extend(t);
        }
        let protocol = EvalProtocol {
            checkpoints_s: vec![2.0, 3.0],
            pooled: true,
        };
        let b = checkpoint_eval(&all, &protocol, 0.01).unwrap();
        assert!((b.checkpoints[0].report.mdr_at_far - 0.1).abs() < 1e-15);
        assert!((b.checkpoints[1].report.mdr_at_far - 0.3).abs() < 1e-15);
        assert!((b.average.mdr_at_far - 0.2).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_errors() {
        let t = trials(&[0.1], &[0.9]);
        assert!(matches!(
            checkpoint_eval(&t, &EvalProtocol::default(), 0.01),
            Err(EvalError::MissingCheckpoint(_))
        ));
        let bad = EvalProtocol {
            checkpoints_s: vec![3.0, 2.0],
            pooled: false,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn det_endpoints_and_csv() {
        let t = trials(&[0.1, 0.4, 0.6], &[0.3, 0.7, 0.9]);
        let d = det_curve(&t).unwrap();
        let first = d.points.first().unwrap();
        let last = d.points.last().unwrap();
        assert_eq!((first.far, first.mdr), (1.0, 0.0));
        assert_eq!((last.far, last.mdr), (0.0, 1.0));
        let csv = d.to_csv();
        assert!(csv.starts_with("threshold,far,mdr\n"));
        let back = DetCurve::from_csv(&csv).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.eer().unwrap(), compute_eer(&t).unwrap());
    }

    #[test]
    fn score_csv_round_trip() {
        let mut t = trials(&[0.1, -3.25e-7], &[1.0 / 3.0]);
        t[0].checkpoint_s = Some(2.0);
        let mut buf = Vec::new();
        write_scores(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("utt_id,dataset,label,checkpoint_s,score\n"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, &text).unwrap();
        assert_eq!(read_scores(&p).unwrap(), t);
    }
}
