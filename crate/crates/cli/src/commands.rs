use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use spoofbench_core::audio::{
    detect_voice, load_wav, net_speech_prefix, net_speech_seconds, resample, trim_nonspeech,
    write_wav, AudioClip, CANONICAL_RATE_HZ,
};
use spoofbench_core::corpus::{
    build_pool, read_manifest, write_manifest, Label, Manifest, ManifestEntry, PoolSpec,
    Presentation, MIN_NET_SPEECH_S,
};
use spoofbench_core::detector::{init_parameters, load_parameters, save_parameters, Detector};
use spoofbench_core::eval::{
    checkpoint_eval, det_curve, per_dataset_eval, pooled_eval, read_scores, write_scores,
    CheckpointBreakdown, DatasetBreakdown, MetricReport, TrialScore,
};
use spoofbench_core::features::{log_mel, write_feature_dump};
use spoofbench_core::presentation::{present as run_channel, ChannelPath, PresentJob};
use spoofbench_core::seed::derive_seed;

use crate::config::RunConfig;
use crate::{DetArgs, DetectArgs, EvalArgs, FeatureArgs, InitArgs, PoolArgs, PresentArgs, VadArgs};

fn base_dir(file: &Path) -> PathBuf {
    file.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Relative paths inside a list file are taken relative to that file.
fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_canonical(path: &Path) -> Result<AudioClip> {
    let clip = load_wav(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(if clip.sample_rate_hz() == CANONICAL_RATE_HZ {
        clip
    } else {
        resample(&clip, CANONICAL_RATE_HZ)
    })
}

fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync + Send) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

/// Prints failures and optionally writes them as JSON Lines. Returns true if none.
fn report_failures(failures: &[(String, String)], path: Option<&Path>) -> Result<bool> {
    for (id, msg) in failures {
        eprintln!("error: {id}: {msg}");
    }
    if let Some(p) = path {
        let mut f = fs::File::create(p)?;
        for (id, msg) in failures {
            writeln!(f, "{}", json!({"id": id, "error": msg}))?;
        }
    }
    Ok(failures.is_empty())
}

pub fn vad(cfg: &RunConfig, args: &VadArgs) -> Result<bool> {
    let manifest = read_manifest(&args.input)?;
    let base = base_dir(&args.input);
    if let Some(d) = &args.trim_dir {
        fs::create_dir_all(d)?;
    }
    let results = par_map(&manifest.entries, cfg.parallelism, |e| -> Result<ManifestEntry> {
        let path = resolve(&base, &e.path);
        let clip = load_canonical(&path)?;
        let mask = detect_voice(&clip, &cfg.vad)?;
        let mut out = e.clone();
        out.path = path.display().to_string();
        out.net_speech_s = net_speech_seconds(&mask);
        if let Some(d) = &args.trim_dir {
            let trimmed = d.join(format!("{}.wav", e.utt_id));
            write_wav(&trimmed, &trim_nonspeech(&clip, &mask))?;
            out.extra.insert("trimmed_path".into(), Value::String(trimmed.display().to_string()));
        }
        Ok(out)
    })?;

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (e, r) in manifest.entries.iter().zip(results) {
        match r {
            Ok(out) => entries.push(out),
            Err(err) => failures.push((e.utt_id.clone(), format!("{err:#}"))),
        }
    }
    entries.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    write_manifest(&Manifest::new(entries)?, &args.out)?;
    report_failures(&failures, args.errors.as_deref())
}

fn presentation_of(path: ChannelPath) -> Presentation {
    match path {
        ChannelPath::Playback => Presentation::Played,
        ChannelPath::InjectionDigital | ChannelPath::InjectionAnalog => Presentation::Injected,
    }
}

pub fn present(cfg: &RunConfig, args: &PresentArgs) -> Result<bool> {
    let text = fs::read_to_string(&args.jobs).with_context(|| format!("reading {}", args.jobs.display()))?;
    let base = base_dir(&args.jobs);
    let global = args.seed.unwrap_or(cfg.global_seed);
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();

    let results = par_map(&lines, cfg.parallelism, |&(n, line)| -> Result<Option<ManifestEntry>> {
        let raw: Value = serde_json::from_str(line).with_context(|| format!("line {}", n + 1))?;
        let job: PresentJob = serde_json::from_value(raw.clone()).with_context(|| format!("line {}", n + 1))?;
        let clip = load_canonical(&resolve(&base, &job.input))?;
        let ir = match &job.ir {
            Some(p) => Some(load_canonical(&resolve(&base, p))?),
            None => None,
        };
        let seed = job.seed.unwrap_or_else(|| derive_seed(global, job.key()));
        let out = run_channel(&clip, &job.channel_config(ir), seed)?;
        let out_path = resolve(&base, &job.output);
        if let Some(dir) = out_path.parent() {
            fs::create_dir_all(dir)?;
        }
        write_wav(&out_path, &out)?;

        let label = raw.get("label").and_then(|v| serde_json::from_value::<Label>(v.clone()).ok());
        let dataset = raw.get("dataset").and_then(Value::as_str);
        Ok(match (&job.utt_id, label, dataset) {
            (Some(id), Some(label), Some(ds)) => {
                let mut e = ManifestEntry::new(id, &out_path.display().to_string(), label, ds);
                e.presentation = presentation_of(job.path);
                e.attack_id = raw.get("attack_id").and_then(Value::as_str).map(str::to_string);
                Some(e)
            }
            _ => None,
        })
    })?;

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (&(n, line), r) in lines.iter().zip(results) {
        match r {
            Ok(e) => entries.extend(e),
            Err(err) => {
                let id = serde_json::from_str::<Value>(line)
                    .ok()
                    .and_then(|v| v.get("utt_id").and_then(Value::as_str).map(str::to_string))
                    .unwrap_or_else(|| format!("line {}", n + 1));
                failures.push((id, format!("{err:#}")));
            }
        }
    }
    if let Some(p) = &args.out_manifest {
        entries.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        write_manifest(&Manifest::new(entries)?, p)?;
    }
    report_failures(&failures, args.errors.as_deref())
}

pub fn pool(cfg: &RunConfig, args: &PoolArgs) -> Result<bool> {
    let manifests = args
        .manifests
        .iter()
        .map(|p| {
            let mut m = read_manifest(p).with_context(|| format!("reading {}", p.display()))?;
            let base = base_dir(p);
            for e in &mut m.entries {
                e.path = resolve(&base, &e.path).display().to_string();
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = PoolSpec {
        per_class_per_dataset: args.per_class,
        seed: args.seed.unwrap_or(cfg.global_seed),
        min_net_speech_s: args.min_net_speech,
    };
    let pool = build_pool(&manifests, &spec)?;
    write_manifest(&pool, &args.out)?;
    eprintln!("pool: {} entries", pool.len());
    Ok(true)
}

fn parse_checkpoints(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad checkpoint {t:?}")))
        .collect()
}

enum Scored {
    Rows(Vec<TrialScore>),
    Skipped(f64),
}

fn score_entry(
    e: &ManifestEntry,
    base: &Path,
    cfg: &RunConfig,
    det: &Detector,
    checkpoints: Option<&[f64]>,
) -> Result<Scored> {
    let clip = load_canonical(&resolve(base, &e.path))?;
    let mask = detect_voice(&clip, &cfg.vad)?;
    let net = net_speech_seconds(&mask);
    if net < MIN_NET_SPEECH_S {
        return Ok(Scored::Skipped(net));
    }
    let trial = |audio: &AudioClip, checkpoint_s: Option<f64>| -> Result<TrialScore> {
        let feat = log_mel(audio, &cfg.features)?;
        Ok(TrialScore {
            utt_id: e.utt_id.clone(),
            dataset: e.dataset.clone(),
            label: e.label,
            checkpoint_s,
            score: det.score(&feat)?,
        })
    };
    let rows = match checkpoints {
        None => vec![trial(&trim_nonspeech(&clip, &mask), None)?],
        Some(cs) => cs
            .iter()
            // a checkpoint counts when the utterance holds it to within half a hop
            .filter(|&&c| net + 0.5 * mask.hop_s >= c)
            .map(|&c| trial(&net_speech_prefix(&clip, &mask, c), Some(c)))
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(Scored::Rows(rows))
}

fn trial_order(a: &TrialScore, b: &TrialScore) -> Ordering {
    a.utt_id.cmp(&b.utt_id).then_with(|| {
        a.checkpoint_s
            .partial_cmp(&b.checkpoint_s)
            .unwrap_or(Ordering::Equal)
    })
}

pub fn detect(cfg: &RunConfig, args: &DetectArgs) -> Result<bool> {
    let manifest = read_manifest(&args.manifest)?;
    let base = base_dir(&args.manifest);
    let (det_cfg, params) = load_parameters(&args.weights)
        .with_context(|| format!("loading weights {}", args.weights.display()))?;
    let det = Detector::new(det_cfg, params)?;
    let checkpoints = match &args.checkpoints {
        None => None,
        Some(None) => Some(cfg.protocol.checkpoints_s.clone()),
        Some(Some(s)) => Some(parse_checkpoints(s)?),
    };

    let results = par_map(&manifest.entries, cfg.parallelism, |e| {
        score_entry(e, &base, cfg, &det, checkpoints.as_deref())
    })?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (e, r) in manifest.entries.iter().zip(results) {
        match r {
            Ok(Scored::Rows(r)) => rows.extend(r),
            Ok(Scored::Skipped(net)) => eprintln!(
                "skip {}: {net:.2} s net speech is under {MIN_NET_SPEECH_S} s",
                e.utt_id
            ),
            Err(err) => failures.push((e.utt_id.clone(), format!("{err:#}"))),
        }
    }
    rows.sort_by(trial_order);
    let mut f = fs::File::create(&args.out)?;
    write_scores(&rows, &mut f)?;
    report_failures(&failures, args.errors.as_deref())
}

#[derive(Serialize)]
struct EvalReport {
    far_target: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_unix_s: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pooled: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_dataset: Option<DatasetBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint_avg: Option<CheckpointBreakdown>,
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> Result<bool> {
    let trials = read_scores(&args.scores)?;
    let pooled = args.pooled || !(args.per_dataset || args.checkpoint_avg);
    let report = EvalReport {
        far_target: args.far,
        generated_unix_s: (!args.no_timestamp)
            .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)),
        pooled: pooled.then(|| pooled_eval(&trials, args.far)).transpose()?,
        per_dataset: args.per_dataset.then(|| per_dataset_eval(&trials, args.far)).transpose()?,
        checkpoint_avg: args
            .checkpoint_avg
            .then(|| checkpoint_eval(&trials, &cfg.protocol, args.far))
            .transpose()?,
    };
    fs::write(&args.out, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(true)
}

pub fn det(args: &DetArgs) -> Result<bool> {
    let trials = read_scores(&args.scores)?;
    fs::write(&args.out, det_curve(&trials)?.to_csv())?;
    Ok(true)
}

pub fn init_weights(cfg: &RunConfig, args: &InitArgs) -> Result<bool> {
    let det_cfg = if args.tiny {
        spoofbench_core::detector::DetectorConfig::tiny()
    } else {
        cfg.detector.clone()
    };
    let store = init_parameters(&det_cfg, args.seed.unwrap_or(cfg.global_seed))?;
    save_parameters(&store, &det_cfg, &args.out)?;
    eprintln!(
        "wrote {} parameters to {}",
        spoofbench_core::detector::count_parameters(&store),
        args.out.display()
    );
    Ok(true)
}

pub fn features(cfg: &RunConfig, args: &FeatureArgs) -> Result<bool> {
    let clip = load_canonical(&args.input)?;
    let spec = log_mel(&clip, &cfg.features)?;
    let info = write_feature_dump(&spec, &cfg.features, &args.out)?;
    eprintln!("{} frames x {} bands", info.frames, info.n_mels);
    Ok(true)
}
