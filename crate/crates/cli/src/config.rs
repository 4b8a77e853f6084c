use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spoofbench_core::audio::{VadConfig, CANONICAL_RATE_HZ};
use spoofbench_core::detector::DetectorConfig;
use spoofbench_core::eval::EvalProtocol;
use spoofbench_core::features::FeatureConfig;

/// Run-wide settings, read from a JSON document; command-line flags win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub global_seed: u64,
    pub sample_rate_hz: u32,
    pub vad: VadConfig,
    pub features: FeatureConfig,
    pub detector: DetectorConfig,
    pub protocol: EvalProtocol,
    pub parallelism: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            global_seed: 0,
            sample_rate_hz: CANONICAL_RATE_HZ,
            vad: VadConfig::default(),
            features: FeatureConfig::default(),
            detector: DetectorConfig::default(),
            protocol: EvalProtocol::default(),
            parallelism: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz != CANONICAL_RATE_HZ {
            bail!("sample_rate_hz must be {CANONICAL_RATE_HZ}, got {}", self.sample_rate_hz);
        }
        if self.parallelism == 0 {
            bail!("parallelism must be >= 1");
        }
        self.vad.validate()?;
        self.features.validate(self.sample_rate_hz)?;
        self.detector.validate()?;
        self.protocol.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"global_seed": 9, "parallelism": 4}"#).unwrap();
        assert_eq!(cfg.global_seed, 9);
        assert_eq!(cfg.parallelism, 4);
        assert_eq!(cfg.protocol, EvalProtocol::default());
        cfg.validate().unwrap();
        let bad = RunConfig { parallelism: 0, ..RunConfig::default() };
        assert!(bad.validate().is_err());
    }
}
