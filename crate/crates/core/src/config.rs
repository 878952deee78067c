//! The run manifest: one TOML file describing data, model, training,
//! curation and outputs. Its hash is stamped on every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SynthParams;
use crate::curator::{CurationSettings, SubsumptionRule, DEFAULT_BINARIZE_TOLERANCE};
use crate::error::{Error, Result};
use crate::schedule::{ConstraintSchedule, RampSpec};
use crate::trainer::{ModelShape, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Clip file to train from; the synthetic output when absent.
    pub clips: Option<PathBuf>,
    /// Bank file of planted patterns for synthesis; the built-in benchmark
    /// when absent.
    pub planted_bank: Option<PathBuf>,
    pub test_fraction: f64,
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            clips: None,
            planted_bank: None,
            test_fraction: 0.25,
            val_fraction: 0.15,
        }
    }
}

/// Era layout plus optional explicit ramps; missing ramps follow the
/// default stagger scaled to `epochs_per_era`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub eras: usize,
    pub epochs_per_era: usize,
    pub alpha: Option<RampSpec>,
    pub poss: Option<RampSpec>,
    pub sub: Option<RampSpec>,
    pub min: Option<RampSpec>,
    pub bin: Option<RampSpec>,
    pub freeze_alpha_threshold: Option<f64>,
    pub reinit_precision_threshold: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            eras: 5,
            epochs_per_era: 50,
            alpha: None,
            poss: None,
            sub: None,
            min: None,
            bin: None,
            freeze_alpha_threshold: None,
            reinit_precision_threshold: None,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> ConstraintSchedule {
        let base = ConstraintSchedule::scaled(self.epochs_per_era, self.eras);
        ConstraintSchedule {
            alpha: self.alpha.unwrap_or(base.alpha),
            poss: self.poss.unwrap_or(base.poss),
            sub: self.sub.unwrap_or(base.sub),
            min: self.min.unwrap_or(base.min),
            bin: self.bin.unwrap_or(base.bin),
            freeze_alpha_threshold: self.freeze_alpha_threshold.unwrap_or(base.freeze_alpha_threshold),
            reinit_precision_threshold: self
                .reinit_precision_threshold
                .unwrap_or(base.reinit_precision_threshold),
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    pub binarize_tolerance: f64,
    pub allow_shift: bool,
    pub select_n: Option<usize>,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            binarize_tolerance: DEFAULT_BINARIZE_TOLERANCE,
            allow_shift: true,
            select_n: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub synth: SynthParams,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub schedule: ScheduleConfig,
    pub curation: CurationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("run"),
            data: DataConfig::default(),
            synth: SynthParams::default(),
            model: ModelShape::default(),
            train: TrainConfig::default(),
            schedule: ScheduleConfig::default(),
            curation: CurationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text)
    }

    /// Hex SHA-256 of the canonical TOML rendering, output directory
    /// excluded.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    /// Training settings with the schedule and seed of this run.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            schedule: self.schedule.build(),
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            seed: self.seed,
            padding: self.model.padding,
            ..self.synth.clone()
        }
    }

    pub fn curation_settings(&self) -> CurationSettings {
        CurationSettings {
            binarize_tolerance: self.curation.binarize_tolerance,
            rule: SubsumptionRule {
                clip_len: self.synth.clip_len,
                padding: self.model.padding,
                allow_shift: self.curation.allow_shift,
            },
            select_n: self.curation.select_n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.filters == 0 || m.kernel == 0 {
            return Err(Error::Config("model needs at least one filter and kernel >= 1".into()));
        }
        let len = self.synth.clip_len;
        if m.kernel > len + 2 * m.padding {
            return Err(Error::Config(format!(
                "kernel {} exceeds clip length {} + 2 x padding {}",
                m.kernel, len, m.padding
            )));
        }
        let d = &self.data;
        let open_unit = |f: f64| f > 0.0 && f < 1.0;
        if !open_unit(d.test_fraction) || !open_unit(d.val_fraction) {
            return Err(Error::Config("split fractions must lie in (0, 1)".into()));
        }
        if !(0.0..0.5).contains(&self.curation.binarize_tolerance) {
            return Err(Error::Config("binarize_tolerance must lie in [0, 0.5)".into()));
        }
        self.train_config().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("seed = 9\n[model]\nfilters = 8\nkernel = 3\npadding = 1\n[schedule]\neras = 1\nepochs_per_era = 4\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.filters, 8);
        assert_eq!(cfg.train_config().schedule.eras, 1);
        assert_eq!(cfg.train_config().seed, 9);
        assert_ne!(cfg.hash(), RunConfig::default().hash());
        let moved = RunConfig {
            out_dir: "elsewhere".into(),
            ..cfg.clone()
        };
        assert_eq!(moved.hash(), cfg.hash());
    }

    #[test]
    fn oversized_kernel_rejected() {
        let mut cfg = RunConfig::default();
        cfg.model.kernel = 8;
        assert!(cfg.validate().is_err());
        cfg.model.kernel = 7;
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[model]\nfilterz = 3\n").is_err());
    }
}
