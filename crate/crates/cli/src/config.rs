//! Run configuration: an optional TOML file, then command-line overrides.
//!
//! ```toml
//! data = "/data/PKLot"
//! seed = 7
//! annotation_kind = "polygon"
//! augment = false
//! scenarios = ["UFPR04", "PUCPR"]
//!
//! [train]
//! max_epochs = 30
//!
//! [finetune]
//! sample_counts = [50, 100, 200]
//! runs = 3
//! ```
//!
//! The top-level `seed` drives everything seeded: the split, weight
//! initialization, batch order and the fine-tuning runs (`train.seed` and
//! `finetune.seed_base` are overwritten with it).

use std::path::{Path, PathBuf};

use parkspot_core::dataset::ProtocolConfig;
use parkspot_core::{AnnotationKind, AugmentationConfig, FineTuneConfig, Scenario, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub seed: u64,
    pub annotation_kind: AnnotationKind,
    pub augment: bool,
    /// Empty means every scenario found.
    pub scenarios: Vec<String>,
    pub input_side: u32,
    pub square_side: u32,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub train: TrainConfig,
    pub finetune: FineTuneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let protocol = ProtocolConfig::default();
        RunConfig {
            data: None,
            seed: protocol.seed,
            annotation_kind: protocol.annotation_kind,
            augment: false,
            scenarios: Vec::new(),
            input_side: protocol.input_side,
            square_side: protocol.square_side,
            train_fraction: protocol.train_fraction,
            validation_fraction: protocol.validation_fraction,
            train: TrainConfig::default(),
            finetune: FineTuneConfig::default(),
        }
    }
}

/// Flag values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub annotation_kind: Option<AnnotationKind>,
    pub augment: bool,
    pub scenarios: Vec<String>,
    pub sample_counts: Option<Vec<usize>>,
    pub runs: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    /// Reads `path` (or starts from defaults), applies the flags and
    /// normalizes the derived fields.
    pub fn resolve(path: Option<&Path>, o: Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if o.data.is_some() {
            cfg.data = o.data;
        }
        if let Some(seed) = o.seed {
            cfg.seed = seed;
        }
        if let Some(kind) = o.annotation_kind {
            cfg.annotation_kind = kind;
        }
        cfg.augment |= o.augment;
        if !o.scenarios.is_empty() {
            cfg.scenarios = o.scenarios;
        }
        if let Some(counts) = o.sample_counts {
            cfg.finetune.sample_counts = counts;
        }
        if let Some(runs) = o.runs {
            cfg.finetune.runs = runs;
        }
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    fn normalize(&mut self) {
        self.train.seed = self.seed;
        self.finetune.seed_base = self.seed;
        self.train.augmentation = if self.augment {
            Some(self.train.augmentation.unwrap_or_default())
        } else {
            None
        };
    }

    fn validate(&self) -> CliResult<()> {
        let usage = |e: parkspot_core::Error| CliError::usage(format!("config: {e}"));
        self.train.validate().map_err(usage)?;
        self.finetune.validate().map_err(usage)?;
        if self.input_side == 0 || self.square_side == 0 {
            return Err(CliError::usage("config: input_side and square_side must be positive"));
        }
        Ok(())
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            annotation_kind: self.annotation_kind,
            input_side: self.input_side,
            square_side: self.square_side,
            train_fraction: self.train_fraction,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
        }
    }

    pub fn scenario_filter(&self) -> CliResult<Vec<Scenario>> {
        self.scenarios
            .iter()
            .map(|s| s.parse().map_err(|e| CliError::usage(format!("--scenario: {e}"))))
            .collect()
    }

    pub fn augmentation(&self) -> Option<AugmentationConfig> {
        self.train.augmentation
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\nannotation_kind = \"bbox\"\n[train]\nmax_epochs = 7\n").unwrap();
        let cfg = RunConfig::resolve(
            Some(&path),
            Overrides {
                seed: Some(9),
                augment: true,
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.finetune.seed_base, 9);
        assert_eq!(cfg.annotation_kind, AnnotationKind::BBox);
        assert_eq!(cfg.train.max_epochs, 7);
        assert!(cfg.train.augmentation.is_some());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::resolve(None, Overrides { augment: true, ..Overrides::default() }).unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        assert!(matches!(RunConfig::parse("sede = 1"), Err(CliError::Usage(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[train]\nbatch_size = 0\n").unwrap();
        let err = RunConfig::resolve(Some(&path), Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
