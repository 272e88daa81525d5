//! Run configuration: one TOML document covering every stage.
//!
//! Every field is optional and unknown keys are rejected. A minimal file:
//!
//! ```toml
//! seed = 7
//! out = "runs/demo"
//!
//! [train]
//! iterations = 50
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud::Normalization;
use crate::dplf::{DplfConfig, EmaSchedule, FilterMode};
use crate::error::{Error, Result};
use crate::io::ClassMap;
use crate::mixing::MixConfig;
use crate::pgdap::AugmentConfig;
use crate::scene::{SceneSpec, NUM_CLASSES};
use crate::trainer::{AdaptSettings, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneBlock {
    pub source_count: usize,
    pub target_count: usize,
    pub val_count: usize,
    pub source: SceneSpec,
    pub target: SceneSpec,
}

impl Default for SceneBlock {
    fn default() -> Self {
        Self {
            source_count: 10,
            target_count: 10,
            val_count: 5,
            source: SceneSpec::source(),
            target: SceneSpec::target(),
        }
    }
}

/// Dataset locations. Unset directories default to the splits that
/// `gen-scenes` writes under the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataBlock {
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub val: Option<PathBuf>,
    /// Raw-to-training label map; identity over the synthetic classes when
    /// unset.
    pub class_map: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Dynamic,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterBlock {
    pub mode: FilterKind,
    /// Raw-confidence cut used when `mode = "fixed"`.
    pub fixed_threshold: f64,
    pub alpha: f64,
    pub bottom_fraction: f64,
    pub schedule: EmaSchedule,
}

impl Default for FilterBlock {
    fn default() -> Self {
        let d = DplfConfig::default();
        Self {
            mode: FilterKind::Dynamic,
            fixed_threshold: 0.85,
            alpha: d.alpha,
            bottom_fraction: d.bottom_fraction,
            schedule: d.schedule,
        }
    }
}

impl FilterBlock {
    pub fn mode(&self) -> FilterMode {
        match self.mode {
            FilterKind::Dynamic => FilterMode::Dynamic(DplfConfig {
                alpha: self.alpha,
                bottom_fraction: self.bottom_fraction,
                schedule: self.schedule,
            }),
            FilterKind::Fixed => FilterMode::Fixed(self.fixed_threshold),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid("alpha must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.bottom_fraction) {
            return Err(Error::invalid("bottom fraction must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.fixed_threshold) {
            return Err(Error::invalid("fixed threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub scenes: SceneBlock,
    pub data: DataBlock,
    pub normalization: Normalization,
    pub augment: AugmentConfig,
    pub filter: FilterBlock,
    pub mix: MixConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            scenes: SceneBlock::default(),
            data: DataBlock::default(),
            normalization: Normalization::default(),
            augment: AugmentConfig::default(),
            filter: FilterBlock::default(),
            mix: MixConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a config document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok((cfg, text))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenes.source.validate()?;
        self.scenes.target.validate()?;
        self.normalization.validate()?;
        self.augment.validate()?;
        self.filter.validate()?;
        self.mix.validate()?;
        self.train.validate()
    }

    pub fn class_map(&self) -> Result<ClassMap> {
        match &self.data.class_map {
            Some(p) => ClassMap::load(p),
            None => Ok(ClassMap::identity(NUM_CLASSES)),
        }
    }

    pub fn split_dir(&self, split: Split) -> PathBuf {
        let given = match split {
            Split::Source => &self.data.source,
            Split::Target => &self.data.target,
            Split::Val => &self.data.val,
        };
        given.clone().unwrap_or_else(|| self.out.join(split.name()))
    }

    pub fn adapt_settings(&self) -> AdaptSettings {
        AdaptSettings {
            filter: self.filter.mode(),
            augment: self.augment.clone(),
            mix: self.mix.clone(),
            norm: self.normalization,
            train: self.train.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Source,
    Target,
    Val,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Source, Split::Target, Split::Val];

    pub fn name(self) -> &'static str {
        match self {
            Split::Source => "source",
            Split::Target => "target",
            Split::Val => "val",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn serialised_defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        for doc in ["sed = 1", "[train]\nlearning_rat = 0.1", "[filter.schedule]\nwarm = 3"] {
            match RunConfig::from_toml(doc) {
                Err(e @ Error::Config(_)) => assert_eq!(e.exit_code(), 2),
                other => panic!("{doc:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn partial_blocks_keep_other_defaults() {
        let cfg = RunConfig::from_toml("[filter]\nmode = \"fixed\"\n[train]\nbatch_size = 2").unwrap();
        assert_eq!(cfg.filter.mode(), FilterMode::Fixed(0.85));
        assert_eq!(cfg.train.batch_size, 2);
        assert_eq!(cfg.train.learning_rate, TrainConfig::default().learning_rate);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let e = RunConfig::from_toml("[filter]\nbottom_fraction = 1.5").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn split_dirs_default_under_out() {
        let cfg = RunConfig::from_toml("out = \"/tmp/x\"\n[data]\nval = \"/data/v\"").unwrap();
        assert_eq!(cfg.split_dir(Split::Source), PathBuf::from("/tmp/x/source"));
        assert_eq!(cfg.split_dir(Split::Val), PathBuf::from("/data/v"));
    }
}
