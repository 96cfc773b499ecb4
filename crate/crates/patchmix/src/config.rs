//! TOML run configuration.

use std::path::{Path, PathBuf};

use patchmix_core::data::synth_shapes;
use patchmix_core::guided::BatchRatio;
use patchmix_core::{Dataset, SearchConfig, Split, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Generated textured classes.
    #[default]
    Synth,
    /// CIFAR-10 binary batches.
    Cifar,
    /// Dataset checkpoints written by this crate.
    Checkpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub classes: usize,
    pub image_size: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub seed: u64,
    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Synth,
            classes: 3,
            image_size: 16,
            train_per_class: 200,
            val_per_class: 100,
            seed: 0,
            train_path: None,
            val_path: None,
        }
    }
}

impl DatasetConfig {
    /// Loads `(train, validation)`. Relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<(Dataset, Dataset)> {
        let (train, val) = match self.kind {
            DatasetKind::Synth => {
                // validation draws come from a different seed than training
                let train = synth_shapes(self.classes, self.image_size, self.train_per_class, self.seed)?;
                let val = synth_shapes(self.classes, self.image_size, self.val_per_class, self.seed ^ 0x5eed_0f_7a11)?;
                (train, val)
            }
            DatasetKind::Cifar | DatasetKind::Checkpoint => {
                let path = |p: &Option<PathBuf>, key: &str| -> Result<PathBuf> {
                    let p = p.as_ref().ok_or_else(|| Error::config(format!("dataset.{key} is required for this dataset kind")))?;
                    let p = base.join(p);
                    if !p.is_file() {
                        return Err(Error::config(format!("dataset.{key} = {} does not exist", p.display())));
                    }
                    Ok(p)
                };
                let load = if self.kind == DatasetKind::Cifar { formats::load_cifar_binary } else { formats::load_dataset_checkpoint };
                (load(&path(&self.train_path, "train_path")?)?, load(&path(&self.val_path, "val_path")?)?)
            }
        };
        train.check_compatible(&val)?;
        Ok((train.with_split(Split::Train), val.with_split(Split::Validation)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidedConfig {
    pub ratio: BatchRatio,
    /// Size of the guided set; `None` means the training-set size.
    pub guided_set_size: Option<usize>,
}

impl Default for GuidedConfig {
    fn default() -> Self {
        GuidedConfig { ratio: BatchRatio::default(), guided_set_size: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Worker threads for fitness evaluation and ablation runs.
    pub threads: usize,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub search: SearchConfig,
    pub guided: GuidedConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("run"),
            threads: 1,
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            search: SearchConfig::default(),
            guided: GuidedConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always serializable")
    }

    /// Reads a config file; relative `output_dir` and dataset paths are
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|message| Error::ConfigFile { path: path.to_path_buf(), message })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.output_dir = base.join(&cfg.output_dir);
        for p in [&mut cfg.dataset.train_path, &mut cfg.dataset.val_path].into_iter().flatten() {
            // absolute, so the run-directory snapshot still points at the data
            *p = std::path::absolute(base.join(&*p)).map_err(|e| Error::io(&*p, e))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets the seed of both training and search.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.search.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.search.validate()?;
        self.guided.ratio.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use patchmix_core::{LossMode, Objective};

    #[test]
    fn defaults_apply_to_missing_keys() {
        let cfg = RunConfig::from_toml("[train]\nepochs = 5\n").unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.batch_size, 100);
        assert_eq!(cfg.search.population_size, 500);
        assert_eq!(cfg.guided.ratio, BatchRatio::default());
        assert_eq!(cfg.dataset.kind, DatasetKind::Synth);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
        assert!(RunConfig::from_toml("[train]\nepoch = 5\n").is_err());
        assert!(RunConfig::from_toml("[search]\nobjective = \"max_fun\"\n").is_err());
        assert!(RunConfig::from_toml("[dataset]\nkind = \"imagenet\"\n").is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.train.loss_mode = LossMode::PatchOnly;
        cfg.search.objective = Objective::MaxLp;
        cfg.search.max_active = Some(2);
        cfg.guided.guided_set_size = Some(17);
        cfg.guided.ratio = BatchRatio::new(2.0, 1.0, 0.5).unwrap();
        cfg.dataset.kind = DatasetKind::Cifar;
        cfg.dataset.train_path = Some("a/b.bin".into());
        cfg.threads = 4;
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let plain = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&plain.to_toml()).unwrap(), plain);
    }

    #[test]
    fn missing_dataset_path_names_the_key() {
        let cfg = DatasetConfig { kind: DatasetKind::Cifar, ..DatasetConfig::default() };
        let err = cfg.load(Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("dataset.train_path"));
    }
}
