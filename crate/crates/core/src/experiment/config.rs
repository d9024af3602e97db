//! Experiment configuration (JSON). Every section and field is optional
//! and falls back to the desk-scale defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{gen_spirals, load_csv, load_idx, Dataset};
use crate::error::{Error, Result};
use crate::model::NetworkSpec;
use crate::numerics::RngStream;
use crate::pruning::{ImpConfig, Strategy};
use crate::trainer::Hyperparams;

pub const TRAIN_DATA_STREAM: u64 = 10;
pub const TEST_DATA_STREAM: u64 = 11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Spirals {
        n_per_class_train: usize,
        n_per_class_test: usize,
        classes: usize,
        noise: f64,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        classes: Option<usize>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        classes: Option<usize>,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Spirals {
            n_per_class_train: 500,
            n_per_class_test: 250,
            classes: 3,
            noise: 0.15,
        }
    }
}

impl DatasetConfig {
    /// Train and test sets. Relative paths resolve against `base`.
    pub fn load(&self, seed: u64, base: &Path) -> Result<(Dataset, Dataset)> {
        let at = |p: &PathBuf| base.join(p);
        match self {
            DatasetConfig::Spirals {
                n_per_class_train,
                n_per_class_test,
                classes,
                noise,
            } => Ok((
                gen_spirals(*n_per_class_train, *classes, *noise, RngStream::new(seed, TRAIN_DATA_STREAM))?,
                gen_spirals(*n_per_class_test, *classes, *noise, RngStream::new(seed, TEST_DATA_STREAM))?,
            )),
            DatasetConfig::Csv { train, test, classes } => {
                let tr = load_csv(&at(train), *classes)?;
                let te = load_csv(&at(test), Some(classes.unwrap_or(tr.n_classes())))?;
                Ok((tr, te))
            }
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                classes,
            } => {
                let tr = load_idx(&at(train_images), &at(train_labels), *classes)?;
                let te = load_idx(
                    &at(test_images),
                    &at(test_labels),
                    Some(classes.unwrap_or(tr.n_classes())),
                )?;
                Ok((tr, te))
            }
        }
    }
}

/// Training schedule; the seed comes from the experiment's master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub rewind_step: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let h = Hyperparams::default();
        TrainingConfig {
            epochs: h.epochs,
            batch_size: h.batch_size,
            lr0: h.lr0,
            momentum: h.momentum,
            weight_decay: h.weight_decay,
            decay_epochs: h.decay_epochs,
            decay_factor: h.decay_factor,
            rewind_step: h.rewind_step,
        }
    }
}

impl TrainingConfig {
    pub fn hyperparams(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr0: self.lr0,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            decay_epochs: self.decay_epochs.clone(),
            decay_factor: self.decay_factor,
            rewind_step: self.rewind_step,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruningConfig {
    pub levels: usize,
    pub prune_fraction_per_round: f64,
    pub ft_lr: f64,
    pub ft_epochs: usize,
    pub per_layer: bool,
}

impl Default for PruningConfig {
    fn default() -> Self {
        let c = ImpConfig::default();
        PruningConfig {
            levels: c.levels,
            prune_fraction_per_round: c.prune_fraction_per_round,
            ft_lr: c.ft_lr,
            ft_epochs: c.ft_epochs,
            per_layer: c.per_layer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub enabled: bool,
    /// Eigenvalues per Hessian.
    pub k: usize,
    pub n_directions: usize,
    pub n_points: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub margin: f64,
    pub plot_cap: f64,
    pub probes: usize,
    /// Fraction of active weights removed in the Taylor comparison.
    pub taylor_fraction: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            enabled: true,
            k: 20,
            n_directions: 500,
            n_points: 501,
            grid_rows: 60,
            grid_cols: 70,
            margin: 0.3,
            plot_cap: 10.0,
            probes: 100,
            taylor_fraction: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub network: NetworkSpec,
    pub training: TrainingConfig,
    pub pruning: PruningConfig,
    pub analysis: AnalysisConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dataset: DatasetConfig::default(),
            network: NetworkSpec::new(vec![2, 64, 64, 3]).expect("default network"),
            training: TrainingConfig::default(),
            pruning: PruningConfig::default(),
            analysis: AnalysisConfig::default(),
            output_dir: None,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn hyperparams(&self) -> Hyperparams {
        self.training.hyperparams(self.seed)
    }

    pub fn imp_config(&self, strategy: Strategy) -> ImpConfig {
        ImpConfig {
            levels: self.pruning.levels,
            prune_fraction_per_round: self.pruning.prune_fraction_per_round,
            strategy,
            hp: self.hyperparams(),
            ft_lr: self.pruning.ft_lr,
            ft_epochs: self.pruning.ft_epochs,
            per_layer: self.pruning.per_layer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.network.validate().map_err(wrap)?;
        self.imp_config(Strategy::WeightRewind).validate().map_err(wrap)?;
        if let DatasetConfig::Spirals {
            n_per_class_train,
            n_per_class_test,
            classes,
            noise,
        } = &self.dataset
        {
            if *n_per_class_train == 0 || *n_per_class_test == 0 || *classes < 2 {
                return Err(Error::Config("spirals need two classes and nonempty splits".into()));
            }
            if !(*noise >= 0.0 && noise.is_finite()) {
                return Err(Error::Config(format!("noise must be >= 0, got {noise}")));
            }
            if self.network.input_size() != 2 || self.network.output_size() < *classes {
                return Err(Error::Config(
                    "spirals need a network with 2 inputs and an output per class".into(),
                ));
            }
        }
        let a = &self.analysis;
        if a.k == 0 || a.n_directions == 0 || a.probes == 0 {
            return Err(Error::Config("k, n_directions and probes must be positive".into()));
        }
        if a.n_points < 2 || a.grid_rows == 0 || a.grid_cols == 0 {
            return Err(Error::Config("need n_points >= 2 and a nonempty grid".into()));
        }
        if !(a.margin >= 0.0 && a.margin.is_finite()) || !(a.plot_cap > 0.0) {
            return Err(Error::Config("margin must be >= 0 and plot_cap > 0".into()));
        }
        if !(a.taylor_fraction > 0.0 && a.taylor_fraction < 1.0) {
            return Err(Error::Config("taylor_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Canonical JSON without the output directory.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        serde_json::to_string_pretty(&c).expect("config serializes")
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.network.param_count(), 4547);
        assert_eq!(c.network.prunable_count(), 4416);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            r#"{"sed": 1}"#,
            r#"{"training": {"epoch": 3}}"#,
            r#"{"dataset": {"kind": "spirals", "n_per_class_train": 1, "n_per_class_test": 1, "classes": 3, "noise": 0.1, "extra": 1}}"#,
            r#"{"network": {"layer_sizes": [2, 3], "bias": true}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"training": {"lr0": -1}}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"pruning": {"prune_fraction_per_round": 1.5}}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"network": {"layer_sizes": [3, 8, 3]}}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fingerprint_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = a.clone();
        c.seed = 1;
        assert_ne!(a.fingerprint(), c.fingerprint());
        let back = ExperimentConfig::from_json(&a.canonical_json()).unwrap();
        assert_eq!(back, a);
    }
}
