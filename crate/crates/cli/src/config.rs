//! Run configuration read from TOML.
//!
//! Every section and key is optional; missing keys take the defaults below.
//! Unknown keys are rejected. Relative paths resolve against the working
//! directory.
//!
//! ```toml
//! [data]
//! d = 8                 # modes
//! n_ps = 6              # phase shifters on modes 0..n_ps
//! n_label = 10000       # records
//! state = "weak"        # "weak" | "noon"
//! # samples = 1000      # omit for exact labels
//! unitary_seed = 0
//! theta_seed = 1
//!
//! [model]
//! width = 100           # hidden width l of the dense surrogate
//! # bond_dim = 3        # d_b of the tensor network; default round(sqrt(d))
//! beta = 1000.0
//! init_seed = 0
//!
//! [train]
//! alpha = 0.1
//! batch = 32
//! epochs = 200
//! split = 0.7
//! seed = 0              # shuffling
//!
//! [paths]
//! unitary = "unitary.qcu"
//! dataset = "dataset.qcds"
//! checkpoint = "model.qckp"
//! curve = "curve.csv"
//! mae = "mae.csv"
//! ```

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use qcnet::fock::InitialState;
use qcnet::surrogate::{qctn, Arch, Hyper};
use qcnet::trainer::{DatasetConfig, LabelMode, TrainConfig};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Weak,
    Noon,
}

impl StateKind {
    pub fn initial(self) -> InitialState {
        match self {
            StateKind::Weak => InitialState::weak(),
            StateKind::Noon => InitialState::Noon,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub d: usize,
    pub n_ps: usize,
    pub n_label: usize,
    pub state: StateKind,
    pub samples: Option<u64>,
    pub unitary_seed: u64,
    pub theta_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { d: 8, n_ps: 6, n_label: 10_000, state: StateKind::Weak, samples: None, unitary_seed: 0, theta_seed: 1 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub width: usize,
    pub bond_dim: Option<usize>,
    pub beta: f64,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { width: 100, bond_dim: None, beta: 1000.0, init_seed: 0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub alpha: f64,
    pub batch: usize,
    pub epochs: usize,
    pub split: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { alpha: t.alpha, batch: t.batch, epochs: t.epochs, split: t.split, seed: t.seed }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub unitary: PathBuf,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub mae: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            unitary: "unitary.qcu".into(),
            dataset: "dataset.qcds".into(),
            checkpoint: "model.qckp".into(),
            curve: "curve.csv".into(),
            mae: "mae.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub paths: PathsSection,
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let (d, m, t) = (&self.data, &self.model, &self.train);
        if d.d < 2 {
            return Err(bad("data.d", format!("need at least 2 modes, got {}", d.d)));
        }
        if d.n_ps == 0 || d.n_ps > d.d {
            return Err(bad("data.n_ps", format!("must lie in 1..={}, got {}", d.d, d.n_ps)));
        }
        if d.n_label < 2 {
            return Err(bad("data.n_label", "must be at least 2"));
        }
        if d.samples == Some(0) {
            return Err(bad("data.samples", "must be positive"));
        }
        if m.width == 0 {
            return Err(bad("model.width", "must be positive"));
        }
        if m.bond_dim == Some(0) {
            return Err(bad("model.bond_dim", "must be positive"));
        }
        if !(m.beta.is_finite() && m.beta > 0.0) {
            return Err(bad("model.beta", format!("must be positive and finite, got {}", m.beta)));
        }
        if !(t.alpha.is_finite() && t.alpha >= 0.0) {
            return Err(bad("train.alpha", format!("must be non-negative and finite, got {}", t.alpha)));
        }
        if t.batch == 0 {
            return Err(bad("train.batch", "must be positive"));
        }
        if !(t.split > 0.0 && t.split < 1.0) {
            return Err(bad("train.split", format!("must lie in (0, 1), got {}", t.split)));
        }
        Ok(())
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        let d = &self.data;
        DatasetConfig {
            d: d.d,
            n_ps: d.n_ps,
            n_label: d.n_label,
            split: self.train.split,
            label_mode: d.samples.map_or(LabelMode::Exact, LabelMode::Sampled),
            state: d.state.initial(),
            unitary_seed: d.unitary_seed,
            theta_seed: d.theta_seed,
        }
    }

    pub fn hyper(&self, arch: Arch) -> Hyper {
        let (d, n_ps) = (self.data.d, self.data.n_ps);
        match arch {
            Arch::Qcnn => Hyper { width: self.model.width, beta: self.model.beta, ..Hyper::qcnn(d, n_ps) },
            Arch::Qctn => Hyper {
                width: self.model.bond_dim.unwrap_or_else(|| qctn::choose_bond_dim(d)),
                beta: self.model.beta,
                ..Hyper::qctn(d, n_ps)
            },
            Arch::Vanilla => Hyper::vanilla(d, n_ps),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig { batch: t.batch, alpha: t.alpha, epochs: t.epochs, seed: t.seed, split: t.split }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.data.d, 8);
        assert_eq!(c.model.beta, 1000.0);
        assert_eq!(c.train.batch, 32);
        assert_eq!(c.hyper(Arch::Qctn).width, 3);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::parse("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("learning_rate"), "{e}");
        let e = RunConfig::parse("[optim]\n").unwrap_err();
        assert!(e.to_string().contains("optim"), "{e}");
    }

    #[test]
    fn invalid_value_is_named() {
        let e = RunConfig::parse("[train]\nsplit = 1.5\n").unwrap_err();
        assert!(e.to_string().contains("train.split:"), "{e}");
        let e = RunConfig::parse("[data]\nd = 4\nn_ps = 6\n").unwrap_err();
        assert!(e.to_string().contains("data.n_ps:"), "{e}");
        let e = RunConfig::parse("[data]\nstate = \"bell\"\n").unwrap_err();
        assert!(e.to_string().contains("state"), "{e}");
    }

    #[test]
    fn sampled_labels_and_bond_dim() {
        let c = RunConfig::parse("[data]\nsamples = 500\n[model]\nbond_dim = 10\n").unwrap();
        assert_eq!(c.dataset_config().label_mode, LabelMode::Sampled(500));
        assert_eq!(c.hyper(Arch::Qctn).width, 10);
    }
}
