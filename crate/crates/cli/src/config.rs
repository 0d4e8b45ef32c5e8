use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use risotto_core::train::{cifar10_load, synth_blobs, Dataset, TrainConfig};
use risotto_core::{NetworkSpec, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Cifar10,
}

#[derive(Clone, Debug, Deserialize)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "two")]
    pub n_classes: usize,
    #[serde(default = "five_hundred")]
    pub n_per_class: usize,
    #[serde(default = "half")]
    pub spread: f64,
    /// Use only the first `limit` records of a CIFAR file.
    #[serde(default)]
    pub limit: Option<usize>,
}

fn two() -> usize {
    2
}
fn five_hundred() -> usize {
    500
}
fn half() -> f64 {
    0.5
}

impl DatasetConfig {
    pub fn blobs() -> Self {
        Self {
            kind: DatasetKind::Blobs,
            path: None,
            n_classes: two(),
            n_per_class: five_hundred(),
            spread: half(),
            limit: None,
        }
    }

    pub fn load(&self, dim: usize, seed: u64) -> Result<Dataset> {
        match self.kind {
            DatasetKind::Blobs => Ok(synth_blobs(
                self.n_classes,
                dim,
                self.n_per_class,
                self.spread,
                &RngStream::new(seed, 2),
            )?),
            DatasetKind::Cifar10 => {
                let path = self.path.as_ref().context("cifar10 dataset needs a path (--data)")?;
                let d = cifar10_load(path).with_context(|| format!("loading {}", path.display()))?;
                Ok(match self.limit {
                    Some(n) if n < d.len() => d.subset(&(0..n).collect::<Vec<_>>()),
                    _ => d,
                })
            }
        }
    }
}

/// Contents of a `--config` file: either a bare network spec or an object
/// with `network`, `train` and `dataset` sections.
#[derive(Clone, Debug, Default)]
pub struct FileConfig {
    pub network: Option<NetworkSpec>,
    pub train: Option<TrainConfig>,
    pub dataset: Option<DatasetConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Sections {
    network: Option<NetworkSpec>,
    train: Option<TrainConfig>,
    dataset: Option<DatasetConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let Some(obj) = value.as_object() else {
            bail!("config must be a JSON object");
        };
        let cfg = if ["network", "train", "dataset"].iter().any(|k| obj.contains_key(*k)) {
            let s: Sections = serde_json::from_value(value)?;
            Self {
                network: s.network,
                train: s.train,
                dataset: s.dataset,
            }
        } else {
            Self {
                network: Some(serde_json::from_value(value)?),
                ..Self::default()
            }
        };
        if let Some(n) = &cfg.network {
            n.validate()?;
        }
        if let Some(t) = &cfg.train {
            t.validate()?;
        }
        Ok(cfg)
    }
}
