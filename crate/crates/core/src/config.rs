//! Run configuration: a single JSON document describing head, data and
//! training schedule, with named presets and dotted-path overrides.
//!
//! ```json
//! {
//!   "preset": "synthetic",
//!   "seed": 0,
//!   "head": { "variant": "sparse-morph", "d_hidden": 128, "pooling": 2, "batchnorm": true },
//!   "data": { "kind": "max-affine", "n": 20000, "d": 64, "k_pieces": 2, "tags": 50, "seed": 0 },
//!   "train": { "phases": [ { "optimizer": "adam", "lr": 0.01, "epochs": 20 } ],
//!              "weight_decay": 0.0001, "batch_size": 128 }
//! }
//! ```
//!
//! `d_in` and `d_out` come from the dataset. The run seed drives head
//! initialization and batch order; the data seed is separate so several
//! model seeds can share one dataset.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::heads::{HeadSpec, Variant};
use crate::optim::{OptimizerKind, Phase, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    MtatLike,
    Cifar10,
    Synthetic,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::MtatLike, Preset::Cifar10, Preset::Synthetic];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::MtatLike => "mtat-like",
            Preset::Cifar10 => "cifar10",
            Preset::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset `{s}` (mtat-like, cifar10, synthetic)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    MaxAffine {
        n: usize,
        d: usize,
        k_pieces: usize,
        tags: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Directory holding `data_batch_{1..5}.bin` and `test_batch.bin`.
    Cifar10 {
        dir: PathBuf,
        #[serde(default)]
        grayscale: bool,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        seed: u64,
    },
    FeaturesCsv {
        path: PathBuf,
        #[serde(default)]
        seed: u64,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::MaxAffine {
                n,
                d,
                k_pieces,
                tags,
                seed,
            } => data::gen_max_affine(*n, *d, *k_pieces, *tags, *seed),
            DataSource::Cifar10 { dir, grayscale, seed } => {
                let train: Vec<PathBuf> = (1..=5).map(|k| dir.join(format!("data_batch_{k}.bin"))).collect();
                let test = dir.join("test_batch.bin");
                let train: Vec<&Path> = train.iter().map(PathBuf::as_path).collect();
                let test: Vec<&Path> = if test.exists() {
                    vec![test.as_path()]
                } else {
                    Vec::new()
                };
                data::load_cifar10_binary(&train, &test, *grayscale, *seed)
            }
            DataSource::Idx { images, labels, seed } => data::load_idx(images, labels, *seed),
            DataSource::FeaturesCsv { path, seed } => data::load_features_csv(path, *seed),
        }
    }
}

fn default_pooling() -> usize {
    2
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub variant: Variant,
    pub d_hidden: usize,
    #[serde(default = "default_pooling")]
    pub pooling: usize,
    #[serde(default = "default_true")]
    pub batchnorm: bool,
    #[serde(default)]
    pub ensure_row_active: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub seed: u64,
    pub head: HeadConfig,
    pub data: DataSource,
    pub train: TrainConfig,
}

fn phase(optimizer: OptimizerKind, lr: f64, epochs: usize) -> Phase {
    Phase { optimizer, lr, epochs }
}

impl RunConfig {
    pub fn preset(preset: Preset, variant: Variant, seed: u64) -> Self {
        // BatchNorm everywhere except dense-morph on the tagging benchmarks.
        let tagging_bn = variant != Variant::DenseMorph;
        let (head, data, train) = match preset {
            Preset::MtatLike => {
                let mut t = TrainConfig::new(vec![
                    phase(OptimizerKind::Adam, 1e-4, 80),
                    phase(OptimizerKind::SgdNesterov, 1e-3, 20),
                ]);
                t.weight_decay = 1e-4;
                (
                    HeadConfig {
                        variant,
                        d_hidden: 512,
                        pooling: 2,
                        batchnorm: tagging_bn,
                        ensure_row_active: false,
                    },
                    DataSource::MaxAffine {
                        n: 20000,
                        d: 512,
                        k_pieces: 4,
                        tags: 50,
                        seed: 0,
                    },
                    t,
                )
            }
            Preset::Cifar10 => {
                let mut t = TrainConfig::new(vec![phase(OptimizerKind::Adam, 1e-3, 10)]);
                t.weight_decay = 1e-4;
                (
                    HeadConfig {
                        variant,
                        d_hidden: 512,
                        pooling: 2,
                        batchnorm: true,
                        ensure_row_active: false,
                    },
                    DataSource::Cifar10 {
                        dir: PathBuf::from("data/cifar-10-batches-bin"),
                        grayscale: true,
                        seed: 0,
                    },
                    t,
                )
            }
            Preset::Synthetic => {
                let mut t = TrainConfig::new(vec![
                    phase(OptimizerKind::Adam, SYNTHETIC_ADAM_LR, SYNTHETIC_ADAM_EPOCHS),
                    phase(OptimizerKind::SgdNesterov, 1e-3, SYNTHETIC_SGD_EPOCHS),
                ]);
                t.weight_decay = 1e-4;
                (
                    HeadConfig {
                        variant,
                        d_hidden: SYNTHETIC_HIDDEN,
                        pooling: 2,
                        batchnorm: tagging_bn,
                        ensure_row_active: false,
                    },
                    DataSource::MaxAffine {
                        n: 20000,
                        d: 64,
                        k_pieces: SYNTHETIC_PIECES,
                        tags: 50,
                        seed: 0,
                    },
                    t,
                )
            }
        };
        RunConfig {
            preset: Some(preset),
            seed,
            head,
            data,
            train,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Sets the field at a dotted path (`train.phases.0.lr`) from a string.
    /// The value is read as JSON first and as a plain string otherwise.
    pub fn set(&mut self, path: &str, raw: &str) -> Result<()> {
        let cfg_err = |detail: String| Error::Config {
            path: path.to_string(),
            detail,
        };
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for key in path.split('.') {
            slot = match slot {
                Value::Object(map) => map.get_mut(key).ok_or_else(|| cfg_err(format!("no field `{key}`")))?,
                Value::Array(items) => {
                    let len = items.len();
                    key.parse::<usize>()
                        .ok()
                        .and_then(|i| items.get_mut(i))
                        .ok_or_else(|| cfg_err(format!("`{key}` is not an index below {len}")))?
                }
                _ => return Err(cfg_err(format!("cannot descend into `{key}`"))),
            };
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        *self = serde_json::from_value(doc).map_err(|e| cfg_err(e.to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, detail: &str| {
            Err(Error::Config {
                path: path.into(),
                detail: detail.into(),
            })
        };
        if self.head.d_hidden == 0 {
            return bad("head.d_hidden", "must be positive");
        }
        if self.head.pooling == 0 {
            return bad("head.pooling", "must be positive");
        }
        self.train.validate()
    }

    pub fn head_spec(&self, ds: &Dataset) -> HeadSpec {
        HeadSpec {
            variant: self.head.variant,
            d_in: ds.dim(),
            d_hidden: self.head.d_hidden,
            d_out: ds.targets.outputs(),
            pooling: self.head.pooling,
            batchnorm: self.head.batchnorm,
            seed: self.seed,
            ensure_row_active: self.head.ensure_row_active,
        }
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

pub const SYNTHETIC_HIDDEN: usize = 128;
pub const SYNTHETIC_PIECES: usize = 2;
pub const SYNTHETIC_ADAM_LR: f64 = 1e-2;
pub const SYNTHETIC_ADAM_EPOCHS: usize = 20;
pub const SYNTHETIC_SGD_EPOCHS: usize = 5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mtat_preset_schedule() {
        let cfg = RunConfig::preset(Preset::MtatLike, Variant::SparseMorph, 1);
        let p = &cfg.train.phases;
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].optimizer, p[0].lr, p[0].epochs), (OptimizerKind::Adam, 1e-4, 80));
        assert_eq!(
            (p[1].optimizer, p[1].lr, p[1].epochs),
            (OptimizerKind::SgdNesterov, 1e-3, 20)
        );
        assert_eq!(cfg.train.weight_decay, 1e-4);
        assert!(
            !RunConfig::preset(Preset::MtatLike, Variant::DenseMorph, 1)
                .head
                .batchnorm
        );
        assert!(
            RunConfig::preset(Preset::Cifar10, Variant::DenseMorph, 1)
                .head
                .batchnorm
        );
    }

    #[test]
    fn json_round_trip() {
        for preset in Preset::ALL {
            let cfg = RunConfig::preset(preset, Variant::Maxout, 4);
            let back: RunConfig = serde_json::from_str(&cfg.to_json_pretty().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn dotted_overrides() {
        let mut cfg = RunConfig::preset(Preset::Synthetic, Variant::Relu, 0);
        cfg.set("train.phases.0.lr", "0.05").unwrap();
        cfg.set("head.variant", "zhang").unwrap();
        cfg.set("data.n", "500").unwrap();
        assert_eq!(cfg.train.phases[0].lr, 0.05);
        assert_eq!(cfg.head.variant, Variant::Zhang);
        assert!(matches!(cfg.data, DataSource::MaxAffine { n: 500, .. }));
        for (path, raw) in [
            ("train.nope", "1"),
            ("train.phases.9.lr", "1"),
            ("head.d_hidden", "\"wide\""),
        ] {
            assert!(
                matches!(cfg.set(path, raw), Err(Error::Config { path: ref p, .. }) if p == path),
                "{path}"
            );
        }
    }

    #[test]
    fn validation_names_fields() {
        let mut cfg = RunConfig::preset(Preset::Synthetic, Variant::Relu, 0);
        cfg.head.d_hidden = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config { ref path, .. }) if path == "head.d_hidden"));
    }

    #[test]
    fn unknown_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let mut v = serde_json::to_value(RunConfig::preset(Preset::Synthetic, Variant::Relu, 0)).unwrap();
        v["head"]["widht"] = 3.into();
        fs::write(&p, v.to_string()).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Config { .. })));
    }
}
