//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Init, LayerSpec, ModelSpec};
use crate::optim::OptimConfig;
use crate::regularizers::RegularizerConfig;

/// Environment variable naming the directory that holds `mnist/` and
/// `cifar-10-batches-bin/`.
pub const DATA_ROOT_ENV: &str = "MAGDROP_DATA_ROOT";

/// Reference protocol for full-scale runs; desk profiles override both.
pub const REFERENCE_EPOCHS: usize = 50;
pub const REFERENCE_BATCH_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Mnist {
        #[serde(default)]
        subset_per_class: Option<usize>,
        #[serde(default)]
        test_subset_per_class: Option<usize>,
    },
    Cifar10 {
        #[serde(default)]
        subset_per_class: Option<usize>,
        #[serde(default)]
        test_subset_per_class: Option<usize>,
    },
    Blobs {
        num_classes: usize,
        dim: usize,
        n_per_class: usize,
        test_per_class: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

fn default_spread() -> f64 {
    data::DEFAULT_BLOB_SPREAD
}

impl DatasetConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetConfig::Mnist { .. } => "mnist",
            DatasetConfig::Cifar10 { .. } => "cifar10",
            DatasetConfig::Blobs { .. } => "blobs",
        }
    }

    /// Loads (train, test). Image sets are read from `data_root`.
    pub fn load(&self, data_root: &Path, seed: u64) -> Result<(Dataset, Dataset)> {
        let subset = |ds: Dataset, k: Option<usize>| match k {
            Some(k) => ds.subset_per_class(k),
            None => ds,
        };
        match *self {
            DatasetConfig::Mnist {
                subset_per_class,
                test_subset_per_class,
            } => {
                let load = |train: bool| {
                    let (img, lab) = data::mnist_paths(data_root, train);
                    require_files(
                        &[&img, &lab],
                        "MNIST IDX (big-endian magic 0x803 images / 0x801 labels)",
                    )?;
                    data::load_idx(&img, &lab)
                };
                Ok((
                    subset(load(true)?, subset_per_class),
                    subset(load(false)?, test_subset_per_class),
                ))
            }
            DatasetConfig::Cifar10 {
                subset_per_class,
                test_subset_per_class,
            } => {
                let load = |train: bool| {
                    let paths = data::cifar10_paths(data_root, train);
                    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
                    require_files(&refs, "CIFAR-10 binary (3073-byte records)")?;
                    data::load_cifar10_bin(&paths)
                };
                Ok((
                    subset(load(true)?, subset_per_class),
                    subset(load(false)?, test_subset_per_class),
                ))
            }
            DatasetConfig::Blobs {
                num_classes,
                dim,
                n_per_class,
                test_per_class,
                spread,
            } => Ok((
                data::synthetic_blobs_with(num_classes, dim, n_per_class, spread, seed, 0)?,
                data::synthetic_blobs_with(num_classes, dim, test_per_class, spread, seed, 1)?,
            )),
        }
    }
}

fn require_files(paths: &[&Path], format: &str) -> Result<()> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    Err(Error::Data(format!(
        "missing data files (expected {format}): {}. Set {DATA_ROOT_ENV} to the directory containing them",
        missing.join(", ")
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvConfig {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Mlp {
        hidden: Vec<usize>,
    },
    Cnn {
        conv: Vec<ConvConfig>,
        hidden: Vec<usize>,
    },
    Layers {
        layers: Vec<LayerSpec>,
    },
}

impl ModelConfig {
    pub fn build(&self, sample_shape: &[usize], classes: usize, seed: u64) -> Result<ModelSpec> {
        let spec = match self {
            ModelConfig::Mlp { hidden } => {
                ModelSpec::mlp(sample_shape.iter().product(), hidden, classes, seed)
            }
            ModelConfig::Cnn { conv, hidden } => {
                if sample_shape.len() != 3 {
                    return Err(Error::Config(format!(
                        "cnn models need image inputs, dataset samples are {sample_shape:?}"
                    )));
                }
                let mut layers = Vec::new();
                let mut ch = sample_shape[0];
                for c in conv {
                    layers.push(LayerSpec::Conv2d {
                        in_channels: ch,
                        out_channels: c.out_channels,
                        kernel: c.kernel,
                        stride: c.stride,
                    });
                    layers.push(LayerSpec::Relu);
                    ch = c.out_channels;
                }
                layers.push(LayerSpec::Flatten);
                let probe = ModelSpec {
                    input_shape: sample_shape.to_vec(),
                    layers: [layers.clone(), vec![LayerSpec::SoftmaxCrossEntropy]].concat(),
                    seed,
                };
                // the probe is only used to size the first dense layer
                let mut width = probe
                    .output_shapes()
                    .map_err(|e| Error::Config(e.to_string()))?[layers.len() - 1][0];
                for &h in hidden.iter().chain(std::iter::once(&classes)) {
                    layers.push(LayerSpec::Dense {
                        input: width,
                        output: h,
                    });
                    layers.push(LayerSpec::Relu);
                    width = h;
                }
                layers.pop();
                layers.push(LayerSpec::SoftmaxCrossEntropy);
                ModelSpec {
                    input_shape: sample_shape.to_vec(),
                    layers,
                    seed,
                }
            }
            ModelConfig::Layers { layers } => ModelSpec {
                input_shape: sample_shape.to_vec(),
                layers: layers.clone(),
                seed,
            },
        };
        spec.output_shapes()
            .map_err(|e| Error::Config(format!("model does not fit the dataset: {e}")))?;
        Ok(spec)
    }

    /// Whether inputs are fed flattened.
    pub fn flat_input(&self) -> bool {
        matches!(self, ModelConfig::Mlp { .. })
    }
}

fn default_loss_clip() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub regularizer: RegularizerConfig,
    #[serde(default)]
    pub optimizer: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_loss_clip")]
    pub loss_clip_b: f64,
    #[serde(default)]
    pub init: Init,
    /// Confidence parameter used when the bound is measured from this run.
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.loss_clip_b > 0.0) {
            return Err(Error::Config("loss_clip_b must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("delta must be in (0,1)".into()));
        }
        self.regularizer.validate()?;
        self.optimizer.validate()
    }

    /// Departures from the reference protocol, recorded in run metadata.
    pub fn deviations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.epochs != REFERENCE_EPOCHS {
            out.push(format!(
                "epochs {} (reference protocol {REFERENCE_EPOCHS})",
                self.epochs
            ));
        }
        if self.batch_size != REFERENCE_BATCH_SIZE {
            out.push(format!(
                "batch_size {} (reference protocol {REFERENCE_BATCH_SIZE})",
                self.batch_size
            ));
        }
        out.push(format!(
            "cross-entropy clipped at B = {} for bound measurement",
            self.loss_clip_b
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BLOBS: &str = r#"{
        "name": "t",
        "dataset": {"kind": "blobs", "num_classes": 3, "dim": 4, "n_per_class": 10, "test_per_class": 5},
        "model": {"kind": "mlp", "hidden": [8]},
        "regularizer": {"kind": "dropout", "p": 0.3},
        "epochs": 2, "batch_size": 4, "seed": 1, "output_dir": "runs/t"
    }"#;

    #[test]
    fn round_trips_and_rejects_unknown_keys() {
        let cfg = RunConfig::from_json(BLOBS).unwrap();
        let again = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        let bad = BLOBS.replace("\"seed\": 1", "\"seed\": 1, \"sead\": 2");
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn cnn_builder_sizes_dense_layer() {
        let m = ModelConfig::Cnn {
            conv: vec![ConvConfig {
                out_channels: 4,
                kernel: 3,
                stride: 2,
            }],
            hidden: vec![16],
        };
        let spec = m.build(&[3, 32, 32], 10, 0).unwrap();
        assert!(spec.layers.contains(&LayerSpec::Dense {
            input: 4 * 15 * 15,
            output: 16
        }));
        assert_eq!(spec.num_classes().unwrap(), 10);
        assert!(m.build(&[10], 10, 0).is_err());
    }

    #[test]
    fn missing_mnist_files_name_paths() {
        let cfg = DatasetConfig::Mnist {
            subset_per_class: None,
            test_subset_per_class: None,
        };
        match cfg.load(Path::new("/nonexistent-root"), 0) {
            Err(Error::Data(msg)) => {
                assert!(msg.contains("train-images-idx3-ubyte"));
                assert!(msg.contains(DATA_ROOT_ENV));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
