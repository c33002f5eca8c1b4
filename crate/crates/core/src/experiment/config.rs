use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{LayerSpec, NetworkSpec};
use crate::optim::SgdConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    /// conv → ReLU → conv → ReLU → FC(classes)
    A,
    /// conv → ReLU → pool → conv → ReLU → pool → FC(hidden) → ReLU → FC(classes)
    B,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::A => "A",
            Architecture::B => "B",
        })
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Architecture::A),
            "B" | "b" => Ok(Architecture::B),
            other => Err(Error::Parse(format!("unknown architecture `{other}` (expected A or B)"))),
        }
    }
}

/// One training run. Field order is part of the config hash.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub filter_size: usize,
    pub stride: usize,
    pub learning_rate: f64,
    pub architecture: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub k1: usize,
    pub k2: usize,
    pub fc_hidden: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub padding: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            filter_size: 3,
            stride: 1,
            learning_rate: 0.005,
            architecture: Architecture::B,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            k1: 16,
            k2: 32,
            fc_hidden: 128,
            pool_window: 2,
            pool_stride: 2,
            padding: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if ![3, 5].contains(&self.filter_size) {
            return Err(Error::Config(format!("filter size must be 3 or 5, got {}", self.filter_size)));
        }
        if ![1, 2].contains(&self.stride) {
            return Err(Error::Config(format!("stride must be 1 or 2, got {}", self.stride)));
        }
        if self.k1 == 0 || self.k2 == 0 || self.fc_hidden == 0 {
            return Err(Error::Config("filter counts and hidden width must be at least 1".into()));
        }
        self.sgd().validate()
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    /// Layer stack for a `[1, 50, 50]`-style input, shape-checked.
    pub fn network_spec(&self, input: [usize; 3], classes: usize) -> Result<NetworkSpec> {
        let spec = architecture_spec(
            self.architecture,
            input,
            classes,
            ArchitectureParams {
                filter_size: self.filter_size,
                stride: self.stride,
                padding: self.padding,
                k1: self.k1,
                k2: self.k2,
                fc_hidden: self.fc_hidden,
                pool_window: self.pool_window,
                pool_stride: self.pool_stride,
            },
        );
        spec.shape_chain()?;
        Ok(spec)
    }

    /// First 12 hex digits of the SHA-256 of the config's JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..6])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchitectureParams {
    pub filter_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub k1: usize,
    pub k2: usize,
    pub fc_hidden: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
}

pub fn architecture_spec(arch: Architecture, input: [usize; 3], classes: usize, p: ArchitectureParams) -> NetworkSpec {
    let conv = |filters| LayerSpec::Conv {
        filters,
        extent: p.filter_size,
        stride: p.stride,
        padding: p.padding,
    };
    let pool = LayerSpec::MaxPool {
        window: p.pool_window,
        stride: p.pool_stride,
    };
    let layers = match arch {
        Architecture::A => vec![
            conv(p.k1),
            LayerSpec::Relu,
            conv(p.k2),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_features: classes },
            LayerSpec::Softmax,
        ],
        Architecture::B => vec![
            conv(p.k1),
            LayerSpec::Relu,
            pool,
            conv(p.k2),
            LayerSpec::Relu,
            pool,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                out_features: p.fc_hidden,
            },
            LayerSpec::Relu,
            LayerSpec::Dense { out_features: classes },
            LayerSpec::Softmax,
        ],
    };
    NetworkSpec { input, layers }
}
