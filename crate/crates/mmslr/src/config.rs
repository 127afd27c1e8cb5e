//! Training configuration shared by the recognition and translation
//! pipelines, plus seeding helpers.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::seqnet::TransformerConfig;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// How the two streams are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Cross-modal attention: both attended streams mixed into the RGB path.
    Cma,
    /// Elementwise sum of the reduced streams.
    Sum,
    /// Two independent branches, log-prob averaged at evaluation.
    Ensemble,
    RgbOnly,
    FlowOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 5] = [
        FusionMode::Cma,
        FusionMode::Sum,
        FusionMode::Ensemble,
        FusionMode::RgbOnly,
        FusionMode::FlowOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Cma => "cma",
            FusionMode::Sum => "sum",
            FusionMode::Ensemble => "ensemble",
            FusionMode::RgbOnly => "rgb_only",
            FusionMode::FlowOnly => "flow_only",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion mode '{s}'")))
    }
}

/// Which side of the distillation pair is the (detached) teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlTeacher {
    /// Branch heads chase the fused head (the default regime).
    Fused,
    /// Fused head chases the branch heads.
    Branch,
}

impl KlTeacher {
    pub fn as_str(self) -> &'static str {
        match self {
            KlTeacher::Fused => "fused",
            KlTeacher::Branch => "branch",
        }
    }
}

impl fmt::Display for KlTeacher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KlTeacher {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(KlTeacher::Fused),
            "branch" => Ok(KlTeacher::Branch),
            other => Err(Error::Config(format!("unknown kl teacher '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub alpha: f64,
    pub beta: f64,
    pub fusion_mode: FusionMode,
    pub kl_teacher: KlTeacher,
    pub freeze_flow_reduce: bool,
    pub label_smoothing: f64,
    pub smooth_bleu: bool,
    pub transformer: TransformerConfig,
    pub max_decode_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            epochs: 30,
            batch_size: 4,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            alpha: 1.0,
            beta: 1.0,
            fusion_mode: FusionMode::Cma,
            kl_teacher: KlTeacher::Fused,
            freeze_flow_reduce: false,
            label_smoothing: 0.1,
            smooth_bleu: true,
            transformer: TransformerConfig::default(),
            max_decode_len: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("grad_clip", self.grad_clip),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("label_smoothing", self.label_smoothing),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// 64-bit FNV-1a; used for config hashing and component seed derivation.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// RNG for one named model component. Keyed by name rather than by
/// registration order, so a component shared between two architectures gets
/// identical initialization under the same seed.
pub fn component_rng(seed: u64, name: &str) -> Rng {
    Rng::new(seed ^ fnv1a(name.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_mode_round_trips_through_strings() {
        for m in FusionMode::ALL {
            assert_eq!(m.as_str().parse::<FusionMode>().unwrap(), m);
        }
        assert!("rgb".parse::<FusionMode>().is_err());
    }

    #[test]
    fn component_rng_is_order_independent() {
        let a1 = component_rng(5, "bilstm").tensor_normal(vec![2, 2], 1.0);
        let _other = component_rng(5, "fusion").tensor_normal(vec![4, 4], 1.0);
        let a2 = component_rng(5, "bilstm").tensor_normal(vec![2, 2], 1.0);
        assert_eq!(a1, a2);
        assert_ne!(
            component_rng(5, "bilstm").uniform(0.0, 1.0),
            component_rng(6, "bilstm").uniform(0.0, 1.0)
        );
    }

    #[test]
    fn fnv1a_known_vector() {
        // standard FNV-1a test vector
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn default_config_is_valid() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig { learning_rate: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
