//! Versioned checkpoint container shared by both model kinds: named
//! parameter tensors, the effective training config, the vocabulary, and a
//! content hash. Loading refuses a hash mismatch unless forced.

use crate::config::{fnv1a, TrainConfig};
use crate::data::VocabularyMap;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::slr::SlrModel;
use crate::slt::SltModel;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// "slr" or "slt".
    pub model_kind: String,
    pub feature_dim: usize,
    pub config: TrainConfig,
    pub vocab: VocabularyMap,
    pub params: ParamStore,
    /// FNV-1a over the serialized record with this field zeroed.
    pub content_hash: u64,
}

impl Checkpoint {
    fn compute_hash(&self) -> Result<u64> {
        let mut clean = self.clone();
        clean.content_hash = 0;
        Ok(fnv1a(&serde_json::to_vec(&clean)?))
    }

    fn seal(mut self) -> Result<Checkpoint> {
        self.content_hash = self.compute_hash()?;
        Ok(self)
    }

    pub fn from_slr(model: &SlrModel, config: &TrainConfig, vocab: &VocabularyMap) -> Result<Checkpoint> {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model_kind: "slr".into(),
            feature_dim: model.d,
            config: config.clone(),
            vocab: vocab.clone(),
            params: model.store.clone(),
            content_hash: 0,
        }
        .seal()
    }

    pub fn from_slt(model: &SltModel, config: &TrainConfig, vocab: &VocabularyMap) -> Result<Checkpoint> {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model_kind: "slt".into(),
            feature_dim: model.d,
            config: config.clone(),
            vocab: vocab.clone(),
            params: model.store.clone(),
            content_hash: 0,
        }
        .seal()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path, force: bool) -> Result<Checkpoint> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        let expected = ckpt.compute_hash()?;
        if ckpt.content_hash != expected {
            if !force {
                return Err(Error::Checkpoint(format!(
                    "content hash mismatch (stored {:#x}, computed {expected:#x}); pass --force to load anyway",
                    ckpt.content_hash
                )));
            }
            eprintln!("warning: loading checkpoint despite content hash mismatch");
        }
        Ok(ckpt)
    }

    /// Rebuild the recognition model this checkpoint was saved from.
    pub fn build_slr(&self) -> Result<SlrModel> {
        if self.model_kind != "slr" {
            return Err(Error::Checkpoint(format!(
                "expected an slr checkpoint, found '{}'",
                self.model_kind
            )));
        }
        let mut model = SlrModel::init(
            self.feature_dim,
            self.vocab.gloss_vocab(),
            self.config.fusion_mode,
            self.config.seed,
        )?;
        model.store.load_from(&self.params)?;
        Ok(model)
    }

    /// Rebuild the translation model this checkpoint was saved from.
    pub fn build_slt(&self) -> Result<SltModel> {
        if self.model_kind != "slt" {
            return Err(Error::Checkpoint(format!(
                "expected an slt checkpoint, found '{}'",
                self.model_kind
            )));
        }
        let mut model = SltModel::init(
            self.feature_dim,
            self.vocab.token_vocab(),
            &self.config.transformer,
            self.config.fusion_mode,
            self.config.seed,
        )?;
        model.store.load_from(&self.params)?;
        Ok(model)
    }
}
