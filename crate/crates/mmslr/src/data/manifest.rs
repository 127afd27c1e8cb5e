//! Line-delimited JSON manifests tying feature files to annotations, and
//! sample loading with the ingestion-time normalizations:
//!
//! - flow sequences one frame shorter than RGB get their final frame
//!   duplicated (flow for n frames has n-1 displacement fields);
//! - both streams are padded to a multiple of 4 frames by repeating the
//!   final frame, so two rounds of pooling divide evenly;
//! - gloss targets are checked for CTC feasibility against the reduced
//!   sequence length.

use crate::data::feature_file::read_feature_file;
use crate::data::vocab::VocabularyMap;
use crate::error::{Error, Result};
use crate::fusion::{FeatureSequence, Modality};
use crate::losses::ctc_required_frames;
use crate::seqnet::reduced_len;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// One manifest line. Feature paths are relative to the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub rgb: String,
    pub flow: String,
    pub gloss: Vec<String>,
    pub translation: Vec<String>,
    pub split: Split,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Manifest {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Manifest {
            path: path.display().to_string(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::Manifest {
            path: path.display().to_string(),
            reason: "no entries".into(),
        });
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// A fully ingested sample: aligned streams, integer targets.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub id: String,
    pub rgb: FeatureSequence,
    pub flow: FeatureSequence,
    pub gloss_ids: Vec<usize>,
    pub token_ids: Vec<usize>,
}

fn repeat_last_rows(frames: &Tensor, target_n: usize) -> Tensor {
    let (n, d) = (frames.rows(), frames.cols());
    let mut data = frames.data().to_vec();
    let last = frames.row(n - 1).to_vec();
    for _ in n..target_n {
        data.extend_from_slice(&last);
    }
    Tensor::new(vec![target_n, d], data).expect("repeat_last_rows shape")
}

fn sample_err(id: &str, reason: impl Into<String>) -> Error {
    Error::Sample { id: id.to_string(), reason: reason.into() }
}

/// Load one entry: read both streams, align/pad, map annotations to ids.
pub fn load_sample(root: &Path, entry: &ManifestEntry, vocab: &VocabularyMap) -> Result<LoadedSample> {
    let rgb = read_feature_file(&root.join(&entry.rgb), Modality::Rgb)?;
    let flow_raw = read_feature_file(&root.join(&entry.flow), Modality::Flow)?;
    let n = rgb.len();
    let nf = flow_raw.len();
    if nf != n && nf + 1 != n {
        return Err(sample_err(
            &entry.id,
            format!("flow has {nf} frames, rgb has {n} (expected n or n-1)"),
        ));
    }
    if flow_raw.dim() != rgb.dim() {
        return Err(sample_err(
            &entry.id,
            format!("feature dims differ: rgb {} vs flow {}", rgb.dim(), flow_raw.dim()),
        ));
    }
    let padded = n.div_ceil(4) * 4;
    let rgb_frames = if padded == n { rgb.frames } else { repeat_last_rows(&rgb.frames, padded) };
    let flow_frames = if padded == nf {
        flow_raw.frames
    } else {
        repeat_last_rows(&flow_raw.frames, padded)
    };
    let gloss_ids = vocab.gloss_ids(&entry.gloss)?;
    let required = ctc_required_frames(&gloss_ids);
    let available = reduced_len(padded);
    if required > available {
        return Err(sample_err(
            &entry.id,
            format!("gloss target needs {required} reduced frames, only {available} available"),
        ));
    }
    Ok(LoadedSample {
        id: entry.id.clone(),
        rgb: FeatureSequence::new(Modality::Rgb, rgb_frames)?,
        flow: FeatureSequence::new(Modality::Flow, flow_frames)?,
        gloss_ids,
        token_ids: vocab.token_ids(&entry.translation),
    })
}

/// A dataset loaded from a manifest: vocabulary built from the training
/// split, every split ingested.
#[derive(Debug)]
pub struct SampleSet {
    pub vocab: VocabularyMap,
    pub train: Vec<LoadedSample>,
    pub dev: Vec<LoadedSample>,
    pub test: Vec<LoadedSample>,
}

impl SampleSet {
    pub fn load(manifest_path: &Path) -> Result<SampleSet> {
        let entries = read_manifest(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let train_entries: Vec<&ManifestEntry> =
            entries.iter().filter(|e| e.split == Split::Train).collect();
        if train_entries.is_empty() {
            return Err(Error::Manifest {
                path: manifest_path.display().to_string(),
                reason: "no training entries".into(),
            });
        }
        let vocab = VocabularyMap::build(
            train_entries.iter().map(|e| e.gloss.as_slice()),
            train_entries.iter().map(|e| e.translation.as_slice()),
        );
        let mut set = SampleSet { vocab, train: Vec::new(), dev: Vec::new(), test: Vec::new() };
        for e in &entries {
            let sample = load_sample(&root, e, &set.vocab)?;
            match e.split {
                Split::Train => set.train.push(sample),
                Split::Dev => set.dev.push(sample),
                Split::Test => set.test.push(sample),
            }
        }
        Ok(set)
    }

    pub fn split(&self, split: Split) -> &[LoadedSample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Feature dimensionality, taken from the first training sample.
    pub fn feature_dim(&self) -> usize {
        self.train[0].rgb.dim()
    }
}
