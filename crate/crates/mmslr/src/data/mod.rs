//! Dataset handling: binary feature files, line-delimited manifests,
//! vocabularies, and the synthetic two-modality task generator.

pub mod feature_file;
pub mod manifest;
pub mod synthetic;
pub mod vocab;

pub use feature_file::{read_feature_file, write_feature_file};
pub use manifest::{LoadedSample, ManifestEntry, SampleSet, Split};
pub use synthetic::{generate_synthetic, Coupling, SyntheticTaskSpec};
pub use vocab::VocabularyMap;
