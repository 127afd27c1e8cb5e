//! Sequence networks surrounding fusion: temporal reduction, BiLSTM,
//! linear classifier heads, and the transformer encoder-decoder used for
//! translation.

pub mod bilstm;
pub mod classifier;
pub mod temporal;
pub mod transformer;

pub use bilstm::BiLstmParams;
pub use classifier::ClassifierHead;
pub use temporal::{reduced_len, TemporalReducer};
pub use transformer::{TransformerConfig, TransformerParams};
