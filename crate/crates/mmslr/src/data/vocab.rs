//! Gloss and translation vocabularies.
//!
//! Gloss ids: 0 is the CTC blank; real glosses start at 1, ordered by
//! descending training frequency with lexicographic tie-break. Unseen
//! glosses at load time are a hard error (recognition cannot emit them).
//!
//! Translation ids: 0 = pad, 1 = BOS, 2 = EOS, 3 = UNK, then words in the
//! same frequency order. Unseen translation words map to UNK.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabWire", into = "VocabWire")]
pub struct VocabularyMap {
    id_to_gloss: Vec<String>,
    id_to_token: Vec<String>,
    #[serde(skip)]
    gloss_ids: HashMap<String, usize>,
    #[serde(skip)]
    token_ids: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabWire {
    glosses: Vec<String>,
    tokens: Vec<String>,
}

impl From<VocabWire> for VocabularyMap {
    fn from(w: VocabWire) -> Self {
        VocabularyMap::from_lists(w.glosses, w.tokens)
    }
}

impl From<VocabularyMap> for VocabWire {
    fn from(v: VocabularyMap) -> Self {
        VocabWire { glosses: v.id_to_gloss, tokens: v.id_to_token }
    }
}

fn by_frequency(counts: HashMap<String, usize>) -> Vec<String> {
    let mut items: Vec<(String, usize)> = counts.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    items.into_iter().map(|(w, _)| w).collect()
}

impl VocabularyMap {
    fn from_lists(id_to_gloss: Vec<String>, id_to_token: Vec<String>) -> Self {
        let gloss_ids = id_to_gloss
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, g)| (g.clone(), i))
            .collect();
        let token_ids = id_to_token
            .iter()
            .enumerate()
            .skip(RESERVED_TOKENS.len())
            .map(|(i, t)| (t.clone(), i))
            .collect();
        VocabularyMap { id_to_gloss, id_to_token, gloss_ids, token_ids }
    }

    /// Build from training-split annotations only.
    pub fn build<'a>(
        gloss_seqs: impl IntoIterator<Item = &'a [String]>,
        token_seqs: impl IntoIterator<Item = &'a [String]>,
    ) -> Self {
        let mut gloss_counts: HashMap<String, usize> = HashMap::new();
        for seq in gloss_seqs {
            for g in seq {
                *gloss_counts.entry(g.clone()).or_insert(0) += 1;
            }
        }
        let mut token_counts: HashMap<String, usize> = HashMap::new();
        for seq in token_seqs {
            for t in seq {
                *token_counts.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let mut id_to_gloss = vec!["<blank>".to_string()];
        id_to_gloss.extend(by_frequency(gloss_counts));
        let mut id_to_token: Vec<String> =
            RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(by_frequency(token_counts));
        Self::from_lists(id_to_gloss, id_to_token)
    }

    /// Gloss vocabulary size excluding the blank.
    pub fn gloss_vocab(&self) -> usize {
        self.id_to_gloss.len() - 1
    }

    /// Translation vocabulary size including reserved ids.
    pub fn token_vocab(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn gloss_id(&self, gloss: &str) -> Result<usize> {
        self.gloss_ids
            .get(gloss)
            .copied()
            .ok_or_else(|| Error::UnknownGloss { gloss: gloss.to_string() })
    }

    pub fn gloss_ids(&self, glosses: &[String]) -> Result<Vec<usize>> {
        glosses.iter().map(|g| self.gloss_id(g)).collect()
    }

    pub fn gloss_str(&self, id: usize) -> &str {
        &self.id_to_gloss[id]
    }

    /// Unknown words fall back to UNK.
    pub fn token_id(&self, token: &str) -> usize {
        self.token_ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.token_id(t)).collect()
    }

    pub fn token_str(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(raw: &[&[&str]]) -> Vec<Vec<String>> {
        raw.iter()
            .map(|s| s.iter().map(|w| w.to_string()).collect())
            .collect()
    }

    #[test]
    fn gloss_ids_by_frequency_then_lexicographic() {
        let g = seqs(&[&["b", "a", "b"], &["c", "a"]]);
        let v = VocabularyMap::build(g.iter().map(|s| s.as_slice()), std::iter::empty());
        // a and b both occur twice -> a first; c once
        assert_eq!(v.gloss_id("a").unwrap(), 1);
        assert_eq!(v.gloss_id("b").unwrap(), 2);
        assert_eq!(v.gloss_id("c").unwrap(), 3);
        assert_eq!(v.gloss_str(0), "<blank>");
        assert_eq!(v.gloss_vocab(), 3);
    }

    #[test]
    fn unseen_gloss_is_an_error_but_unseen_token_is_unk() {
        let g = seqs(&[&["hi"]]);
        let t = seqs(&[&["hello"]]);
        let v = VocabularyMap::build(
            g.iter().map(|s| s.as_slice()),
            t.iter().map(|s| s.as_slice()),
        );
        assert!(v.gloss_id("nope").is_err());
        assert_eq!(v.token_id("nope"), UNK);
        assert_eq!(v.token_id("hello"), 4);
    }

    #[test]
    fn reserved_token_ids() {
        let v = VocabularyMap::build(std::iter::empty(), std::iter::empty());
        assert_eq!(v.token_str(PAD), "<pad>");
        assert_eq!(v.token_str(BOS), "<bos>");
        assert_eq!(v.token_str(EOS), "<eos>");
        assert_eq!(v.token_str(UNK), "<unk>");
        assert_eq!(v.token_vocab(), 4);
    }

    #[test]
    fn serde_round_trip_preserves_lookup() {
        let g = seqs(&[&["x", "y"]]);
        let t = seqs(&[&["w1", "w2"]]);
        let v = VocabularyMap::build(
            g.iter().map(|s| s.as_slice()),
            t.iter().map(|s| s.as_slice()),
        );
        let json = serde_json::to_string(&v).unwrap();
        let back: VocabularyMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back.gloss_id("y").unwrap(), v.gloss_id("y").unwrap());
        assert_eq!(back.token_id("w2"), v.token_id("w2"));
    }
}
