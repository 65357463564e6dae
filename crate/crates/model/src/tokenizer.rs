//! Frozen word-level tokenizer.
//!
//! Text is lowercased and split into letter runs, single digits and single
//! punctuation characters. The vocabulary is fixed: special tokens, every
//! token of the prompt template corpus, then 256 hash buckets that absorb
//! out-of-vocabulary words.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::prompt::template_corpus;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const OOV_BUCKETS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenizerError {
    #[error("cannot tokenize empty text")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTokens {
    pub ids: Vec<usize>,
}

impl PromptTokens {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Splits text into normalized word pieces.
pub fn pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphabetic() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::from_corpus(&template_corpus())
    }
}

impl Tokenizer {
    pub fn from_corpus(corpus: &str) -> Self {
        let words: BTreeSet<String> = pieces(corpus).into_iter().collect();
        let mut vocab = vec![PAD.to_string(), BOS.to_string()];
        vocab.extend(words);
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { vocab, index }
    }

    /// Known words plus the hash buckets.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + OOV_BUCKETS
    }

    pub fn oov_range(&self) -> std::ops::Range<usize> {
        self.vocab.len()..self.vocab.len() + OOV_BUCKETS
    }

    pub fn id_of(&self, piece: &str) -> usize {
        match self.index.get(piece) {
            Some(&i) => i,
            None => self.vocab.len() + (fnv1a(piece) % OOV_BUCKETS as u64) as usize,
        }
    }

    pub fn tokenize(&self, text: &str) -> Result<PromptTokens, TokenizerError> {
        let ids: Vec<usize> = pieces(text).iter().map(|p| self.id_of(p)).collect();
        if ids.is_empty() {
            return Err(TokenizerError::Empty);
        }
        Ok(PromptTokens { ids })
    }

    /// Debug rendering; hash buckets print as `<oov:k>`.
    pub fn detokenize(&self, tokens: &PromptTokens) -> String {
        tokens
            .ids
            .iter()
            .map(|&id| match self.vocab.get(id) {
                Some(w) => w.clone(),
                None => format!("<oov:{}>", id - self.vocab.len()),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitting_rules() {
        assert_eq!(pieces("PV_power at 15-min!"), vec!["pv", "_", "power", "at", "1", "5", "-", "min", "!"]);
    }

    #[test]
    fn oov_goes_to_bucket() {
        let t = Tokenizer::default();
        let ids = t.tokenize("zyzzyva").unwrap().ids;
        assert_eq!(ids.len(), 1);
        assert!(t.oov_range().contains(&ids[0]));
        assert_eq!(t.tokenize("zyzzyva").unwrap().ids, ids);
        assert_eq!(t.tokenize("  "), Err(TokenizerError::Empty));
    }
}
