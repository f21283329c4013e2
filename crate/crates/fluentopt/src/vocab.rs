//! Closed word-level vocabulary and the fixed-length token sequences the
//! optimizer edits.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MASK_TOKEN: &str = "<mask>";
pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";

pub const MASK_ID: u32 = 0;
pub const PAD_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;

/// Ordered list of distinct string tokens; ids are 0..V-1 with no gaps.
/// The first four ids are reserved for mask/pad/bos/eos.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from the full ordered token list. The first four
    /// entries must be the reserved specials.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 {
            return Err(Error::InvalidConfig(format!(
                "vocabulary needs at least 4 tokens for specials, got {}",
                tokens.len()
            )));
        }
        let specials = [MASK_TOKEN, PAD_TOKEN, BOS_TOKEN, EOS_TOKEN];
        for (i, want) in specials.iter().enumerate() {
            if tokens[i] != *want {
                return Err(Error::InvalidConfig(format!(
                    "token {i} must be the reserved {want:?}, got {:?}",
                    tokens[i]
                )));
            }
        }
        let mut lookup = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if lookup.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, lookup })
    }

    /// Builds a vocabulary from the non-special word list, prepending the
    /// reserved specials.
    pub fn with_words<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut tokens: Vec<String> =
            vec![MASK_TOKEN.into(), PAD_TOKEN.into(), BOS_TOKEN.into(), EOS_TOKEN.into()];
        tokens.extend(words.into_iter().map(Into::into));
        Vocab::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::TokenOutOfRange { id, vocab: self.tokens.len() })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Whitespace-split tokenization; every word must be in the vocabulary.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| Error::UnknownToken(w.to_string())))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let words: Result<Vec<&str>> = ids.iter().map(|&id| self.token(id)).collect();
        Ok(words?.join(" "))
    }

    /// One token per line, id = line number.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = self.tokens.join("\n") + "\n";
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = body.lines().map(str::to_string).collect();
        Vocab::new(tokens)
    }

    /// Rebuilds the id lookup after deserialization.
    pub fn rebuild_lookup(&mut self) {
        self.lookup =
            self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    }
}

/// Fixed-length sequence of token ids with a frozen-position mask
/// (true = not editable). The optimization variable t.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub frozen: Vec<bool>,
}

impl TokenSeq {
    /// All positions editable.
    pub fn new(ids: Vec<u32>) -> Self {
        let frozen = vec![false; ids.len()];
        TokenSeq { ids, frozen }
    }

    pub fn with_frozen(ids: Vec<u32>, frozen: Vec<bool>) -> Result<Self> {
        if ids.len() != frozen.len() {
            return Err(Error::LengthMismatch { expected: ids.len(), got: frozen.len() });
        }
        Ok(TokenSeq { ids, frozen })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn unfrozen_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.frozen[i]).collect()
    }

    /// Every id must be < vocab size.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        for &id in &self.ids {
            if id as usize >= vocab_size {
                return Err(Error::TokenOutOfRange { id, vocab: vocab_size });
            }
        }
        Ok(())
    }
}

/// Loads a line-delimited UTF-8 corpus, one document per line, tokenized by
/// the vocabulary. Blank lines are skipped.
pub fn load_corpus(path: &Path, vocab: &Vocab) -> Result<Vec<Vec<u32>>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for line in body.lines() {
        if line.trim().is_empty() {
            continue;
        }
        docs.push(vocab.encode(line)?);
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(docs)
}

pub fn save_corpus(path: &Path, vocab: &Vocab, docs: &[Vec<u32>]) -> Result<()> {
    let mut body = String::new();
    for doc in docs {
        body.push_str(&vocab.decode(doc)?);
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}
