//! Vocabulary with reserved symbols for the held-out-word language model.
//!
//! Id layout is fixed: 0 = the hold-out placeholder that replaces the focus
//! word, 1 = unknown, 2 = padding. Corpus words start at id 3, ranked by
//! descending frequency with ties broken lexicographically, so the same
//! corpus always yields the same vocabulary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const HOLDOUT_TOKEN: &str = "$";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

pub const HOLDOUT_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_ID: usize = 2;

/// Number of reserved ids at the front of the vocabulary.
pub const RESERVED: usize = 3;

const RESERVED_TOKENS: [&str; RESERVED] = [HOLDOUT_TOKEN, UNK_TOKEN, PAD_TOKEN];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    ids: BTreeMap<String, usize>,
    /// Corpus frequency per id. The unknown slot aggregates all
    /// out-of-vocabulary occurrences; hold-out and padding stay zero.
    counts: Vec<u64>,
    total_tokens: u64,
}

impl Vocab {
    /// Builds a vocabulary of at most `max_size` entries (reserved included).
    ///
    /// Corpus tokens that collide with a reserved symbol count toward the
    /// reserved id instead of becoming separate entries.
    pub fn build(sentences: &[Vec<String>], max_size: usize) -> Result<Vocab> {
        if max_size <= RESERVED {
            return Err(Error::InvalidInput(format!(
                "vocabulary size {max_size} leaves no room after {RESERVED} reserved symbols"
            )));
        }
        let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
        let mut total: u64 = 0;
        let mut reserved_counts = [0u64; RESERVED];
        for sentence in sentences {
            for token in sentence {
                total += 1;
                if let Some(i) = RESERVED_TOKENS.iter().position(|r| r == token) {
                    reserved_counts[i] += 1;
                } else {
                    *freq.entry(token.as_str()).or_insert(0) += 1;
                }
            }
        }
        if total == 0 {
            return Err(Error::InvalidInput(
                "cannot build a vocabulary from an empty token stream".to_string(),
            ));
        }

        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - RESERVED);

        let mut words: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut counts: Vec<u64> = reserved_counts.to_vec();
        for (word, count) in &ranked {
            words.push(word.to_string());
            counts.push(*count);
        }
        // Everything below the frequency cut contributes to the unknown slot.
        let kept: u64 = counts.iter().sum();
        counts[UNK_ID] += total - kept;
        let mut ids = BTreeMap::new();
        for (id, word) in words.iter().enumerate() {
            ids.insert(word.clone(), id);
        }
        Ok(Vocab {
            words,
            ids,
            counts,
            total_tokens: total,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Maps a token to its id, falling back to the unknown id.
    pub fn id_of(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// Relative corpus frequency of an id; zero when counts are unavailable
    /// (a vocabulary loaded from disk carries no counts).
    pub fn rel_freq(&self, id: usize) -> f64 {
        if self.total_tokens == 0 {
            return 0.0;
        }
        self.counts[id] as f64 / self.total_tokens as f64
    }

    /// SHA-256 over the word list, used to pin models to their vocabulary.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for word in &self.words {
            hasher.update(word.as_bytes());
            hasher.update(b"\n");
        }
        hex_string(&hasher.finalize())
    }

    /// Writes one word per line in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for word in &self.words {
            writeln!(out, "{word}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Loads a word-per-line vocabulary. Frequencies are not stored on disk,
    /// so a loaded vocabulary supports inference but not downsampling.
    pub fn load(path: &Path) -> Result<Vocab> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut words = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.is_empty() {
                words.push(line);
            }
        }
        if words.len() < RESERVED {
            return Err(Error::parse(path, 0, "vocabulary shorter than reserved prefix"));
        }
        for (i, expect) in RESERVED_TOKENS.iter().enumerate() {
            if words[i] != *expect {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("reserved slot {i} is `{}`, expected `{expect}`", words[i]),
                ));
            }
        }
        let mut ids = BTreeMap::new();
        for (id, word) in words.iter().enumerate() {
            if ids.insert(word.clone(), id).is_some() {
                return Err(Error::parse(path, id + 1, format!("duplicate word `{word}`")));
            }
        }
        let counts = vec![0; words.len()];
        Ok(Vocab {
            words,
            ids,
            counts,
            total_tokens: 0,
        })
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
