//! Corpus ingestion: sense inventories, labeled examples, unlabeled pools,
//! and raw language-model text.
//!
//! All structured inputs are JSONL, one record per line. Loaders validate
//! every record against the sense inventory, report failures with file and
//! line position, and group examples by lemma. Groupings use [`BTreeMap`]
//! so iteration order is deterministic regardless of input order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default per-lemma cap on the unlabeled pool.
pub const DEFAULT_UNLABELED_CAP: usize = 1000;

/// A tokenized sentence with one focus position.
///
/// Invariant: `tokens` is non-empty and `focus < tokens.len()`. Construct
/// through [`Sentence::new`] to keep the invariant checked.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub focus: usize,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, focus: usize) -> Result<Self> {
        if tokens.is_empty() || focus >= tokens.len() {
            return Err(Error::FocusOutOfRange {
                context: "sentence".to_string(),
                focus,
                len: tokens.len(),
            });
        }
        Ok(Sentence { tokens, focus })
    }

    pub fn focus_token(&self) -> &str {
        &self.tokens[self.focus]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A sentence whose focus occurrence carries a gold sense label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub sentence: Sentence,
    pub lemma: String,
    pub sense_id: String,
}

/// One lemma's entry in the sense inventory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryEntry {
    /// Sense ids in inventory order. This order breaks classifier ties.
    pub senses: Vec<String>,
    pub pos: Option<String>,
    /// Optional prior counts aligned with `senses`.
    pub counts: Option<Vec<u64>>,
}

/// The full sense inventory, keyed by lemma.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SenseInventory {
    entries: BTreeMap<String, InventoryEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InventoryRecord {
    lemma: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos: Option<String>,
    senses: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    counts: Option<Vec<u64>>,
}

impl SenseInventory {
    pub fn from_entries(entries: BTreeMap<String, InventoryEntry>) -> Result<Self> {
        for (lemma, entry) in &entries {
            validate_entry(lemma, entry, "inventory")?;
        }
        Ok(SenseInventory { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (line_no, value) in read_jsonl(path)? {
            let record: InventoryRecord = serde_json::from_value(value)
                .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
            let context = format!("{}:{}", path.display(), line_no);
            let entry = InventoryEntry {
                senses: record.senses,
                pos: record.pos,
                counts: record.counts,
            };
            validate_entry(&record.lemma, &entry, &context)?;
            if entries.insert(record.lemma.clone(), entry).is_some() {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("duplicate inventory entry for lemma `{}`", record.lemma),
                ));
            }
        }
        if entries.is_empty() {
            return Err(Error::parse(path, 0, "empty sense inventory"));
        }
        Ok(SenseInventory { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for (lemma, entry) in &self.entries {
            let record = InventoryRecord {
                lemma: lemma.clone(),
                pos: entry.pos.clone(),
                senses: entry.senses.clone(),
                counts: entry.counts.clone(),
            };
            let line = serde_json::to_string(&record)
                .map_err(|e| Error::parse(path, 0, e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn entry(&self, lemma: &str) -> Result<&InventoryEntry> {
        self.entries.get(lemma).ok_or_else(|| Error::UnknownLemma {
            lemma: lemma.to_string(),
            context: String::new(),
        })
    }

    /// Sense ids for `lemma` in inventory order.
    pub fn senses(&self, lemma: &str) -> Result<&[String]> {
        Ok(&self.entry(lemma)?.senses)
    }

    pub fn pos(&self, lemma: &str) -> Option<&str> {
        self.entries.get(lemma).and_then(|e| e.pos.as_deref())
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.entries.contains_key(lemma)
    }

    pub fn is_polysemous(&self, lemma: &str) -> bool {
        self.entries
            .get(lemma)
            .map(|e| e.senses.len() > 1)
            .unwrap_or(false)
    }

    /// Prior count for one sense, if the inventory carries counts.
    pub fn prior_count(&self, lemma: &str, sense: &str) -> Option<u64> {
        let entry = self.entries.get(lemma)?;
        let counts = entry.counts.as_ref()?;
        let idx = entry.senses.iter().position(|s| s == sense)?;
        counts.get(idx).copied()
    }

    pub fn lemmas(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn validate_entry(lemma: &str, entry: &InventoryEntry, context: &str) -> Result<()> {
    if entry.senses.is_empty() {
        return Err(Error::EmptySenses {
            context: context.to_string(),
            lemma: lemma.to_string(),
        });
    }
    let mut seen = BTreeSet::new();
    for sense in &entry.senses {
        if !seen.insert(sense.as_str()) {
            return Err(Error::DuplicateSense {
                context: context.to_string(),
                lemma: lemma.to_string(),
                sense: sense.clone(),
            });
        }
    }
    if let Some(counts) = &entry.counts {
        if counts.len() != entry.senses.len() {
            return Err(Error::InvalidInput(format!(
                "{context}: lemma `{lemma}` has {} senses but {} counts",
                entry.senses.len(),
                counts.len()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct LabeledRecord {
    tokens: Vec<String>,
    focus: usize,
    lemma: String,
    sense: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct UnlabeledRecord {
    tokens: Vec<String>,
    focus: usize,
    lemma: String,
}

/// Labeled examples grouped by lemma, file order preserved within a lemma.
pub type LabeledByLemma = BTreeMap<String, Vec<LabeledExample>>;

/// Unlabeled sentences grouped by lemma, file order preserved within a lemma.
pub type UnlabeledByLemma = BTreeMap<String, Vec<Sentence>>;

/// Loads labeled examples and validates each against the inventory.
pub fn load_labeled(path: &Path, inventory: &SenseInventory) -> Result<LabeledByLemma> {
    let mut grouped: LabeledByLemma = BTreeMap::new();
    for (line_no, value) in read_jsonl(path)? {
        let record: LabeledRecord = serde_json::from_value(value)
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        let context = format!("{}:{}", path.display(), line_no);
        let senses = inventory
            .senses(&record.lemma)
            .map_err(|_| Error::UnknownLemma {
                lemma: record.lemma.clone(),
                context: format!(" at {context}"),
            })?;
        if !senses.contains(&record.sense) {
            return Err(Error::UnknownSense {
                context,
                lemma: record.lemma,
                sense: record.sense,
            });
        }
        let sentence =
            Sentence::new(record.tokens, record.focus).map_err(|e| relocate_focus(e, &context))?;
        grouped.entry(record.lemma.clone()).or_default().push(LabeledExample {
            sentence,
            lemma: record.lemma,
            sense_id: record.sense,
        });
    }
    Ok(grouped)
}

/// Loads unlabeled sentences, keeping the first `cap` per lemma in file order.
pub fn load_unlabeled(path: &Path, cap: usize) -> Result<UnlabeledByLemma> {
    let mut grouped: UnlabeledByLemma = BTreeMap::new();
    for (line_no, value) in read_jsonl(path)? {
        let record: UnlabeledRecord = serde_json::from_value(value)
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        let context = format!("{}:{}", path.display(), line_no);
        let sentence =
            Sentence::new(record.tokens, record.focus).map_err(|e| relocate_focus(e, &context))?;
        let pool = grouped.entry(record.lemma).or_default();
        if pool.len() < cap {
            pool.push(sentence);
        }
    }
    Ok(grouped)
}

pub fn save_labeled(grouped: &LabeledByLemma, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for examples in grouped.values() {
        for ex in examples {
            let record = LabeledRecord {
                tokens: ex.sentence.tokens.clone(),
                focus: ex.sentence.focus,
                lemma: ex.lemma.clone(),
                sense: ex.sense_id.clone(),
            };
            let line =
                serde_json::to_string(&record).map_err(|e| Error::parse(path, 0, e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn save_unlabeled(grouped: &UnlabeledByLemma, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (lemma, sentences) in grouped {
        for s in sentences {
            let record = UnlabeledRecord {
                tokens: s.tokens.clone(),
                focus: s.focus,
                lemma: lemma.clone(),
            };
            let line =
                serde_json::to_string(&record).map_err(|e| Error::parse(path, 0, e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Loads whitespace-tokenized language-model text, skipping blank lines.
pub fn load_lm_text(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if !tokens.is_empty() {
            sentences.push(tokens);
        }
    }
    Ok(sentences)
}

/// All task inputs for one run, loaded and validated together.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    pub inventory: SenseInventory,
    pub labeled: LabeledByLemma,
    pub unlabeled: UnlabeledByLemma,
}

impl CorpusIndex {
    pub fn load(
        inventory_path: &Path,
        labeled_path: &Path,
        unlabeled_path: Option<&Path>,
        cap: usize,
    ) -> Result<Self> {
        let inventory = SenseInventory::load(inventory_path)?;
        let labeled = load_labeled(labeled_path, &inventory)?;
        let unlabeled = match unlabeled_path {
            Some(p) => load_unlabeled(p, cap)?,
            None => BTreeMap::new(),
        };
        Ok(CorpusIndex {
            inventory,
            labeled,
            unlabeled,
        })
    }
}

fn relocate_focus(err: Error, context: &str) -> Error {
    match err {
        Error::FocusOutOfRange { focus, len, .. } => Error::FocusOutOfRange {
            context: context.to_string(),
            focus,
            len,
        },
        other => other,
    }
}

/// Reads a JSONL file into `(line_number, value)` pairs, skipping blank lines.
pub(crate) fn read_jsonl(path: &Path) -> Result<Vec<(usize, serde_json::Value)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        records.push((idx + 1, value));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn toy_inventory() -> SenseInventory {
        let mut entries = BTreeMap::new();
        entries.insert(
            "bank".to_string(),
            InventoryEntry {
                senses: vec!["bank%1".to_string(), "bank%2".to_string()],
                pos: Some("NOUN".to_string()),
                counts: Some(vec![7, 3]),
            },
        );
        entries.insert(
            "run".to_string(),
            InventoryEntry {
                senses: vec!["run%1".to_string()],
                pos: Some("VERB".to_string()),
                counts: None,
            },
        );
        SenseInventory::from_entries(entries).unwrap()
    }

    #[test]
    fn sentence_rejects_bad_focus() {
        assert!(Sentence::new(vec!["a".into()], 0).is_ok());
        assert!(matches!(
            Sentence::new(vec!["a".into()], 1),
            Err(Error::FocusOutOfRange { .. })
        ));
        assert!(matches!(
            Sentence::new(vec![], 0),
            Err(Error::FocusOutOfRange { .. })
        ));
    }

    #[test]
    fn inventory_load_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "inv.jsonl",
            concat!(
                r#"{"lemma":"bank","pos":"NOUN","senses":["bank%1","bank%2"],"counts":[7,3]}"#,
                "\n",
                r#"{"lemma":"run","senses":["run%1"]}"#,
                "\n",
            ),
        );
        let inv = SenseInventory::load(&path).unwrap();
        assert_eq!(inv.len(), 2);
        assert_eq!(inv.senses("bank").unwrap(), ["bank%1", "bank%2"]);
        assert_eq!(inv.pos("bank"), Some("NOUN"));
        assert_eq!(inv.pos("run"), None);
        assert_eq!(inv.prior_count("bank", "bank%2"), Some(3));
        assert_eq!(inv.prior_count("run", "run%1"), None);
        assert!(inv.is_polysemous("bank"));
        assert!(!inv.is_polysemous("run"));
        assert!(matches!(
            inv.senses("missing"),
            Err(Error::UnknownLemma { .. })
        ));
    }

    #[test]
    fn inventory_rejects_duplicate_sense() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "inv.jsonl",
            r#"{"lemma":"bank","senses":["bank%1","bank%1"]}"#,
        );
        assert!(matches!(
            SenseInventory::load(&path),
            Err(Error::DuplicateSense { .. })
        ));
    }

    #[test]
    fn inventory_rejects_empty_senses_and_bad_counts() {
        let dir = tempfile::tempdir().unwrap();
        let empty = write_file(&dir, "empty.jsonl", r#"{"lemma":"bank","senses":[]}"#);
        assert!(matches!(
            SenseInventory::load(&empty),
            Err(Error::EmptySenses { .. })
        ));
        let bad_counts = write_file(
            &dir,
            "counts.jsonl",
            r#"{"lemma":"bank","senses":["a","b"],"counts":[1]}"#,
        );
        assert!(matches!(
            SenseInventory::load(&bad_counts),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn inventory_rejects_duplicate_lemma_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "inv.jsonl",
            concat!(
                r#"{"lemma":"bank","senses":["a"]}"#,
                "\n",
                r#"{"lemma":"bank","senses":["b"]}"#,
                "\n",
            ),
        );
        assert!(matches!(
            SenseInventory::load(&path),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn labeled_load_groups_by_lemma_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "labeled.jsonl",
            concat!(
                r#"{"tokens":["the","bank","closed"],"focus":1,"lemma":"bank","sense":"bank%1"}"#,
                "\n",
                r#"{"tokens":["we","run","fast"],"focus":1,"lemma":"run","sense":"run%1"}"#,
                "\n",
                r#"{"tokens":["muddy","bank","side"],"focus":1,"lemma":"bank","sense":"bank%2"}"#,
                "\n",
            ),
        );
        let grouped = load_labeled(&path, &toy_inventory()).unwrap();
        assert_eq!(grouped.len(), 2);
        let bank = &grouped["bank"];
        assert_eq!(bank.len(), 2);
        assert_eq!(bank[0].sense_id, "bank%1");
        assert_eq!(bank[1].sense_id, "bank%2");
        assert_eq!(bank[0].sentence.focus_token(), "bank");
    }

    #[test]
    fn labeled_load_rejects_unknown_lemma_sense_and_focus() {
        let dir = tempfile::tempdir().unwrap();
        let inv = toy_inventory();

        let bad_lemma = write_file(
            &dir,
            "l1.jsonl",
            r#"{"tokens":["x"],"focus":0,"lemma":"ghost","sense":"g%1"}"#,
        );
        assert!(matches!(
            load_labeled(&bad_lemma, &inv),
            Err(Error::UnknownLemma { .. })
        ));

        let bad_sense = write_file(
            &dir,
            "l2.jsonl",
            r#"{"tokens":["x"],"focus":0,"lemma":"bank","sense":"bank%9"}"#,
        );
        assert!(matches!(
            load_labeled(&bad_sense, &inv),
            Err(Error::UnknownSense { .. })
        ));

        let bad_focus = write_file(
            &dir,
            "l3.jsonl",
            r#"{"tokens":["x"],"focus":3,"lemma":"bank","sense":"bank%1"}"#,
        );
        assert!(matches!(
            load_labeled(&bad_focus, &inv),
            Err(Error::FocusOutOfRange { .. })
        ));

        let bad_json = write_file(&dir, "l4.jsonl", r#"{"tokens":["x"],"focus":0"#);
        assert!(matches!(
            load_labeled(&bad_json, &inv),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn unlabeled_cap_keeps_first_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        for i in 0..5 {
            body.push_str(&format!(
                "{{\"tokens\":[\"w{i}\",\"bank\"],\"focus\":1,\"lemma\":\"bank\"}}\n"
            ));
        }
        let path = write_file(&dir, "unl.jsonl", &body);
        let grouped = load_unlabeled(&path, 3).unwrap();
        let pool = &grouped["bank"];
        assert_eq!(pool.len(), 3);
        assert_eq!(pool[0].tokens[0], "w0");
        assert_eq!(pool[2].tokens[0], "w2");

        let zero = load_unlabeled(&path, 0).unwrap();
        assert!(zero["bank"].is_empty());
    }

    #[test]
    fn unlabeled_requires_lemma_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "unl.jsonl", r#"{"tokens":["x"],"focus":0}"#);
        assert!(matches!(
            load_unlabeled(&path, 10),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn labeled_round_trip_preserves_groups() {
        let dir = tempfile::tempdir().unwrap();
        let inv = toy_inventory();
        let path = write_file(
            &dir,
            "labeled.jsonl",
            concat!(
                r#"{"tokens":["we","run"],"focus":1,"lemma":"run","sense":"run%1"}"#,
                "\n",
                r#"{"tokens":["the","bank"],"focus":1,"lemma":"bank","sense":"bank%2"}"#,
                "\n",
            ),
        );
        let grouped = load_labeled(&path, &inv).unwrap();
        let out = dir.path().join("saved.jsonl");
        save_labeled(&grouped, &out).unwrap();
        let reloaded = load_labeled(&out, &inv).unwrap();
        assert_eq!(grouped, reloaded);
    }

    #[test]
    fn lm_text_skips_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "text.txt", "a b c\n\n  \nd e\n");
        let sentences = load_lm_text(&path).unwrap();
        assert_eq!(sentences.len(), 2);
        assert_eq!(sentences[0], ["a", "b", "c"]);
        assert_eq!(sentences[1], ["d", "e"]);
    }
}
