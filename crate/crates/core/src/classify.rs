//! Sense classification: per-sense centroid vectors, nearest-neighbor
//! assignment by cosine similarity, and the most-frequent-sense baseline.
//!
//! A sense vector is the mean of the context vectors of the labeled
//! examples carrying that sense. Classification embeds the query context
//! and picks the sense with the highest cosine similarity; ties break
//! toward the sense listed first in the inventory, which keeps results
//! reproducible no matter how the store was built.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledExample, SenseInventory};
use crate::embed::{cosine, ContextVector, Embedder};
use crate::{Error, Result};

/// Which algorithm produced a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mfs,
    Nn,
    Lp,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mfs => "mfs",
            Method::Nn => "nn",
            Method::Lp => "lp",
        }
    }
}

/// One sense assignment. `sense` is `None` exactly when `abstained` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sense: Option<String>,
    /// Method-dependent confidence: cosine for nearest-neighbor, probability
    /// for propagation, relative frequency for most-frequent-sense.
    pub score: f64,
    pub method: Method,
    pub abstained: bool,
}

impl Prediction {
    pub fn assigned(sense: String, score: f64, method: Method) -> Prediction {
        Prediction {
            sense: Some(sense),
            score,
            method,
            abstained: false,
        }
    }

    pub fn abstain(method: Method) -> Prediction {
        Prediction {
            sense: None,
            score: 0.0,
            method,
            abstained: true,
        }
    }
}

/// Centroid vector for one sense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenseEntry {
    pub sense_id: String,
    /// Number of examples averaged into `values`.
    pub count: usize,
    pub values: Vec<f64>,
}

/// All sense vectors for one lemma, in inventory order. Senses without a
/// single usable example are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct SenseVectors {
    pub lemma: String,
    pub backend_tag: String,
    pub entries: Vec<SenseEntry>,
}

impl SenseVectors {
    pub fn get(&self, sense_id: &str) -> Option<&SenseEntry> {
        self.entries.iter().find(|e| e.sense_id == sense_id)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Builds per-sense centroids for one lemma.
///
/// With `normalize` set, each context vector is scaled to unit length
/// before averaging so every example carries equal weight regardless of
/// its raw norm. Examples that cannot be embedded (or have near-zero norm
/// under normalization) are skipped and reported in the warnings.
pub fn build_sense_vectors(
    lemma: &str,
    examples: &[LabeledExample],
    embedder: &Embedder,
    inventory: &SenseInventory,
    normalize: bool,
) -> Result<(SenseVectors, Vec<String>)> {
    let senses = inventory.senses(lemma)?;
    let dim = embedder.dim();
    let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (idx, ex) in examples.iter().enumerate() {
        if ex.lemma != lemma {
            return Err(Error::InvalidInput(format!(
                "example {idx} is for lemma `{}`, not `{lemma}`",
                ex.lemma
            )));
        }
        if !senses.iter().any(|s| s == &ex.sense_id) {
            return Err(Error::UnknownSense {
                context: format!("example {idx}"),
                lemma: lemma.to_string(),
                sense: ex.sense_id.clone(),
            });
        }
        let mut values = match embedder.embed(&ex.sentence) {
            Ok(cv) => cv.values,
            Err(Error::EmptyContext) => {
                warnings.push(format!(
                    "lemma `{lemma}` example {idx}: empty context, skipped"
                ));
                continue;
            }
            Err(other) => return Err(other),
        };
        if normalize {
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                warnings.push(format!(
                    "lemma `{lemma}` example {idx}: zero-norm context, skipped"
                ));
                continue;
            }
            for v in &mut values {
                *v /= norm;
            }
        }
        let key = senses
            .iter()
            .find(|s| *s == &ex.sense_id)
            .expect("membership checked above")
            .as_str();
        let slot = sums.entry(key).or_insert_with(|| (vec![0.0; dim], 0));
        for (s, v) in slot.0.iter_mut().zip(values.iter()) {
            *s += v;
        }
        slot.1 += 1;
    }

    let mut entries = Vec::new();
    for sense in senses {
        match sums.get(sense.as_str()) {
            Some((sum, count)) => {
                let values = sum.iter().map(|s| s / *count as f64).collect();
                entries.push(SenseEntry {
                    sense_id: sense.clone(),
                    count: *count,
                    values,
                });
            }
            None => warnings.push(format!(
                "lemma `{lemma}` sense `{sense}`: no usable examples, sense dropped"
            )),
        }
    }
    Ok((
        SenseVectors {
            lemma: lemma.to_string(),
            backend_tag: embedder.tag().to_string(),
            entries,
        },
        warnings,
    ))
}

/// Nearest-neighbor classification: highest cosine against the sense
/// centroids, ties broken by inventory order. Abstains when the store has
/// no usable sense for the lemma.
pub fn classify_nn(
    context: &ContextVector,
    sense_vectors: &SenseVectors,
    inventory: &SenseInventory,
) -> Result<Prediction> {
    if context.backend_tag != sense_vectors.backend_tag {
        return Err(Error::BackendMismatch {
            context: context.backend_tag.clone(),
            store: sense_vectors.backend_tag.clone(),
        });
    }
    let senses = inventory.senses(&sense_vectors.lemma)?;
    let mut best: Option<(&str, f64)> = None;
    for sense in senses {
        let Some(entry) = sense_vectors.get(sense) else {
            continue;
        };
        let sim = cosine(&context.values, &entry.values)?;
        if best.map(|(_, s)| sim > s).unwrap_or(true) {
            best = Some((sense, sim));
        }
    }
    Ok(match best {
        Some((sense, sim)) => Prediction::assigned(sense.to_string(), sim, Method::Nn),
        None => Prediction::abstain(Method::Nn),
    })
}

/// Tallies gold senses over labeled examples.
pub fn count_senses(examples: &[LabeledExample]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for ex in examples {
        *counts.entry(ex.sense_id.clone()).or_insert(0) += 1;
    }
    counts
}

/// Most-frequent-sense baseline.
///
/// Uses `counts` when given, otherwise the inventory's prior counts. When
/// neither exists (or all counts are zero) it falls back to the first
/// inventory sense with a zero score. Count ties break by inventory order.
pub fn classify_mfs(
    lemma: &str,
    inventory: &SenseInventory,
    counts: Option<&BTreeMap<String, u64>>,
) -> Result<Prediction> {
    let senses = inventory.senses(lemma)?;
    let count_of = |sense: &str| -> u64 {
        match counts {
            Some(map) => map.get(sense).copied().unwrap_or(0),
            None => inventory.prior_count(lemma, sense).unwrap_or(0),
        }
    };
    let total: u64 = senses.iter().map(|s| count_of(s)).sum();
    if total == 0 {
        return Ok(Prediction::assigned(senses[0].clone(), 0.0, Method::Mfs));
    }
    let mut best: Option<(&str, u64)> = None;
    for sense in senses {
        let c = count_of(sense);
        if best.map(|(_, bc)| c > bc).unwrap_or(true) {
            best = Some((sense, c));
        }
    }
    let (sense, c) = best.expect("non-empty sense list");
    Ok(Prediction::assigned(
        sense.to_string(),
        c as f64 / total as f64,
        Method::Mfs,
    ))
}

const STORE_FORMAT: &str = "senseprop-senses-v1";

/// Manifest pinning a sense store to its backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SenseStoreManifest {
    pub format: String,
    pub backend_tag: String,
    pub dim: usize,
    pub normalized: bool,
    pub fingerprint: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreRow {
    lemma: String,
    sense: String,
    count: usize,
    values: Vec<f64>,
}

fn store_rows_path(prefix: &Path) -> PathBuf {
    let mut name = prefix
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(".jsonl");
    prefix.with_file_name(name)
}

fn store_manifest_path(prefix: &Path) -> PathBuf {
    let mut name = prefix
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    prefix.with_file_name(name)
}

/// Writes `<prefix>.jsonl` (one row per lemma/sense) and
/// `<prefix>.manifest.json`.
pub fn save_sense_store(
    prefix: &Path,
    store: &BTreeMap<String, SenseVectors>,
    normalized: bool,
    fingerprint: &str,
) -> Result<()> {
    let mut tag: Option<&str> = None;
    let mut dim: Option<usize> = None;
    for sv in store.values() {
        if *tag.get_or_insert(&sv.backend_tag) != sv.backend_tag {
            return Err(Error::BackendMismatch {
                context: sv.backend_tag.clone(),
                store: tag.unwrap_or_default().to_string(),
            });
        }
        for e in &sv.entries {
            if *dim.get_or_insert(e.values.len()) != e.values.len() {
                return Err(Error::DimensionMismatch(
                    e.values.len(),
                    dim.unwrap_or_default(),
                ));
            }
        }
    }
    let manifest = SenseStoreManifest {
        format: STORE_FORMAT.to_string(),
        backend_tag: tag.unwrap_or_default().to_string(),
        dim: dim.unwrap_or_default(),
        normalized,
        fingerprint: fingerprint.to_string(),
    };
    let manifest_file = store_manifest_path(prefix);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::parse(&manifest_file, 0, e.to_string()))?;
    std::fs::write(&manifest_file, json).map_err(|e| Error::io(&manifest_file, e))?;

    let rows_file = store_rows_path(prefix);
    let mut out = BufWriter::new(File::create(&rows_file).map_err(|e| Error::io(&rows_file, e))?);
    for (lemma, sv) in store {
        for e in &sv.entries {
            let row = StoreRow {
                lemma: lemma.clone(),
                sense: e.sense_id.clone(),
                count: e.count,
                values: e.values.clone(),
            };
            let line = serde_json::to_string(&row)
                .map_err(|err| Error::parse(&rows_file, 0, err.to_string()))?;
            writeln!(out, "{line}").map_err(|err| Error::io(&rows_file, err))?;
        }
    }
    out.flush().map_err(|e| Error::io(&rows_file, e))
}

/// Loads a sense store saved by [`save_sense_store`]. Row order within a
/// lemma is preserved; it encodes the inventory order used at build time.
pub fn load_sense_store(
    prefix: &Path,
) -> Result<(BTreeMap<String, SenseVectors>, SenseStoreManifest)> {
    let manifest_file = store_manifest_path(prefix);
    let raw =
        std::fs::read_to_string(&manifest_file).map_err(|e| Error::io(&manifest_file, e))?;
    let manifest: SenseStoreManifest =
        serde_json::from_str(&raw).map_err(|e| Error::parse(&manifest_file, 0, e.to_string()))?;
    if manifest.format != STORE_FORMAT {
        return Err(Error::InvalidInput(format!(
            "unsupported sense store format `{}`",
            manifest.format
        )));
    }
    let rows_file = store_rows_path(prefix);
    let mut store: BTreeMap<String, SenseVectors> = BTreeMap::new();
    for (line_no, value) in crate::corpus::read_jsonl(&rows_file)? {
        let row: StoreRow = serde_json::from_value(value)
            .map_err(|e| Error::parse(&rows_file, line_no, e.to_string()))?;
        if row.values.len() != manifest.dim {
            return Err(Error::DimensionMismatch(row.values.len(), manifest.dim));
        }
        let sv = store.entry(row.lemma.clone()).or_insert_with(|| SenseVectors {
            lemma: row.lemma.clone(),
            backend_tag: manifest.backend_tag.clone(),
            entries: Vec::new(),
        });
        if sv.get(&row.sense).is_some() {
            return Err(Error::DuplicateSense {
                context: format!("{}:{line_no}", rows_file.display()),
                lemma: row.lemma,
                sense: row.sense,
            });
        }
        sv.entries.push(SenseEntry {
            sense_id: row.sense,
            count: row.count,
            values: row.values,
        });
    }
    Ok((store, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{InventoryEntry, Sentence};
    use crate::embed::{Backend, WordVectorTable};

    fn inventory() -> SenseInventory {
        let mut entries = BTreeMap::new();
        entries.insert(
            "bass".to_string(),
            InventoryEntry {
                senses: vec!["bass%fish".to_string(), "bass%music".to_string()],
                pos: Some("NOUN".to_string()),
                counts: None,
            },
        );
        SenseInventory::from_entries(entries).unwrap()
    }

    fn embedder() -> Embedder {
        let table = WordVectorTable::from_pairs(vec![
            ("river".to_string(), vec![2.0, 0.0]),
            ("lake".to_string(), vec![0.0, 1.0]),
            ("guitar".to_string(), vec![-1.0, 0.0]),
            ("song".to_string(), vec![0.0, -1.0]),
        ])
        .unwrap();
        Embedder::new(Backend::bow(table, None))
    }

    fn example(tokens: &[&str], focus: usize, sense: &str) -> LabeledExample {
        LabeledExample {
            sentence: Sentence::new(tokens.iter().map(|t| t.to_string()).collect(), focus)
                .unwrap(),
            lemma: "bass".to_string(),
            sense_id: sense.to_string(),
        }
    }

    fn ctx(values: Vec<f64>, tag: &str) -> ContextVector {
        ContextVector {
            values,
            backend_tag: tag.to_string(),
        }
    }

    #[test]
    fn sense_vectors_average_with_normalization() {
        let inv = inventory();
        let emb = embedder();
        let examples = vec![
            example(&["river", "bass"], 1, "bass%fish"),
            example(&["lake", "bass"], 1, "bass%fish"),
            example(&["guitar", "bass"], 1, "bass%music"),
        ];
        let (sv, warnings) =
            build_sense_vectors("bass", &examples, &emb, &inv, true).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(sv.entries.len(), 2);
        // river normalizes from (2,0) to (1,0); mean with (0,1) is (0.5,0.5).
        let fish = sv.get("bass%fish").unwrap();
        assert_eq!(fish.count, 2);
        assert_eq!(fish.values, vec![0.5, 0.5]);
        let music = sv.get("bass%music").unwrap();
        assert_eq!(music.values, vec![-1.0, 0.0]);
        // Entries come out in inventory order.
        assert_eq!(sv.entries[0].sense_id, "bass%fish");
    }

    #[test]
    fn sense_vectors_without_normalization_keep_raw_magnitudes() {
        let inv = inventory();
        let emb = embedder();
        let examples = vec![
            example(&["river", "bass"], 1, "bass%fish"),
            example(&["lake", "bass"], 1, "bass%fish"),
        ];
        let (sv, _) = build_sense_vectors("bass", &examples, &emb, &inv, false).unwrap();
        assert_eq!(sv.get("bass%fish").unwrap().values, vec![1.0, 0.5]);
    }

    #[test]
    fn unseen_sense_is_dropped_with_warning() {
        let inv = inventory();
        let emb = embedder();
        let examples = vec![example(&["river", "bass"], 1, "bass%fish")];
        let (sv, warnings) =
            build_sense_vectors("bass", &examples, &emb, &inv, true).unwrap();
        assert_eq!(sv.entries.len(), 1);
        assert!(sv.get("bass%music").is_none());
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("bass%music"));
    }

    #[test]
    fn unembeddable_example_is_skipped_with_warning() {
        let inv = inventory();
        let emb = embedder();
        let examples = vec![
            example(&["xyz", "bass"], 1, "bass%fish"),
            example(&["river", "bass"], 1, "bass%fish"),
        ];
        let (sv, warnings) =
            build_sense_vectors("bass", &examples, &emb, &inv, true).unwrap();
        assert_eq!(sv.get("bass%fish").unwrap().count, 1);
        // One warning for the skipped example, one for the sense that
        // ended up with no examples at all.
        assert_eq!(warnings.len(), 2);
        assert!(warnings[0].contains("empty context"));
        assert!(warnings[1].contains("bass%music"));
    }

    #[test]
    fn foreign_sense_or_lemma_is_an_error() {
        let inv = inventory();
        let emb = embedder();
        let bad_sense = vec![example(&["river", "bass"], 1, "bass%boat")];
        assert!(matches!(
            build_sense_vectors("bass", &bad_sense, &emb, &inv, true),
            Err(Error::UnknownSense { .. })
        ));
        let mut wrong_lemma = example(&["river", "bass"], 1, "bass%fish");
        wrong_lemma.lemma = "other".to_string();
        assert!(build_sense_vectors("bass", &[wrong_lemma], &emb, &inv, true).is_err());
    }

    #[test]
    fn nn_picks_highest_cosine() {
        let inv = inventory();
        let sv = SenseVectors {
            lemma: "bass".to_string(),
            backend_tag: "bow:d2:test".to_string(),
            entries: vec![
                SenseEntry {
                    sense_id: "bass%fish".to_string(),
                    count: 2,
                    values: vec![1.0, 0.0],
                },
                SenseEntry {
                    sense_id: "bass%music".to_string(),
                    count: 1,
                    values: vec![-1.0, 0.0],
                },
            ],
        };
        let pred = classify_nn(&ctx(vec![0.9, 0.1], "bow:d2:test"), &sv, &inv).unwrap();
        assert_eq!(pred.sense.as_deref(), Some("bass%fish"));
        assert!(!pred.abstained);
        assert!(pred.score > 0.9);
        assert_eq!(pred.method, Method::Nn);

        let pred = classify_nn(&ctx(vec![-1.0, 0.0], "bow:d2:test"), &sv, &inv).unwrap();
        assert_eq!(pred.sense.as_deref(), Some("bass%music"));
    }

    #[test]
    fn nn_breaks_exact_ties_by_inventory_order() {
        let inv = inventory();
        let sv = SenseVectors {
            lemma: "bass".to_string(),
            backend_tag: "t".to_string(),
            entries: vec![
                SenseEntry {
                    sense_id: "bass%fish".to_string(),
                    count: 1,
                    values: vec![1.0, 0.0],
                },
                SenseEntry {
                    sense_id: "bass%music".to_string(),
                    count: 1,
                    values: vec![0.0, 1.0],
                },
            ],
        };
        // (1,1) is equidistant from both centroids.
        let pred = classify_nn(&ctx(vec![1.0, 1.0], "t"), &sv, &inv).unwrap();
        assert_eq!(pred.sense.as_deref(), Some("bass%fish"));
    }

    #[test]
    fn nn_abstains_without_entries_and_rejects_wrong_backend() {
        let inv = inventory();
        let empty = SenseVectors {
            lemma: "bass".to_string(),
            backend_tag: "t".to_string(),
            entries: vec![],
        };
        let pred = classify_nn(&ctx(vec![1.0, 0.0], "t"), &empty, &inv).unwrap();
        assert!(pred.abstained);
        assert_eq!(pred.sense, None);

        assert!(matches!(
            classify_nn(&ctx(vec![1.0, 0.0], "other"), &empty, &inv),
            Err(Error::BackendMismatch { .. })
        ));
    }

    #[test]
    fn mfs_uses_counts_then_inventory_then_first_sense() {
        let inv = inventory();
        let mut counts = BTreeMap::new();
        counts.insert("bass%music".to_string(), 5u64);
        counts.insert("bass%fish".to_string(), 2u64);
        let pred = classify_mfs("bass", &inv, Some(&counts)).unwrap();
        assert_eq!(pred.sense.as_deref(), Some("bass%music"));
        assert!((pred.score - 5.0 / 7.0).abs() < 1e-12);
        assert_eq!(pred.method, Method::Mfs);

        // No counts anywhere: first inventory sense at score zero.
        let pred = classify_mfs("bass", &inv, None).unwrap();
        assert_eq!(pred.sense.as_deref(), Some("bass%fish"));
        assert_eq!(pred.score, 0.0);
        assert!(!pred.abstained);

        // Inventory prior counts are the fallback source.
        let mut entries = BTreeMap::new();
        entries.insert(
            "bass".to_string(),
            InventoryEntry {
                senses: vec!["bass%fish".to_string(), "bass%music".to_string()],
                pos: None,
                counts: Some(vec![1, 9]),
            },
        );
        let with_counts = SenseInventory::from_entries(entries).unwrap();
        let pred = classify_mfs("bass", &with_counts, None).unwrap();
        assert_eq!(pred.sense.as_deref(), Some("bass%music"));

        // Ties break toward the inventory-earlier sense.
        let mut tied = BTreeMap::new();
        tied.insert("bass%fish".to_string(), 4u64);
        tied.insert("bass%music".to_string(), 4u64);
        let pred = classify_mfs("bass", &inv, Some(&tied)).unwrap();
        assert_eq!(pred.sense.as_deref(), Some("bass%fish"));
    }

    #[test]
    fn count_senses_tallies_examples() {
        let examples = vec![
            example(&["river", "bass"], 1, "bass%fish"),
            example(&["lake", "bass"], 1, "bass%fish"),
            example(&["guitar", "bass"], 1, "bass%music"),
        ];
        let counts = count_senses(&examples);
        assert_eq!(counts["bass%fish"], 2);
        assert_eq!(counts["bass%music"], 1);
    }

    #[test]
    fn sense_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inv = inventory();
        let emb = embedder();
        let examples = vec![
            example(&["river", "bass"], 1, "bass%fish"),
            example(&["guitar", "bass"], 1, "bass%music"),
        ];
        let (sv, _) = build_sense_vectors("bass", &examples, &emb, &inv, true).unwrap();
        let mut store = BTreeMap::new();
        store.insert("bass".to_string(), sv);

        let prefix = dir.path().join("senses");
        save_sense_store(&prefix, &store, true, "fp9").unwrap();
        let (loaded, manifest) = load_sense_store(&prefix).unwrap();
        assert_eq!(manifest.backend_tag, emb.tag());
        assert_eq!(manifest.dim, 2);
        assert!(manifest.normalized);
        assert_eq!(manifest.fingerprint, "fp9");
        assert_eq!(loaded, store);
    }

    #[test]
    fn mixed_backend_store_is_rejected_on_save() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = BTreeMap::new();
        store.insert(
            "a".to_string(),
            SenseVectors {
                lemma: "a".to_string(),
                backend_tag: "t1".to_string(),
                entries: vec![],
            },
        );
        store.insert(
            "b".to_string(),
            SenseVectors {
                lemma: "b".to_string(),
                backend_tag: "t2".to_string(),
                entries: vec![],
            },
        );
        assert!(save_sense_store(&dir.path().join("s"), &store, true, "fp").is_err());
    }
}
