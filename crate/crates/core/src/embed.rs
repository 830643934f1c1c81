//! Context embedding backends and the shared embedding cache.
//!
//! Two backends produce a fixed-dimensional vector for a sentence with a
//! focus slot: a bag-of-word-vectors average over pre-trained word vectors,
//! and the language model's projected final hidden state. Every vector
//! carries a `backend_tag` derived from the backend's content, so vectors
//! from different models or tables can never be compared accidentally.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::Sentence;
use crate::lm::{holdout_window, LmParams, Vocab};
use crate::{Error, Result};

/// Norms below this are treated as zero when computing cosine similarity.
const NORM_FLOOR: f64 = 1e-12;

/// A context embedding for one sentence/focus pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextVector {
    pub values: Vec<f64>,
    pub backend_tag: String,
}

impl ContextVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Cosine similarity. Returns 0 when either vector has (near-)zero norm,
/// so degenerate contexts never dominate a similarity ranking.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(u.len(), v.len()));
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v.iter()) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let (nu, nv) = (nu.sqrt(), nv.sqrt());
    if nu < NORM_FLOOR || nv < NORM_FLOOR {
        return Ok(0.0);
    }
    Ok(dot / (nu * nv))
}

/// Pre-trained word vectors, one fixed-dimensional vector per word.
#[derive(Debug, Clone)]
pub struct WordVectorTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
    tag: String,
}

impl WordVectorTable {
    /// Loads `word v1 v2 ... vD` lines; the first line fixes `D`.
    pub fn load(path: &Path) -> Result<WordVectorTable> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields
                .next()
                .ok_or_else(|| Error::parse(path, idx + 1, "missing word"))?
                .to_string();
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::parse(path, idx + 1, format!("bad component: {e}")))
                })
                .collect::<Result<_>>()?;
            if values.is_empty() {
                return Err(Error::parse(path, idx + 1, "word vector has no components"));
            }
            pairs.push((word, values));
        }
        Self::from_pairs(pairs)
    }

    pub fn from_pairs(pairs: Vec<(String, Vec<f64>)>) -> Result<WordVectorTable> {
        let mut iter = pairs.into_iter();
        let (first_word, first_vec) = iter
            .next()
            .ok_or_else(|| Error::InvalidInput("empty word vector table".to_string()))?;
        let dim = first_vec.len();
        let mut vectors = BTreeMap::new();
        vectors.insert(first_word, first_vec);
        for (word, vec) in iter {
            if vec.len() != dim {
                return Err(Error::DimensionMismatch(vec.len(), dim));
            }
            if vectors.insert(word.clone(), vec).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate word vector for `{word}`"
                )));
            }
        }
        let tag = bow_tag(dim, &vectors);
        Ok(WordVectorTable { dim, vectors, tag })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for (word, vec) in &self.vectors {
            write!(out, "{word}").map_err(|e| Error::io(path, e))?;
            for v in vec {
                write!(out, " {v}").map_err(|e| Error::io(path, e))?;
            }
            writeln!(out).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(|v| v.as_slice())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }
}

fn bow_tag(dim: usize, vectors: &BTreeMap<String, Vec<f64>>) -> String {
    let mut hasher = Sha256::new();
    for (word, vec) in vectors {
        hasher.update(word.as_bytes());
        hasher.update([0u8]);
        for v in vec {
            hasher.update(v.to_le_bytes());
        }
    }
    format!("bow:d{dim}:{}", short_hex(&hasher.finalize()))
}

fn short_hex(bytes: &[u8]) -> String {
    bytes[..4].iter().map(|b| format!("{b:02x}")).collect()
}

/// Unweighted mean of the word vectors of non-focus tokens.
///
/// With `window = Some(k)` only tokens within `k` positions of the focus
/// contribute; `None` uses the whole sentence. Out-of-table tokens are
/// skipped. If nothing contributes the context is empty and that is an
/// error, because a silent zero vector would pollute similarity rankings.
pub fn embed_context_bow(
    table: &WordVectorTable,
    window: Option<usize>,
    sentence: &Sentence,
) -> Result<ContextVector> {
    let mut sum = vec![0.0; table.dim()];
    let mut count = 0usize;
    for (i, token) in sentence.tokens.iter().enumerate() {
        if i == sentence.focus {
            continue;
        }
        if let Some(k) = window {
            if i.abs_diff(sentence.focus) > k {
                continue;
            }
        }
        if let Some(vec) = table.get(token) {
            for (s, v) in sum.iter_mut().zip(vec.iter()) {
                *s += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyContext);
    }
    for s in &mut sum {
        *s /= count as f64;
    }
    Ok(ContextVector {
        values: sum,
        backend_tag: table.tag().to_string(),
    })
}

/// Embeds a sentence with the language model: the focus is replaced by the
/// hold-out symbol and the final hidden state is projected down.
pub fn embed_context_lm(
    params: &LmParams,
    vocab: &Vocab,
    max_sentence_len: usize,
    tag: &str,
    sentence: &Sentence,
) -> Result<ContextVector> {
    let ids = holdout_window(vocab, sentence, max_sentence_len);
    let ctx = params.context_vector(&ids);
    Ok(ContextVector {
        values: ctx.to_vec(),
        backend_tag: tag.to_string(),
    })
}

/// A concrete embedding backend.
pub enum Backend {
    Bow {
        table: WordVectorTable,
        window: Option<usize>,
    },
    Lm {
        params: LmParams,
        vocab: Vocab,
        max_sentence_len: usize,
        tag: String,
    },
}

impl Backend {
    pub fn bow(table: WordVectorTable, window: Option<usize>) -> Backend {
        Backend::Bow { table, window }
    }

    pub fn lm(params: LmParams, vocab: Vocab, max_sentence_len: usize) -> Result<Backend> {
        params.validate_shapes(vocab.len())?;
        let (_, _, _, p) = params.dims();
        let mut hasher = Sha256::new();
        hasher.update(crate::lm::weight_bytes(&params));
        hasher.update(vocab.content_hash().as_bytes());
        let tag = format!("lm:p{p}:{}", short_hex(&hasher.finalize()));
        Ok(Backend::Lm {
            params,
            vocab,
            max_sentence_len,
            tag,
        })
    }

    pub fn tag(&self) -> &str {
        match self {
            Backend::Bow { table, .. } => table.tag(),
            Backend::Lm { tag, .. } => tag,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Backend::Bow { table, .. } => table.dim(),
            Backend::Lm { params, .. } => params.dims().3,
        }
    }

    pub fn embed(&self, sentence: &Sentence) -> Result<ContextVector> {
        match self {
            Backend::Bow { table, window } => embed_context_bow(table, *window, sentence),
            Backend::Lm {
                params,
                vocab,
                max_sentence_len,
                tag,
            } => embed_context_lm(params, vocab, *max_sentence_len, tag, sentence),
        }
    }
}

/// Embedding frontend with a thread-safe memo cache.
///
/// Embedding the same sentence/focus pair twice returns bitwise-identical
/// values without recomputing. The cache key is the exact token sequence
/// plus focus; the backend is fixed per embedder.
pub struct Embedder {
    backend: Backend,
    cache: Mutex<HashMap<String, Vec<f64>>>,
    hits: AtomicU64,
}

impl Embedder {
    pub fn new(backend: Backend) -> Embedder {
        Embedder {
            backend,
            cache: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
        }
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn tag(&self) -> &str {
        self.backend.tag()
    }

    pub fn dim(&self) -> usize {
        self.backend.dim()
    }

    pub fn embed(&self, sentence: &Sentence) -> Result<ContextVector> {
        let key = cache_key(sentence);
        if let Some(values) = self.cache.lock().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(ContextVector {
                values: values.clone(),
                backend_tag: self.backend.tag().to_string(),
            });
        }
        let vector = self.backend.embed(sentence)?;
        self.cache
            .lock()
            .unwrap()
            .insert(key, vector.values.clone());
        Ok(vector)
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    pub fn cache_hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Writes cached vectors as JSONL, sorted by key for stable output.
    pub fn dump_cache(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            key: &'a str,
            dim: usize,
            values: &'a [f64],
        }
        let cache = self.cache.lock().unwrap();
        let mut keys: Vec<&String> = cache.keys().collect();
        keys.sort();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for key in keys {
            let values = &cache[key];
            let row = Row {
                key,
                dim: values.len(),
                values,
            };
            let line =
                serde_json::to_string(&row).map_err(|e| Error::parse(path, 0, e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

fn cache_key(sentence: &Sentence) -> String {
    serde_json::to_string(&(&sentence.tokens, sentence.focus)).expect("tokens serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;
    use approx::assert_abs_diff_eq;

    fn table() -> WordVectorTable {
        WordVectorTable::from_pairs(vec![
            ("red".to_string(), vec![1.0, 0.0]),
            ("blue".to_string(), vec![0.0, 1.0]),
            ("green".to_string(), vec![1.0, 1.0]),
        ])
        .unwrap()
    }

    fn sent(tokens: &[&str], focus: usize) -> Sentence {
        Sentence::new(tokens.iter().map(|t| t.to_string()).collect(), focus).unwrap()
    }

    #[test]
    fn cosine_basics() {
        assert_abs_diff_eq!(
            cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            cosine(&[2.0, 0.0], &[5.0, 0.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            cosine(&[1.0, 1.0], &[-1.0, -1.0]).unwrap(),
            -1.0,
            epsilon = 1e-15
        );
        // Hand-derived: dot = -12, |u| = sqrt(14), |v| = sqrt(77).
        assert_abs_diff_eq!(
            cosine(&[1.0, 2.0, 3.0], &[-4.0, 5.0, -6.0]).unwrap(),
            -12.0 / 1078.0_f64.sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1e-13, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cosine_is_symmetric_and_bounded() {
        let vs = [
            vec![0.3, -1.2, 0.7],
            vec![2.0, 0.1, -0.4],
            vec![-5.0, 3.3, 9.1],
        ];
        for u in &vs {
            for v in &vs {
                let a = cosine(u, v).unwrap();
                let b = cosine(v, u).unwrap();
                assert_abs_diff_eq!(a, b, epsilon = 1e-15);
                assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
            }
        }
    }

    #[test]
    fn table_load_infers_dim_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        std::fs::write(&path, "red 1.0 0.0\nblue 0.0 1.0\n\n").unwrap();
        let t = WordVectorTable::load(&path).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("red"), Some(&[1.0, 0.0][..]));
        assert!(t.get("violet").is_none());

        std::fs::write(&path, "red 1.0 0.0\nblue 0.5\n").unwrap();
        assert!(matches!(
            WordVectorTable::load(&path),
            Err(Error::DimensionMismatch(1, 2))
        ));

        std::fs::write(&path, "red 1.0 oops\n").unwrap();
        assert!(matches!(
            WordVectorTable::load(&path),
            Err(Error::Parse { .. })
        ));

        std::fs::write(&path, "red 1.0\nred 2.0\n").unwrap();
        assert!(WordVectorTable::load(&path).is_err());
    }

    #[test]
    fn table_save_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        let t = WordVectorTable::from_pairs(vec![
            ("a".to_string(), vec![0.1, -2.5e-7]),
            ("b".to_string(), vec![1.0 / 3.0, 7.25]),
        ])
        .unwrap();
        t.save(&path).unwrap();
        let loaded = WordVectorTable::load(&path).unwrap();
        assert_eq!(loaded.get("a"), t.get("a"));
        assert_eq!(loaded.get("b"), t.get("b"));
        assert_eq!(loaded.tag(), t.tag());
    }

    #[test]
    fn bow_mean_excludes_focus_and_oov() {
        let t = table();
        // Non-focus in-table tokens: red (1,0) and green (1,1); mean (1, 0.5).
        let cv = embed_context_bow(&t, None, &sent(&["red", "bank", "xyz", "green"], 1)).unwrap();
        assert_eq!(cv.values, vec![1.0, 0.5]);
        assert_eq!(cv.dim(), 2);
        assert_eq!(cv.backend_tag, t.tag());

        // The focus token's own vector never contributes.
        let cv = embed_context_bow(&t, None, &sent(&["red", "blue"], 0)).unwrap();
        assert_eq!(cv.values, vec![0.0, 1.0]);
    }

    #[test]
    fn bow_window_limits_context() {
        let t = table();
        let s = sent(&["red", "xyz", "bank", "xyz", "blue", "green"], 2);
        let full = embed_context_bow(&t, None, &s).unwrap();
        assert_eq!(full.values, vec![2.0 / 3.0, 2.0 / 3.0]);
        // k = 2 keeps positions 0..=4 minus the focus: red and blue.
        let windowed = embed_context_bow(&t, Some(2), &s).unwrap();
        assert_eq!(windowed.values, vec![0.5, 0.5]);
    }

    #[test]
    fn bow_empty_context_is_an_error() {
        let t = table();
        assert!(matches!(
            embed_context_bow(&t, None, &sent(&["bank"], 0)),
            Err(Error::EmptyContext)
        ));
        assert!(matches!(
            embed_context_bow(&t, None, &sent(&["xyz", "bank", "qqq"], 1)),
            Err(Error::EmptyContext)
        ));
        // In-table token exists but outside the window.
        assert!(matches!(
            embed_context_bow(&t, Some(1), &sent(&["red", "xyz", "bank"], 2)),
            Err(Error::EmptyContext)
        ));
    }

    #[test]
    fn embedder_cache_returns_identical_vectors() {
        let embedder = Embedder::new(Backend::bow(table(), None));
        let s = sent(&["red", "bank", "green"], 1);
        let first = embedder.embed(&s).unwrap();
        assert_eq!(embedder.cache_len(), 1);
        assert_eq!(embedder.cache_hits(), 0);
        let second = embedder.embed(&s).unwrap();
        assert_eq!(embedder.cache_hits(), 1);
        assert_eq!(first, second);
        // Same tokens, different focus: a distinct cache entry.
        let other = sent(&["red", "bank", "green"], 0);
        embedder.embed(&other).unwrap();
        assert_eq!(embedder.cache_len(), 2);
    }

    #[test]
    fn embedder_dump_is_sorted_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let embedder = Embedder::new(Backend::bow(table(), None));
        embedder.embed(&sent(&["red", "bank"], 1)).unwrap();
        embedder.embed(&sent(&["blue", "bank"], 1)).unwrap();
        let path = dir.path().join("cache.jsonl");
        embedder.dump_cache(&path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = body.lines().collect();
        assert_eq!(lines.len(), 2);
        let mut sorted = lines.clone();
        sorted.sort();
        assert_eq!(lines, sorted);
        for line in lines {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["dim"], 2);
            assert!(v["key"].is_string());
            assert!(v["values"].is_array());
        }
    }

    #[test]
    fn lm_backend_embeds_deterministically() {
        let corpus = vec![vec!["a".to_string(), "b".to_string(), "c".to_string()]];
        let vocab = Vocab::build(&corpus, 10).unwrap();
        let cfg = LmConfig {
            vocab_size: 10,
            embed_dim: 4,
            hidden_dim: 5,
            context_dim: 3,
            seed: 3,
            ..LmConfig::default()
        };
        let params = LmParams::init(&cfg, vocab.len());
        let backend = Backend::lm(params.clone(), vocab.clone(), 64).unwrap();
        assert!(backend.tag().starts_with("lm:p3:"));
        assert_eq!(backend.dim(), 3);

        let s = sent(&["a", "b", "c"], 1);
        let v1 = backend.embed(&s).unwrap();
        let v2 = backend.embed(&s).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(v1.dim(), 3);

        // A different seed gives a different tag.
        let other = LmParams::init(&LmConfig { seed: 4, ..cfg }, vocab.len());
        let other_backend = Backend::lm(other, vocab, 64).unwrap();
        assert_ne!(backend.tag(), other_backend.tag());
    }

    #[test]
    fn bow_and_lm_tags_are_distinct_namespaces() {
        let bow_tag = table().tag().to_string();
        assert!(bow_tag.starts_with("bow:d2:"));
    }
}
