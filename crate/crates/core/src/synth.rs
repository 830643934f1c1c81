//! Synthetic pseudoword task generator.
//!
//! Each pseudoword has two senses realized by templated sentences built
//! from per-pseudoword word pools, in one of two contrast modes. In
//! `order` mode both senses contain exactly the same words and differ
//! only in order: sense 0 reads `… a PW b`, sense 1 reads `… b PW a`. A
//! bag of the tokens cannot separate the senses; a representation that
//! sees order can. In `content` mode each sense draws both neighbors
//! from its own pool, the classic pseudoword built by conflating two
//! distinct words. Pools split into subtypes (disjoint sub-vocabularies)
//! so seed coverage can be restricted to some subtypes while unlabeled
//! and evaluation sentences use all of them, and bridge sentences can
//! span two subtypes to connect their clusters.
//!
//! [`generate`] writes a complete task directory: inventory, labeled
//! seeds, unlabeled pool, gold evaluation instances, language model
//! training text, a word vector table for the bag backend, and a
//! `task.toml` run configuration wired to those files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::Method;
use crate::config::{EvalFlags, PathsConfig, RunConfig};
use crate::corpus::{
    save_labeled, save_unlabeled, InventoryEntry, LabeledByLemma, LabeledExample, SenseInventory,
    Sentence, UnlabeledByLemma,
};
use crate::embed::WordVectorTable;
use crate::eval::BackendKind;
use crate::lm::LmConfig;
use crate::propagate::{LpParams, PriorKind};
use crate::{Error, Result};

/// How the two senses of a pseudoword differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SenseMode {
    /// Both senses share a word pair and differ only in its order.
    Order,
    /// Each sense draws both neighbors from its own word pool.
    Content,
}

impl std::str::FromStr for SenseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<SenseMode> {
        match s {
            "order" => Ok(SenseMode::Order),
            "content" => Ok(SenseMode::Content),
            other => Err(Error::InvalidInput(format!(
                "unknown sense mode `{other}` (expected `order` or `content`)"
            ))),
        }
    }
}

/// Knobs for one generated task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of ambiguous pseudoword lemmas.
    pub pseudowords: usize,
    /// Labeled examples per sense per pseudoword.
    pub seeds_per_sense: usize,
    pub unlabeled_per_lemma: usize,
    pub eval_per_lemma: usize,
    pub sense_mode: SenseMode,
    /// Probability of sense 0 in unlabeled and evaluation sampling.
    pub skew: f64,
    /// Disjoint sub-vocabularies per word pool.
    pub subtypes: usize,
    pub pool_per_subtype: usize,
    /// Restrict seed sentences to the first n subtypes; absent means all.
    pub seed_subtypes: Option<usize>,
    /// Probability that an unlabeled sentence spans two subtypes.
    pub bridge_prob: f64,
    /// Size of the shared filler vocabulary.
    pub filler_words: usize,
    /// Fillers prefix a sentence, so the order contrast stays at the tail.
    pub max_filler: usize,
    /// Dimension of the generated word vector table.
    pub word_vec_dim: usize,
    /// Sampled language model sentences beyond the coverage block.
    pub lm_sentences: usize,
    /// Training epochs written into the task's language model config.
    pub lm_epochs: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pseudowords: 4,
            seeds_per_sense: 5,
            unlabeled_per_lemma: 50,
            eval_per_lemma: 40,
            sense_mode: SenseMode::Order,
            skew: 0.5,
            subtypes: 1,
            pool_per_subtype: 6,
            seed_subtypes: None,
            bridge_prob: 0.0,
            filler_words: 12,
            max_filler: 2,
            word_vec_dim: 16,
            lm_sentences: 1500,
            lm_epochs: 30,
            seed: 42,
        }
    }
}

impl SynthConfig {
    /// Balanced task whose senses differ only in word order: a bag of the
    /// sentence cannot beat chance, an order-aware context can.
    pub fn order_contrast(seed: u64) -> SynthConfig {
        SynthConfig {
            pseudowords: 4,
            seeds_per_sense: 16,
            unlabeled_per_lemma: 30,
            eval_per_lemma: 40,
            skew: 0.5,
            subtypes: 1,
            pool_per_subtype: 6,
            seed_subtypes: None,
            bridge_prob: 0.0,
            lm_sentences: 2500,
            lm_epochs: 30,
            seed,
            ..SynthConfig::default()
        }
    }

    /// Scarce-seed task: two seeds per sense covering one subtype, a
    /// skewed sense prior, and a large unlabeled pool whose bridge
    /// sentences connect the subtypes the seeds never saw.
    pub fn semi_supervised(seed: u64) -> SynthConfig {
        SynthConfig {
            pseudowords: 4,
            seeds_per_sense: 2,
            unlabeled_per_lemma: 200,
            eval_per_lemma: 80,
            sense_mode: SenseMode::Content,
            skew: 0.7,
            subtypes: 3,
            pool_per_subtype: 4,
            seed_subtypes: Some(1),
            bridge_prob: 0.3,
            max_filler: 0,
            lm_sentences: 2400,
            lm_epochs: 60,
            seed,
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("synth config: {msg}")))
            }
        };
        check(self.pseudowords >= 1, "pseudowords must be at least 1")?;
        check(self.seeds_per_sense >= 1, "seeds_per_sense must be at least 1")?;
        check(self.eval_per_lemma >= 1, "eval_per_lemma must be at least 1")?;
        check(
            self.skew > 0.0 && self.skew < 1.0,
            "skew must lie strictly between 0 and 1",
        )?;
        check(self.subtypes >= 1, "subtypes must be at least 1")?;
        check(
            self.pool_per_subtype >= 1,
            "pool_per_subtype must be at least 1",
        )?;
        if let Some(n) = self.seed_subtypes {
            check(
                n >= 1 && n <= self.subtypes,
                "seed_subtypes must lie between 1 and subtypes",
            )?;
        }
        check(
            (0.0..=1.0).contains(&self.bridge_prob),
            "bridge_prob must lie in [0, 1]",
        )?;
        check(
            self.max_filler == 0 || self.filler_words >= 1,
            "max_filler needs a nonempty filler vocabulary",
        )?;
        check(self.word_vec_dim >= 1, "word_vec_dim must be at least 1")?;
        check(self.lm_epochs >= 1, "lm_epochs must be at least 1")?;
        Ok(())
    }
}

/// Locations of everything [`generate`] wrote.
#[derive(Debug)]
pub struct GeneratedTask {
    /// The run configuration file, ready for the pipeline commands.
    pub config_path: PathBuf,
    /// The same configuration with paths resolved to the task directory.
    pub run_config: RunConfig,
}

fn pseudoword(k: usize) -> String {
    format!("pw{k}")
}

fn sense_id(k: usize, sense: usize) -> String {
    format!("pw{k}%{sense}")
}

fn pool_word(pool: char, k: usize, subtype: usize, index: usize) -> String {
    format!("{pool}{k}s{subtype}w{index}")
}

struct Sampler<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn new(cfg: &SynthConfig, stream: u64) -> Sampler<'_> {
        Sampler {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(stream)),
        }
    }

    /// The two pool words around the focus. In order mode sense 0 reads
    /// `a PW b` and sense 1 `b PW a`, so the bag of tokens is identical
    /// across senses for a fixed word pair. In content mode both words
    /// come from the sense's own pool.
    fn core_words(
        &mut self,
        k: usize,
        sense: usize,
        sub_first: usize,
        sub_second: usize,
    ) -> (String, String) {
        let draw = |rng: &mut ChaCha8Rng, pool, sub| {
            pool_word(pool, k, sub, rng.random_range(0..self.cfg.pool_per_subtype))
        };
        match self.cfg.sense_mode {
            SenseMode::Order => {
                let a = draw(&mut self.rng, 'a', sub_first);
                let b = draw(&mut self.rng, 'b', sub_second);
                if sense == 0 {
                    (a, b)
                } else {
                    (b, a)
                }
            }
            SenseMode::Content => {
                let pool = if sense == 0 { 'a' } else { 'b' };
                let first = draw(&mut self.rng, pool, sub_first);
                let second = draw(&mut self.rng, pool, sub_second);
                (first, second)
            }
        }
    }

    fn sentence(&mut self, k: usize, sense: usize, sub_first: usize, sub_second: usize) -> Sentence {
        let mut tokens = Vec::new();
        if self.cfg.max_filler > 0 {
            let n = self.rng.random_range(0..=self.cfg.max_filler);
            for _ in 0..n {
                let f = self.rng.random_range(0..self.cfg.filler_words);
                tokens.push(format!("f{f}"));
            }
        }
        let (first, second) = self.core_words(k, sense, sub_first, sub_second);
        tokens.push(first);
        let focus = tokens.len();
        tokens.push(pseudoword(k));
        tokens.push(second);
        Sentence::new(tokens, focus).expect("generated focus is in range")
    }

    fn sense(&mut self) -> usize {
        if self.rng.random::<f64>() < self.cfg.skew {
            0
        } else {
            1
        }
    }

    fn subtype(&mut self) -> usize {
        self.rng.random_range(0..self.cfg.subtypes)
    }

    /// Same subtype on both sides unless a bridge is drawn.
    fn subtype_pair(&mut self) -> (usize, usize) {
        let i = self.subtype();
        if self.cfg.subtypes > 1 && self.rng.random_bool(self.cfg.bridge_prob) {
            let mut j = self.rng.random_range(0..self.cfg.subtypes - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        } else {
            (i, i)
        }
    }
}

fn build_inventory(cfg: &SynthConfig) -> Result<SenseInventory> {
    let mut entries = BTreeMap::new();
    for k in 0..cfg.pseudowords {
        let pos = if k % 2 == 0 { "NOUN" } else { "VERB" };
        entries.insert(
            pseudoword(k),
            InventoryEntry {
                senses: vec![sense_id(k, 0), sense_id(k, 1)],
                pos: Some(pos.to_string()),
                counts: None,
            },
        );
    }
    SenseInventory::from_entries(entries)
}

fn build_labeled(cfg: &SynthConfig) -> LabeledByLemma {
    let mut sampler = Sampler::new(cfg, 1);
    let seed_subtypes = cfg.seed_subtypes.unwrap_or(cfg.subtypes);
    let mut grouped: LabeledByLemma = BTreeMap::new();
    for k in 0..cfg.pseudowords {
        let mut examples = Vec::new();
        for sense in 0..2 {
            for _ in 0..cfg.seeds_per_sense {
                let sub = sampler.rng.random_range(0..seed_subtypes);
                examples.push(LabeledExample {
                    sentence: sampler.sentence(k, sense, sub, sub),
                    lemma: pseudoword(k),
                    sense_id: sense_id(k, sense),
                });
            }
        }
        grouped.insert(pseudoword(k), examples);
    }
    grouped
}

fn build_unlabeled(cfg: &SynthConfig) -> UnlabeledByLemma {
    let mut sampler = Sampler::new(cfg, 2);
    let mut grouped: UnlabeledByLemma = BTreeMap::new();
    for k in 0..cfg.pseudowords {
        let mut sentences = Vec::new();
        for _ in 0..cfg.unlabeled_per_lemma {
            let sense = sampler.sense();
            let (i, j) = sampler.subtype_pair();
            sentences.push(sampler.sentence(k, sense, i, j));
        }
        grouped.insert(pseudoword(k), sentences);
    }
    grouped
}

struct EvalRow {
    id: String,
    sentence: Sentence,
    lemma: String,
    sense: String,
}

fn build_eval(cfg: &SynthConfig) -> Vec<EvalRow> {
    let mut sampler = Sampler::new(cfg, 3);
    let mut rows = Vec::new();
    for k in 0..cfg.pseudowords {
        for n in 0..cfg.eval_per_lemma {
            let sense = sampler.sense();
            let sub = sampler.subtype();
            rows.push(EvalRow {
                id: format!("pw{k}-e{n}"),
                sentence: sampler.sentence(k, sense, sub, sub),
                lemma: pseudoword(k),
                sense: sense_id(k, sense),
            });
        }
    }
    rows
}

/// Coverage block putting every pool word in both template positions and
/// every filler once, then a sampled block mirroring the unlabeled
/// distribution with balanced senses.
fn build_lm_text(cfg: &SynthConfig) -> Vec<Vec<String>> {
    let mut lines = Vec::new();
    for k in 0..cfg.pseudowords {
        for sense in 0..2 {
            for s in 0..cfg.subtypes {
                for i in 0..cfg.pool_per_subtype {
                    let line = match cfg.sense_mode {
                        SenseMode::Order => {
                            let a = pool_word('a', k, s, i);
                            let b = pool_word('b', k, s, i);
                            let (first, second) = if sense == 0 { (a, b) } else { (b, a) };
                            vec![first, pseudoword(k), second]
                        }
                        SenseMode::Content => {
                            let pool = if sense == 0 { 'a' } else { 'b' };
                            vec![
                                pool_word(pool, k, s, i),
                                pseudoword(k),
                                pool_word(pool, k, s, (i + 1) % cfg.pool_per_subtype),
                            ]
                        }
                    };
                    lines.push(line);
                }
            }
        }
    }
    let tail_pool = if cfg.sense_mode == SenseMode::Order { 'b' } else { 'a' };
    for f in 0..cfg.filler_words {
        lines.push(vec![
            format!("f{f}"),
            pool_word('a', 0, 0, 0),
            pseudoword(0),
            pool_word(tail_pool, 0, 0, 0),
        ]);
    }
    let mut sampler = Sampler::new(cfg, 4);
    for _ in 0..cfg.lm_sentences {
        let k = sampler.rng.random_range(0..cfg.pseudowords);
        let sense = usize::from(sampler.rng.random_bool(0.5));
        let (i, j) = sampler.subtype_pair();
        lines.push(sampler.sentence(k, sense, i, j).tokens);
    }
    lines
}

/// One cluster center per pool and subtype; member words sit near their
/// center. Fillers get small vectors so they stay uninformative.
fn build_word_vectors(cfg: &SynthConfig) -> Result<WordVectorTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(5));
    let dim = cfg.word_vec_dim;
    let mut pairs = Vec::new();
    for k in 0..cfg.pseudowords {
        for pool in ['a', 'b'] {
            for s in 0..cfg.subtypes {
                let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                for i in 0..cfg.pool_per_subtype {
                    let values: Vec<f64> = center
                        .iter()
                        .map(|c| c + 0.15 * rng.random_range(-1.0..1.0))
                        .collect();
                    pairs.push((pool_word(pool, k, s, i), values));
                }
            }
        }
    }
    for f in 0..cfg.filler_words {
        let values: Vec<f64> = (0..dim).map(|_| 0.05 * rng.random_range(-1.0..1.0)).collect();
        pairs.push((format!("f{f}"), values));
    }
    WordVectorTable::from_pairs(pairs)
}

fn write_eval(rows: &[EvalRow], path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Record<'a> {
        id: &'a str,
        tokens: &'a [String],
        focus: usize,
        lemma: &'a str,
        sense: &'a str,
    }
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for row in rows {
        let record = Record {
            id: &row.id,
            tokens: &row.sentence.tokens,
            focus: row.sentence.focus,
            lemma: &row.lemma,
            sense: &row.sense,
        };
        let line =
            serde_json::to_string(&record).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_lm_text(lines: &[Vec<String>], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for tokens in lines {
        writeln!(out, "{}", tokens.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Language model settings sized for a small synthetic vocabulary.
/// Order tasks need the wider hidden state to separate mirrored contexts;
/// content tasks prefer a tighter bottleneck that blurs subtype identity.
/// Both downsample the ubiquitous pseudoword targets, which stops every
/// context vector from collapsing onto one predict-the-pseudoword axis.
fn task_lm_config(cfg: &SynthConfig) -> LmConfig {
    let (embed_dim, hidden_dim, context_dim) = match cfg.sense_mode {
        SenseMode::Order => (32, 64, 32),
        SenseMode::Content => (24, 48, 24),
    };
    LmConfig {
        vocab_size: 4096,
        embed_dim,
        hidden_dim,
        context_dim,
        learning_rate: 0.25,
        downsample_threshold: 0.01,
        max_epochs: cfg.lm_epochs,
        max_sentence_len: 16,
        seed: cfg.seed,
    }
}

/// Propagation settings for a generated task. Content tasks raise the
/// degree floor so connectivity comes from many weighted fallback edges
/// rather than the thin percentile band, and use the seed-count prior.
fn task_lp_params(cfg: &SynthConfig) -> LpParams {
    match cfg.sense_mode {
        SenseMode::Order => LpParams::default(),
        SenseMode::Content => LpParams {
            prior: PriorKind::Empirical,
            min_degree: 30,
            ..LpParams::default()
        },
    }
}

/// Writes a full task into `dir` and returns the run config pointing at it.
pub fn generate(cfg: &SynthConfig, dir: &Path) -> Result<GeneratedTask> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let inventory = build_inventory(cfg)?;
    inventory.save(&dir.join("inventory.json"))?;
    save_labeled(&build_labeled(cfg), &dir.join("labeled.jsonl"))?;
    save_unlabeled(&build_unlabeled(cfg), &dir.join("unlabeled.jsonl"))?;
    write_eval(&build_eval(cfg), &dir.join("eval.jsonl"))?;
    write_lm_text(&build_lm_text(cfg), &dir.join("lm_text.txt"))?;
    build_word_vectors(cfg)?.save(&dir.join("word_vectors.txt"))?;

    let relative = RunConfig {
        seed: cfg.seed,
        backend: BackendKind::Lm,
        method: Method::Nn,
        paths: PathsConfig {
            inventory: Some(PathBuf::from("inventory.json")),
            labeled: Some(PathBuf::from("labeled.jsonl")),
            unlabeled: Some(PathBuf::from("unlabeled.jsonl")),
            lm_text: Some(PathBuf::from("lm_text.txt")),
            word_vectors: Some(PathBuf::from("word_vectors.txt")),
            model: Some(PathBuf::from("lm")),
            senses: Some(PathBuf::from("senses")),
            eval: Some(PathBuf::from("eval.jsonl")),
            output_dir: Some(PathBuf::from("out")),
        },
        lm: task_lm_config(cfg),
        lp: task_lp_params(cfg),
        eval: EvalFlags::default(),
    };
    let config_path = dir.join("task.toml");
    relative.save_toml(&config_path)?;
    let (run_config, _) = RunConfig::load(&config_path)?;
    Ok(GeneratedTask {
        config_path,
        run_config,
    })
}
