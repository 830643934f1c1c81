//! Python bindings for the disambiguation pipeline.
//!
//! Exposes the context language model (train, save, load, embed, predict),
//! task-level operations driven by a run configuration file (train,
//! build sense vectors, classify, evaluate, density sweep), synthetic task
//! generation, and cosine similarity. Everything is deterministic under a
//! fixed seed, matching the command line tool byte for byte.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use senseprop::classify::Prediction;
use senseprop::config::RunConfig;
use senseprop::corpus::{
    load_labeled, load_lm_text, load_unlabeled, LabeledByLemma, Sentence, SenseInventory,
    UnlabeledByLemma,
};
use senseprop::embed::{Backend, Embedder, WordVectorTable};
use senseprop::eval::{load_eval_instances, EvalTask, MethodSpec, ScoreReport};
use senseprop::lm::manifest_path;
use senseprop::lm::{load_model, save_model, train_lm, LmConfig, LmParams, Vocab};
use senseprop::synth::{generate, SynthConfig};
use senseprop::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        Error::Numeric(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn sentence_from(tokens: Vec<String>, focus: usize) -> PyResult<Sentence> {
    Sentence::new(tokens, focus).map_err(to_py)
}

/// Held-out-word language model: embeds a sentence position into a context
/// vector by replacing it with the holdout token and projecting the final
/// recurrent state.
#[pyclass(module = "senseprop_py")]
struct LanguageModel {
    params: LmParams,
    vocab: Vocab,
    config: LmConfig,
    embedder: Embedder,
    epoch_losses: Vec<f64>,
}

impl LanguageModel {
    fn assemble(
        params: LmParams,
        vocab: Vocab,
        config: LmConfig,
        epoch_losses: Vec<f64>,
    ) -> PyResult<Self> {
        let backend = Backend::lm(params.clone(), vocab.clone(), config.max_sentence_len)
            .map_err(to_py)?;
        Ok(LanguageModel {
            params,
            vocab,
            config,
            embedder: Embedder::new(backend),
            epoch_losses,
        })
    }
}

#[pymethods]
impl LanguageModel {
    /// Trains on tokenized sentences and returns the fitted model.
    #[staticmethod]
    #[pyo3(signature = (sentences, *, vocab_size=4096, embed_dim=16, hidden_dim=32,
        context_dim=16, learning_rate=0.25, downsample_threshold=1.0, max_epochs=10,
        max_sentence_len=32, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        sentences: Vec<Vec<String>>,
        vocab_size: usize,
        embed_dim: usize,
        hidden_dim: usize,
        context_dim: usize,
        learning_rate: f64,
        downsample_threshold: f64,
        max_epochs: usize,
        max_sentence_len: usize,
        seed: u64,
    ) -> PyResult<LanguageModel> {
        let config = LmConfig {
            vocab_size,
            embed_dim,
            hidden_dim,
            context_dim,
            learning_rate,
            downsample_threshold,
            max_epochs,
            max_sentence_len,
            seed,
        };
        let vocab = Vocab::build(&sentences, config.vocab_size).map_err(to_py)?;
        let (params, report) = train_lm(&sentences, &vocab, &config).map_err(to_py)?;
        LanguageModel::assemble(params, vocab, config, report.epoch_losses)
    }

    /// Loads weights, vocabulary, and manifest saved under `prefix`.
    #[staticmethod]
    fn load(prefix: PathBuf) -> PyResult<LanguageModel> {
        let (params, vocab, manifest) = load_model(&prefix).map_err(to_py)?;
        LanguageModel::assemble(params, vocab, manifest.config, Vec::new())
    }

    /// Saves weights, vocabulary, and manifest under `prefix`.
    fn save(&self, prefix: PathBuf) -> PyResult<()> {
        save_model(&prefix, &self.params, &self.vocab, &self.config, "python").map_err(to_py)
    }

    /// Context vector for the sentence with `tokens[focus]` held out.
    fn embed(&self, tokens: Vec<String>, focus: usize) -> PyResult<Vec<f64>> {
        let sentence = sentence_from(tokens, focus)?;
        Ok(self.embedder.embed(&sentence).map_err(to_py)?.values)
    }

    /// Most probable fillers for the held-out position, as (token, prob).
    #[pyo3(signature = (tokens, focus, k=5))]
    fn top_k(&self, tokens: Vec<String>, focus: usize, k: usize) -> PyResult<Vec<(String, f64)>> {
        let sentence = sentence_from(tokens, focus)?;
        let window = senseprop::lm::holdout_window(
            &self.vocab,
            &sentence,
            self.config.max_sentence_len,
        );
        let ctx = self.params.context_vector(&window);
        self.params.top_k(&ctx, &self.vocab, k).map_err(to_py)
    }

    /// Mean training loss per epoch; empty for a loaded model.
    #[getter]
    fn epoch_losses(&self) -> Vec<f64> {
        self.epoch_losses.clone()
    }

    /// (vocab, embed, hidden, context) dimensions.
    #[getter]
    fn dims(&self) -> (usize, usize, usize, usize) {
        self.params.dims()
    }

    fn __repr__(&self) -> String {
        let (v, d, h, p) = self.params.dims();
        format!("LanguageModel(vocab={v}, embed={d}, hidden={h}, context={p})")
    }
}

fn report_to_dict<'py>(py: Python<'py>, report: &ScoreReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("attempted", report.attempted)?;
    d.set_item("correct", report.correct)?;
    d.set_item("total", report.total)?;
    d.set_item("precision", report.precision)?;
    d.set_item("recall", report.recall)?;
    d.set_item("f1", report.f1)?;
    d.set_item("macro_f1", report.macro_f1)?;
    let per_lemma = PyDict::new(py);
    for (lemma, sub) in &report.per_lemma {
        let row = PyDict::new(py);
        row.set_item("attempted", sub.attempted)?;
        row.set_item("correct", sub.correct)?;
        row.set_item("total", sub.total)?;
        row.set_item("f1", sub.f1)?;
        per_lemma.set_item(lemma, row)?;
    }
    d.set_item("per_lemma", per_lemma)?;
    Ok(d)
}

fn prediction_to_dict<'py>(
    py: Python<'py>,
    id: &str,
    pred: &Prediction,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("instance_id", id)?;
    d.set_item("sense", pred.sense.as_deref())?;
    d.set_item("score", pred.score)?;
    d.set_item("method", pred.method.as_str())?;
    d.set_item("abstained", pred.abstained)?;
    Ok(d)
}

/// Loaded task artifacts behind one run configuration file.
struct TaskData {
    inventory: SenseInventory,
    labeled: LabeledByLemma,
    unlabeled: UnlabeledByLemma,
    instances: Vec<senseprop::eval::EvalInstance>,
    bow: Option<Embedder>,
    lm: Option<Embedder>,
}

/// Disambiguation task defined by a run configuration file.
#[pyclass(module = "senseprop_py")]
struct Task {
    config: RunConfig,
    fingerprint: String,
}

impl Task {
    /// Loads whatever artifacts the configuration points at. The language
    /// model backend appears only once `train_lm` has produced weights.
    fn load_data(&self) -> PyResult<TaskData> {
        let paths = &self.config.paths;
        let inventory_path = paths
            .inventory
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("config has no paths.inventory"))?;
        let inventory = SenseInventory::load(inventory_path).map_err(to_py)?;
        let labeled_path = paths
            .labeled
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("config has no paths.labeled"))?;
        let labeled = load_labeled(labeled_path, &inventory).map_err(to_py)?;
        let unlabeled = match &paths.unlabeled {
            Some(p) => load_unlabeled(p, self.config.eval.unlabeled_cap).map_err(to_py)?,
            None => UnlabeledByLemma::new(),
        };
        let instances = match &paths.eval {
            Some(p) => load_eval_instances(p, &inventory).map_err(to_py)?,
            None => Vec::new(),
        };
        let bow = match &paths.word_vectors {
            Some(p) => {
                let table = WordVectorTable::load(p).map_err(to_py)?;
                Some(Embedder::new(Backend::bow(table, self.config.eval.bow_window)))
            }
            None => None,
        };
        let lm = match &paths.model {
            Some(prefix) if manifest_path(prefix).exists() => {
                let (params, vocab, manifest) = load_model(prefix).map_err(to_py)?;
                let backend = Backend::lm(params, vocab, manifest.config.max_sentence_len)
                    .map_err(to_py)?;
                Some(Embedder::new(backend))
            }
            _ => None,
        };
        Ok(TaskData {
            inventory,
            labeled,
            unlabeled,
            instances,
            bow,
            lm,
        })
    }

    fn eval_task<'a>(&'a self, data: &'a TaskData) -> EvalTask<'a> {
        EvalTask {
            inventory: &data.inventory,
            labeled: &data.labeled,
            unlabeled: &data.unlabeled,
            instances: &data.instances,
            bow: data.bow.as_ref(),
            lm: data.lm.as_ref(),
            lp: self.config.lp,
            normalize: self.config.eval.normalize_sense_vectors,
            polysemous_only: self.config.eval.polysemous_only,
            fingerprint: self.fingerprint.clone(),
        }
    }

    fn spec(&self, method: &str) -> PyResult<MethodSpec> {
        MethodSpec::parse(method, self.config.backend).map_err(to_py)
    }
}

#[pymethods]
impl Task {
    /// Reads a TOML or JSON run configuration; relative paths resolve
    /// against the file's directory.
    #[staticmethod]
    fn load(config_path: PathBuf) -> PyResult<Task> {
        let (config, fingerprint) = RunConfig::load(&config_path).map_err(to_py)?;
        Ok(Task {
            config,
            fingerprint,
        })
    }

    /// Trains the language model on the task's text and saves it.
    fn train_lm(&self) -> PyResult<()> {
        let text_path = self
            .config
            .paths
            .lm_text
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("config has no paths.lm_text"))?;
        let prefix = self
            .config
            .paths
            .model
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("config has no paths.model"))?;
        let sentences = load_lm_text(text_path).map_err(to_py)?;
        let vocab = Vocab::build(&sentences, self.config.lm.vocab_size).map_err(to_py)?;
        let (params, _) = train_lm(&sentences, &vocab, &self.config.lm).map_err(to_py)?;
        save_model(prefix, &params, &vocab, &self.config.lm, &self.fingerprint).map_err(to_py)
    }

    /// Scores one or more methods ("mfs", "nn-lm", "lp-bow", ...) against
    /// the task's gold instances. Returns {method: report dict}.
    fn evaluate<'py>(&self, py: Python<'py>, methods: Vec<String>) -> PyResult<Bound<'py, PyDict>> {
        let data = self.load_data()?;
        let task = self.eval_task(&data);
        let out = PyDict::new(py);
        for method in &methods {
            let spec = self.spec(method)?;
            let (_, report) = task.evaluate(spec).map_err(to_py)?;
            out.set_item(spec.label(), report_to_dict(py, &report)?)?;
        }
        Ok(out)
    }

    /// Predicts senses for the task's instances without scoring them.
    fn classify<'py>(&self, py: Python<'py>, method: &str) -> PyResult<Bound<'py, PyList>> {
        let data = self.load_data()?;
        let task = self.eval_task(&data);
        let run = task.predict(self.spec(method)?).map_err(to_py)?;
        let rows: Vec<_> = run
            .predictions
            .iter()
            .map(|(id, pred)| prediction_to_dict(py, id, pred))
            .collect::<PyResult<_>>()?;
        PyList::new(py, rows)
    }

    /// Propagation F1 across graph density percentiles, as (q, f1) pairs.
    #[pyo3(signature = (percentiles, method="lp"))]
    fn sweep_density(&self, percentiles: Vec<f64>, method: &str) -> PyResult<Vec<(f64, f64)>> {
        let data = self.load_data()?;
        let task = self.eval_task(&data);
        let rows = senseprop::eval::run_density_sweep(&task, self.spec(method)?, &percentiles)
            .map_err(to_py)?;
        Ok(rows.into_iter().map(|(q, r)| (q, r.f1)).collect())
    }

    /// Configuration digest; identical runs produce identical outputs.
    #[getter]
    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Lemmas defined by the task's sense inventory.
    #[getter]
    fn lemmas(&self) -> PyResult<Vec<String>> {
        let path = self
            .config
            .paths
            .inventory
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("config has no paths.inventory"))?;
        let inventory = SenseInventory::load(path).map_err(to_py)?;
        Ok(inventory.lemmas().map(str::to_string).collect())
    }

    fn __repr__(&self) -> String {
        format!("Task(fingerprint={})", &self.fingerprint[..8])
    }
}

/// Writes a synthetic pseudoword task into `out_dir` and returns the path
/// of its run configuration file.
#[pyfunction]
#[pyo3(signature = (out_dir, preset="default", seed=42, **overrides))]
fn generate_task(
    out_dir: PathBuf,
    preset: &str,
    seed: u64,
    overrides: Option<&Bound<'_, PyDict>>,
) -> PyResult<PathBuf> {
    let mut cfg = match preset {
        "default" => SynthConfig {
            seed,
            ..SynthConfig::default()
        },
        "order" => SynthConfig::order_contrast(seed),
        "semi" => SynthConfig::semi_supervised(seed),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown preset `{other}` (expected default, order, or semi)"
            )))
        }
    };
    if let Some(kwargs) = overrides {
        for (key, value) in kwargs {
            let name = key.extract::<String>()?;
            match name.as_str() {
                "pseudowords" => cfg.pseudowords = value.extract()?,
                "seeds_per_sense" => cfg.seeds_per_sense = value.extract()?,
                "unlabeled_per_lemma" => cfg.unlabeled_per_lemma = value.extract()?,
                "eval_per_lemma" => cfg.eval_per_lemma = value.extract()?,
                "sense_mode" => {
                    let mode: String = value.extract()?;
                    cfg.sense_mode = mode.parse().map_err(to_py)?;
                }
                "skew" => cfg.skew = value.extract()?,
                "subtypes" => cfg.subtypes = value.extract()?,
                "pool_per_subtype" => cfg.pool_per_subtype = value.extract()?,
                "seed_subtypes" => cfg.seed_subtypes = Some(value.extract()?),
                "filler_words" => cfg.filler_words = value.extract()?,
                "max_filler" => cfg.max_filler = value.extract()?,
                "bridge_prob" => cfg.bridge_prob = value.extract()?,
                "lm_sentences" => cfg.lm_sentences = value.extract()?,
                "lm_epochs" => cfg.lm_epochs = value.extract()?,
                other => {
                    return Err(PyValueError::new_err(format!(
                        "unknown task option `{other}`"
                    )))
                }
            }
        }
    }
    let task = generate(&cfg, &out_dir).map_err(to_py)?;
    Ok(task.config_path)
}

/// Cosine similarity of two equal-length vectors.
#[pyfunction]
fn cosine(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    senseprop::embed::cosine(&u, &v).map_err(to_py)
}

#[pymodule]
fn senseprop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<LanguageModel>()?;
    m.add_class::<Task>()?;
    m.add_function(wrap_pyfunction!(generate_task, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    Ok(())
}
