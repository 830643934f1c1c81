//! Command line pipeline: train the language model, build sense vectors,
//! classify, evaluate, sweep graph density, and generate synthetic tasks.
//!
//! Every command reads one run configuration file; flags override config
//! values before the fingerprint is computed, so overridden runs are
//! fingerprinted like edited configs. Exit codes: 0 success, 2 config or
//! validation problems, 3 data id mismatches, 4 numeric failures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::classify::{
    build_sense_vectors, classify_mfs, classify_nn, count_senses, load_sense_store,
    save_sense_store, Method, Prediction, SenseVectors,
};
use crate::config::{short_fingerprint, Command, RunConfig};
use crate::corpus::{
    load_labeled, load_lm_text, load_unlabeled, SenseInventory, Sentence, UnlabeledByLemma,
};
use crate::embed::{Backend, Embedder, WordVectorTable};
use crate::eval::{
    load_eval_instances, read_predictions, run_density_sweep, score, write_predictions,
    write_report_csv, write_report_json, write_sweep_csv, BackendKind, EvalInstance, EvalTask,
    MethodSpec, PredictionRecord, ScoreReport,
};
use crate::lm::{load_model, save_model, train_lm, Vocab};
use crate::synth::{generate, SynthConfig};
use crate::{Error, Result};

#[derive(Parser)]
#[command(
    name = "senseprop",
    version,
    about = "Word sense disambiguation with context embeddings and label propagation"
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

/// Config file plus the knobs flags may override.
#[derive(Args)]
struct RunArgs {
    /// Run configuration file (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the random seed (also drives language model training).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the embedding backend: bow or lm.
    #[arg(long)]
    backend: Option<String>,
    /// Override the classification method: mfs, nn, or lp.
    #[arg(long)]
    method: Option<String>,
    /// Override language model training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<(RunConfig, String)> {
        self.load_extra(|_| {})
    }

    /// Applies flag overrides (plus `extra`) before fingerprinting.
    fn load_extra<F>(&self, extra: F) -> Result<(RunConfig, String)>
    where
        F: FnOnce(&mut RunConfig),
    {
        let backend = self.backend.as_deref().map(str::parse).transpose()?;
        let method = self.method.as_deref().map(parse_method).transpose()?;
        RunConfig::load_with(&self.config, |config| {
            if let Some(seed) = self.seed {
                config.seed = seed;
                config.lm.seed = seed;
            }
            if let Some(backend) = backend {
                config.backend = backend;
            }
            if let Some(method) = method {
                config.method = method;
            }
            if let Some(epochs) = self.epochs {
                config.lm.max_epochs = epochs;
            }
            extra(config);
        })
    }

    /// Output directory: configured, else next to the config file.
    fn output_dir(&self, config: &RunConfig) -> PathBuf {
        config.paths.output_dir.clone().unwrap_or_else(|| {
            self.config
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."))
                .to_path_buf()
        })
    }
}

fn parse_method(s: &str) -> Result<Method> {
    match s {
        "mfs" => Ok(Method::Mfs),
        "nn" => Ok(Method::Nn),
        "lp" => Ok(Method::Lp),
        other => Err(Error::InvalidInput(format!(
            "unknown method `{other}` (expected mfs, nn, or lp)"
        ))),
    }
}

#[derive(Subcommand)]
enum CliCommand {
    /// Train the held-out-word language model and save its artifacts.
    TrainLm {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Average labeled context vectors into a per-sense vector store.
    BuildSenses {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Predict a sense for every input record.
    Classify {
        #[command(flatten)]
        run: RunArgs,
        /// Input records: JSONL with tokens, focus, lemma, optional id.
        #[arg(long)]
        input: PathBuf,
        /// Output predictions JSONL.
        #[arg(long)]
        output: PathBuf,
    },
    /// Run methods against gold instances and write report files.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Methods to evaluate, e.g. mfs,nn,lp or nn-bow,nn-lm.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        /// Score an existing predictions file instead of running methods.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Restrict scoring to lemmas with more than one sense.
        #[arg(long)]
        polysemous_only: bool,
    },
    /// Evaluate propagation across graph density percentiles.
    SweepDensity {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![98.0, 95.0, 90.0])]
        percentiles: Vec<f64>,
    },
    /// Generate a synthetic pseudoword task directory.
    GenSynthetic {
        /// Directory to create the task in.
        #[arg(long)]
        out: PathBuf,
        /// Task preset: default, order, or semi.
        #[arg(long, default_value = "default")]
        preset: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pseudowords: Option<usize>,
        #[arg(long)]
        seeds_per_sense: Option<usize>,
        #[arg(long)]
        unlabeled_per_lemma: Option<usize>,
        #[arg(long)]
        eval_per_lemma: Option<usize>,
        /// How senses differ: order or content.
        #[arg(long)]
        sense_mode: Option<String>,
        #[arg(long)]
        skew: Option<f64>,
        #[arg(long)]
        subtypes: Option<usize>,
        #[arg(long)]
        pool_per_subtype: Option<usize>,
        #[arg(long)]
        seed_subtypes: Option<usize>,
        #[arg(long)]
        filler_words: Option<usize>,
        #[arg(long)]
        max_filler: Option<usize>,
        #[arg(long)]
        bridge_prob: Option<f64>,
        #[arg(long)]
        lm_sentences: Option<usize>,
        #[arg(long)]
        lm_epochs: Option<usize>,
    },
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        CliCommand::TrainLm { run } => {
            let (config, fingerprint) = run.load()?;
            cmd_train_lm(&config, &fingerprint)
        }
        CliCommand::BuildSenses { run } => {
            let (config, fingerprint) = run.load()?;
            cmd_build_senses(&config, &fingerprint)
        }
        CliCommand::Classify { run, input, output } => {
            let (config, fingerprint) = run.load()?;
            cmd_classify(&config, &fingerprint, &input, &output)
        }
        CliCommand::Evaluate {
            run,
            methods,
            predictions,
            polysemous_only,
        } => {
            let (config, fingerprint) = run.load_extra(|config| {
                if polysemous_only {
                    config.eval.polysemous_only = true;
                }
            })?;
            let out_dir = run.output_dir(&config);
            cmd_evaluate(
                &config,
                &fingerprint,
                &out_dir,
                &methods,
                predictions.as_deref(),
            )
        }
        CliCommand::SweepDensity { run, percentiles } => {
            let (config, fingerprint) = run.load()?;
            let out_dir = run.output_dir(&config);
            cmd_sweep_density(&config, &fingerprint, &out_dir, &percentiles)
        }
        CliCommand::GenSynthetic {
            out,
            preset,
            seed,
            pseudowords,
            seeds_per_sense,
            unlabeled_per_lemma,
            eval_per_lemma,
            sense_mode,
            skew,
            subtypes,
            pool_per_subtype,
            seed_subtypes,
            filler_words,
            max_filler,
            bridge_prob,
            lm_sentences,
            lm_epochs,
        } => {
            let base_seed = seed.unwrap_or(42);
            let mut cfg = match preset.as_str() {
                "default" => SynthConfig {
                    seed: base_seed,
                    ..SynthConfig::default()
                },
                "order" => SynthConfig::order_contrast(base_seed),
                "semi" => SynthConfig::semi_supervised(base_seed),
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown preset `{other}` (expected default, order, or semi)"
                    )))
                }
            };
            macro_rules! set {
                ($($field:ident),*) => {
                    $(if let Some(v) = $field { cfg.$field = v; })*
                };
            }
            set!(
                pseudowords,
                seeds_per_sense,
                unlabeled_per_lemma,
                eval_per_lemma,
                skew,
                subtypes,
                pool_per_subtype,
                filler_words,
                max_filler,
                bridge_prob,
                lm_sentences,
                lm_epochs
            );
            if let Some(v) = seed_subtypes {
                cfg.seed_subtypes = Some(v);
            }
            if let Some(v) = sense_mode {
                cfg.sense_mode = v.parse()?;
            }
            let task = generate(&cfg, &out)?;
            println!("task -> {}", task.config_path.display());
            Ok(())
        }
    }
}

fn parent_dir_of(prefix: &Path) -> Option<&Path> {
    prefix.parent().filter(|p| !p.as_os_str().is_empty())
}

fn create_parent(prefix: &Path) -> Result<()> {
    if let Some(dir) = parent_dir_of(prefix) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn build_embedder(config: &RunConfig, kind: BackendKind) -> Result<Embedder> {
    match kind {
        BackendKind::Bow => {
            let path = config.paths.word_vectors.as_ref().ok_or_else(|| {
                Error::InvalidInput("bow backend needs paths.word_vectors".to_string())
            })?;
            let table = WordVectorTable::load(path)?;
            Ok(Embedder::new(Backend::bow(table, config.eval.bow_window)))
        }
        BackendKind::Lm => {
            let prefix = config.paths.model.as_ref().ok_or_else(|| {
                Error::InvalidInput("lm backend needs paths.model".to_string())
            })?;
            let (params, vocab, manifest) = load_model(prefix)?;
            Ok(Embedder::new(Backend::lm(
                params,
                vocab,
                manifest.config.max_sentence_len,
            )?))
        }
    }
}

/// Trains the language model and writes weights, vocabulary, and manifest.
pub fn cmd_train_lm(config: &RunConfig, fingerprint: &str) -> Result<()> {
    config.validate_for(Command::TrainLm)?;
    let lm_text = config.paths.lm_text.as_ref().expect("validated");
    let prefix = config.paths.model.as_ref().expect("validated");
    let sentences = load_lm_text(lm_text)?;
    let vocab = Vocab::build(&sentences, config.lm.vocab_size)?;
    println!(
        "training on {} sentences, vocabulary {} words",
        sentences.len(),
        vocab.len()
    );
    let (params, report) = train_lm(&sentences, &vocab, &config.lm)?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        println!(
            "epoch {}/{} loss {loss:.6}",
            epoch + 1,
            report.epoch_losses.len()
        );
    }
    create_parent(prefix)?;
    save_model(prefix, &params, &vocab, &config.lm, fingerprint)?;
    println!("model -> {}", prefix.display());
    Ok(())
}

/// Builds per-sense centroid vectors for every lemma with labeled data.
pub fn cmd_build_senses(config: &RunConfig, fingerprint: &str) -> Result<()> {
    config.validate_for(Command::BuildSenses)?;
    let inventory = SenseInventory::load(config.paths.inventory.as_ref().expect("validated"))?;
    let labeled = load_labeled(config.paths.labeled.as_ref().expect("validated"), &inventory)?;
    let prefix = config.paths.senses.as_ref().expect("validated");
    let embedder = build_embedder(config, config.backend)?;
    let mut store: BTreeMap<String, SenseVectors> = BTreeMap::new();
    for (lemma, examples) in &labeled {
        let (vectors, warnings) = build_sense_vectors(
            lemma,
            examples,
            &embedder,
            &inventory,
            config.eval.normalize_sense_vectors,
        )?;
        for warning in warnings {
            eprintln!("warning: {warning}");
        }
        if vectors.is_empty() {
            eprintln!("warning: lemma `{lemma}` has no usable examples, skipped");
            continue;
        }
        store.insert(lemma.clone(), vectors);
    }
    if store.is_empty() {
        return Err(Error::InvalidInput(
            "no lemma produced any sense vector".to_string(),
        ));
    }
    create_parent(prefix)?;
    save_sense_store(prefix, &store, config.eval.normalize_sense_vectors, fingerprint)?;
    println!("sense vectors for {} lemmas -> {}", store.len(), prefix.display());
    Ok(())
}

#[derive(serde::Deserialize)]
struct InputRecord {
    #[serde(default)]
    id: Option<String>,
    tokens: Vec<String>,
    focus: usize,
    lemma: String,
}

/// Classifies every input record, in input order. Records that cannot be
/// processed (unknown lemma, bad focus, empty context) abstain and the
/// problem is logged; only configuration and artifact problems abort.
pub fn cmd_classify(
    config: &RunConfig,
    fingerprint: &str,
    input: &Path,
    output: &Path,
) -> Result<()> {
    config.validate_for(Command::Classify)?;
    let inventory = SenseInventory::load(config.paths.inventory.as_ref().expect("validated"))?;

    let mut ids = Vec::new();
    let mut lemmas = Vec::new();
    let mut parsed: Vec<Option<(Sentence, String)>> = Vec::new();
    for (ordinal, (line_no, value)) in crate::corpus::read_jsonl(input)?.into_iter().enumerate() {
        let record: InputRecord = serde_json::from_value(value)
            .map_err(|e| Error::parse(input, line_no, e.to_string()))?;
        ids.push(record.id.unwrap_or_else(|| ordinal.to_string()));
        lemmas.push(record.lemma.clone());
        if !inventory.contains(&record.lemma) {
            eprintln!(
                "warning: line {line_no}: unknown lemma `{}`, abstaining",
                record.lemma
            );
            parsed.push(None);
            continue;
        }
        match Sentence::new(record.tokens, record.focus) {
            Ok(sentence) => parsed.push(Some((sentence, record.lemma))),
            Err(err) => {
                eprintln!("warning: line {line_no}: {err}, abstaining");
                parsed.push(None);
            }
        }
    }

    let labeled = match &config.paths.labeled {
        Some(path) => Some(load_labeled(path, &inventory)?),
        None => None,
    };

    let mut predictions: Vec<Prediction> =
        vec![Prediction::abstain(config.method); parsed.len()];
    match config.method {
        Method::Mfs => {
            let mut cache: BTreeMap<&str, Prediction> = BTreeMap::new();
            for (idx, slot) in parsed.iter().enumerate() {
                let Some((_, lemma)) = slot else { continue };
                if !cache.contains_key(lemma.as_str()) {
                    let counts = labeled
                        .as_ref()
                        .and_then(|l| l.get(lemma))
                        .map(|examples| count_senses(examples));
                    let pred = classify_mfs(lemma, &inventory, counts.as_ref())?;
                    cache.insert(lemma.as_str(), pred);
                }
                predictions[idx] = cache[lemma.as_str()].clone();
            }
        }
        Method::Nn => {
            let (store, _manifest) =
                load_sense_store(config.paths.senses.as_ref().expect("validated"))?;
            let embedder = build_embedder(config, config.backend)?;
            for (idx, slot) in parsed.iter().enumerate() {
                let Some((sentence, lemma)) = slot else { continue };
                let Some(vectors) = store.get(lemma) else {
                    eprintln!("warning: lemma `{lemma}` not in sense store, abstaining");
                    continue;
                };
                match embedder.embed(sentence) {
                    Ok(ctx) => predictions[idx] = classify_nn(&ctx, vectors, &inventory)?,
                    Err(Error::EmptyContext) => {
                        eprintln!("warning: record {}: empty context, abstaining", ids[idx]);
                    }
                    Err(other) => return Err(other),
                }
            }
        }
        Method::Lp => {
            let labeled = labeled.ok_or_else(|| {
                Error::InvalidInput("lp classification needs paths.labeled".to_string())
            })?;
            let unlabeled = match &config.paths.unlabeled {
                Some(path) => load_unlabeled(path, config.eval.unlabeled_cap)?,
                None => UnlabeledByLemma::new(),
            };
            let embedder = build_embedder(config, config.backend)?;
            let instances: Vec<EvalInstance> = parsed
                .iter()
                .enumerate()
                .filter_map(|(idx, slot)| {
                    slot.as_ref().map(|(sentence, lemma)| EvalInstance {
                        id: idx.to_string(),
                        sentence: sentence.clone(),
                        lemma: lemma.clone(),
                        gold: Default::default(),
                    })
                })
                .collect();
            let task = EvalTask {
                inventory: &inventory,
                labeled: &labeled,
                unlabeled: &unlabeled,
                instances: &instances,
                bow: (config.backend == BackendKind::Bow).then_some(&embedder),
                lm: (config.backend == BackendKind::Lm).then_some(&embedder),
                lp: config.lp,
                normalize: config.eval.normalize_sense_vectors,
                polysemous_only: config.eval.polysemous_only,
                fingerprint: fingerprint.to_string(),
            };
            let run = task.predict(MethodSpec {
                method: Method::Lp,
                backend: config.backend,
            })?;
            for warning in &run.warnings {
                eprintln!("warning: {warning}");
            }
            for (key, prediction) in run.predictions {
                let idx: usize = key.parse().expect("internal ids are ordinals");
                predictions[idx] = prediction;
            }
        }
    }

    let records: Vec<PredictionRecord> = predictions
        .into_iter()
        .zip(ids)
        .zip(lemmas)
        .map(|((prediction, id), lemma)| PredictionRecord {
            id,
            lemma,
            sense: prediction.sense,
            score: prediction.score,
            method: prediction.method,
            abstained: prediction.abstained,
            fingerprint: fingerprint.to_string(),
        })
        .collect();
    create_parent(output)?;
    write_predictions(&records, output)?;
    println!("{} predictions -> {}", records.len(), output.display());
    Ok(())
}

fn print_report(label: &str, report: &ScoreReport) {
    println!(
        "{label}: precision {:.4} recall {:.4} f1 {:.4} macro_f1 {:.4} \
         ({}/{} attempted, {} correct)",
        report.precision,
        report.recall,
        report.f1,
        report.macro_f1,
        report.attempted,
        report.total,
        report.correct
    );
}

struct LoadedTask {
    inventory: SenseInventory,
    labeled: crate::corpus::LabeledByLemma,
    unlabeled: UnlabeledByLemma,
    instances: Vec<EvalInstance>,
}

fn load_task_data(config: &RunConfig) -> Result<LoadedTask> {
    let inventory = SenseInventory::load(config.paths.inventory.as_ref().expect("validated"))?;
    let labeled = load_labeled(config.paths.labeled.as_ref().expect("validated"), &inventory)?;
    let unlabeled = match &config.paths.unlabeled {
        Some(path) => load_unlabeled(path, config.eval.unlabeled_cap)?,
        None => UnlabeledByLemma::new(),
    };
    let instances =
        load_eval_instances(config.paths.eval.as_ref().expect("validated"), &inventory)?;
    Ok(LoadedTask {
        inventory,
        labeled,
        unlabeled,
        instances,
    })
}

/// Builds at most one embedder per backend kind used by `specs`.
fn build_backends(
    config: &RunConfig,
    specs: &[MethodSpec],
) -> Result<(Option<Embedder>, Option<Embedder>)> {
    let needs = |kind: BackendKind| {
        specs
            .iter()
            .any(|s| s.method != Method::Mfs && s.backend == kind)
    };
    let bow = if needs(BackendKind::Bow) {
        Some(build_embedder(config, BackendKind::Bow)?)
    } else {
        None
    };
    let lm = if needs(BackendKind::Lm) {
        Some(build_embedder(config, BackendKind::Lm)?)
    } else {
        None
    };
    Ok((bow, lm))
}

/// Runs the configured methods over the gold instances and writes one
/// predictions file and one JSON + CSV report pair per method, all named
/// with the shared config fingerprint prefix. With `predictions`, scores
/// that file instead of running anything.
pub fn cmd_evaluate(
    config: &RunConfig,
    fingerprint: &str,
    out_dir: &Path,
    methods: &[String],
    predictions: Option<&Path>,
) -> Result<()> {
    config.validate_for(Command::Evaluate)?;
    let data = load_task_data(config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let fp8 = short_fingerprint(fingerprint);

    if let Some(path) = predictions {
        let records = read_predictions(path)?;
        let mut map = BTreeMap::new();
        let gold_lemmas: BTreeMap<&str, &str> = data
            .instances
            .iter()
            .map(|i| (i.id.as_str(), i.lemma.as_str()))
            .collect();
        for record in records {
            if let Some(&lemma) = gold_lemmas.get(record.id.as_str()) {
                if lemma != record.lemma {
                    return Err(Error::IdMismatch(format!(
                        "prediction `{}` is for lemma `{}` but gold has `{lemma}`",
                        record.id, record.lemma
                    )));
                }
            }
            let prediction = Prediction {
                sense: record.sense,
                score: record.score,
                method: record.method,
                abstained: record.abstained,
            };
            if map.insert(record.id.clone(), prediction).is_some() {
                return Err(Error::IdMismatch(format!(
                    "duplicate prediction id `{}`",
                    record.id
                )));
            }
        }
        let report = score(
            &map,
            &data.instances,
            &data.inventory,
            config.eval.polysemous_only,
            fingerprint,
        )?;
        print_report("scored", &report);
        let json = out_dir.join(format!("report-{fp8}-scored.json"));
        let csv = out_dir.join(format!("report-{fp8}-scored.csv"));
        write_report_json(&report, &json)?;
        write_report_csv(&report, &csv)?;
        println!("report -> {}", json.display());
        return Ok(());
    }

    let specs = resolve_method_specs(config, methods)?;
    if specs.iter().any(|s| s.method == Method::Lp) && config.paths.unlabeled.is_none() {
        return Err(Error::InvalidInput(
            "lp evaluation needs paths.unlabeled".to_string(),
        ));
    }
    let (bow, lm) = build_backends(config, &specs)?;
    let task = EvalTask {
        inventory: &data.inventory,
        labeled: &data.labeled,
        unlabeled: &data.unlabeled,
        instances: &data.instances,
        bow: bow.as_ref(),
        lm: lm.as_ref(),
        lp: config.lp,
        normalize: config.eval.normalize_sense_vectors,
        polysemous_only: config.eval.polysemous_only,
        fingerprint: fingerprint.to_string(),
    };
    for spec in specs {
        let label = spec.label();
        let (run, report) = task.evaluate(spec)?;
        for warning in &run.warnings {
            eprintln!("warning: {label}: {warning}");
        }
        let records: Vec<PredictionRecord> = data
            .instances
            .iter()
            .map(|instance| {
                let prediction = &run.predictions[&instance.id];
                PredictionRecord {
                    id: instance.id.clone(),
                    lemma: instance.lemma.clone(),
                    sense: prediction.sense.clone(),
                    score: prediction.score,
                    method: prediction.method,
                    abstained: prediction.abstained,
                    fingerprint: fingerprint.to_string(),
                }
            })
            .collect();
        write_predictions(
            &records,
            &out_dir.join(format!("predictions-{fp8}-{label}.jsonl")),
        )?;
        let json = out_dir.join(format!("report-{fp8}-{label}.json"));
        write_report_json(&report, &json)?;
        write_report_csv(&report, &out_dir.join(format!("report-{fp8}-{label}.csv")))?;
        print_report(&label, &report);
        println!("report -> {}", json.display());
    }
    Ok(())
}

/// Explicit `--methods` win; otherwise the config's method and backend.
fn resolve_method_specs(config: &RunConfig, methods: &[String]) -> Result<Vec<MethodSpec>> {
    if methods.is_empty() {
        return Ok(vec![MethodSpec {
            method: config.method,
            backend: config.backend,
        }]);
    }
    let mut specs = Vec::new();
    for name in methods {
        let spec = MethodSpec::parse(name, config.backend)?;
        if !specs.contains(&spec) {
            specs.push(spec);
        }
    }
    Ok(specs)
}

/// Runs propagation at every percentile and writes one CSV.
pub fn cmd_sweep_density(
    config: &RunConfig,
    fingerprint: &str,
    out_dir: &Path,
    percentiles: &[f64],
) -> Result<()> {
    config.validate_for(Command::SweepDensity)?;
    let data = load_task_data(config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let spec = MethodSpec {
        method: Method::Lp,
        backend: config.backend,
    };
    let (bow, lm) = build_backends(config, &[spec])?;
    let task = EvalTask {
        inventory: &data.inventory,
        labeled: &data.labeled,
        unlabeled: &data.unlabeled,
        instances: &data.instances,
        bow: bow.as_ref(),
        lm: lm.as_ref(),
        lp: config.lp,
        normalize: config.eval.normalize_sense_vectors,
        polysemous_only: config.eval.polysemous_only,
        fingerprint: fingerprint.to_string(),
    };
    let rows = run_density_sweep(&task, spec, percentiles)?;
    for (q, report) in &rows {
        print_report(&format!("q={q}"), report);
    }
    let fp8 = short_fingerprint(fingerprint);
    let path = out_dir.join(format!("sweep-{fp8}.csv"));
    write_sweep_csv(&rows, &data.inventory, &path, fingerprint)?;
    println!("sweep -> {}", path.display());
    Ok(())
}
