//! Scoring and experiment harness.
//!
//! [`score`] compares predictions against gold labels and reports micro
//! precision/recall/F1, a per-POS breakdown, and macro F1 (the unweighted
//! mean of per-lemma F1). An abstention costs recall but not precision.
//! A prediction is correct when it lands in the instance's set of
//! acceptable gold senses.
//!
//! [`EvalTask`] drives the classification methods over a full task:
//! most-frequent-sense, nearest-neighbor with either embedding backend,
//! and label propagation. [`run_density_sweep`] re-runs propagation across
//! graph-density percentiles and [`run_ablation`] re-runs methods across
//! training subsets. Grid points are independent and could run in
//! parallel; they run sequentially so output bytes never depend on
//! scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::{
    build_sense_vectors, classify_mfs, classify_nn, count_senses, Method, Prediction,
};
use crate::corpus::{read_jsonl, LabeledByLemma, SenseInventory, Sentence, UnlabeledByLemma};
use crate::embed::Embedder;
use crate::propagate::{build_graph, classify_lp, propagate, LpParams};
use crate::{Error, Result};

/// Which embedding backend a method runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Bow,
    Lm,
}

impl BackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::Bow => "bow",
            BackendKind::Lm => "lm",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bow" => Ok(BackendKind::Bow),
            "lm" => Ok(BackendKind::Lm),
            other => Err(Error::InvalidInput(format!(
                "unknown backend `{other}` (expected `bow` or `lm`)"
            ))),
        }
    }
}

/// A method/backend pair, e.g. nearest-neighbor over the language model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodSpec {
    pub method: Method,
    pub backend: BackendKind,
}

impl MethodSpec {
    /// Parses `mfs`, `nn`, `lp` (using `default_backend`) or the explicit
    /// forms `nn-bow`, `nn-lm`, `lp-bow`, `lp-lm`.
    pub fn parse(s: &str, default_backend: BackendKind) -> Result<MethodSpec> {
        let (method, backend) = match s {
            "mfs" => (Method::Mfs, default_backend),
            "nn" => (Method::Nn, default_backend),
            "lp" => (Method::Lp, default_backend),
            "nn-bow" => (Method::Nn, BackendKind::Bow),
            "nn-lm" => (Method::Nn, BackendKind::Lm),
            "lp-bow" => (Method::Lp, BackendKind::Bow),
            "lp-lm" => (Method::Lp, BackendKind::Lm),
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown method `{other}` (expected mfs, nn[-bow|-lm], lp[-bow|-lm])"
                )))
            }
        };
        Ok(MethodSpec { method, backend })
    }

    /// Stable label used in report file names and tables.
    pub fn label(&self) -> String {
        match self.method {
            Method::Mfs => "mfs".to_string(),
            Method::Nn => format!("nn-{}", self.backend.as_str()),
            Method::Lp => format!("lp-{}", self.backend.as_str()),
        }
    }
}

/// One evaluation instance: a sentence, its focus lemma, and the set of
/// acceptable gold senses.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub id: String,
    pub sentence: Sentence,
    pub lemma: String,
    pub gold: BTreeSet<String>,
}

#[derive(Debug, Deserialize)]
struct EvalRecord {
    #[serde(default)]
    id: Option<String>,
    tokens: Vec<String>,
    focus: usize,
    lemma: String,
    #[serde(default)]
    sense: Option<String>,
    #[serde(default)]
    gold: Option<Vec<String>>,
}

/// Loads gold evaluation instances.
///
/// Each JSONL record carries either a single `sense` or a `gold` array of
/// acceptable senses. Missing ids default to the record's ordinal (as a
/// decimal string); ids must be unique.
pub fn load_eval_instances(path: &Path, inventory: &SenseInventory) -> Result<Vec<EvalInstance>> {
    let mut instances = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (ordinal, (line_no, value)) in read_jsonl(path)?.into_iter().enumerate() {
        let record: EvalRecord = serde_json::from_value(value)
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        let context = format!("{}:{}", path.display(), line_no);
        let gold_list = match (record.sense, record.gold) {
            (Some(s), None) => vec![s],
            (None, Some(g)) if !g.is_empty() => g,
            (Some(_), Some(_)) => {
                return Err(Error::parse(
                    path,
                    line_no,
                    "record has both `sense` and `gold`; use one",
                ))
            }
            _ => return Err(Error::parse(path, line_no, "record has no gold sense")),
        };
        let senses = inventory.senses(&record.lemma).map_err(|_| Error::UnknownLemma {
            lemma: record.lemma.clone(),
            context: format!(" at {context}"),
        })?;
        let mut gold = BTreeSet::new();
        for g in gold_list {
            if !senses.contains(&g) {
                return Err(Error::UnknownSense {
                    context,
                    lemma: record.lemma,
                    sense: g,
                });
            }
            gold.insert(g);
        }
        let sentence = Sentence::new(record.tokens, record.focus).map_err(|e| match e {
            Error::FocusOutOfRange { focus, len, .. } => Error::FocusOutOfRange {
                context,
                focus,
                len,
            },
            other => other,
        })?;
        let id = record.id.unwrap_or_else(|| ordinal.to_string());
        if !seen_ids.insert(id.clone()) {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate instance id `{id}`"),
            ));
        }
        instances.push(EvalInstance {
            id,
            sentence,
            lemma: record.lemma,
            gold,
        });
    }
    Ok(instances)
}

/// Counts and derived rates for one slice of instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubReport {
    pub attempted: usize,
    pub correct: usize,
    pub total: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SubReport {
    pub fn from_counts(attempted: usize, correct: usize, total: usize) -> SubReport {
        let precision = if attempted > 0 {
            correct as f64 / attempted as f64
        } else {
            0.0
        };
        let recall = if total > 0 {
            correct as f64 / total as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        SubReport {
            attempted,
            correct,
            total,
            precision,
            recall,
            f1,
        }
    }
}

/// Full evaluation report for one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub attempted: usize,
    pub correct: usize,
    pub total: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Unweighted mean of per-lemma F1 over lemmas with gold instances.
    pub macro_f1: f64,
    /// Keyed by inventory POS tag; untagged lemmas fall under `none`.
    pub per_pos: BTreeMap<String, SubReport>,
    pub per_lemma: BTreeMap<String, SubReport>,
    pub fingerprint: String,
}

/// Scores predictions against gold instances.
///
/// Every gold id must have a prediction and vice versa; any difference is
/// an id mismatch. With `polysemous_only`, instances of single-sense
/// lemmas are excluded from scoring (the id check still covers them).
pub fn score(
    predictions: &BTreeMap<String, Prediction>,
    gold: &[EvalInstance],
    inventory: &SenseInventory,
    polysemous_only: bool,
    fingerprint: &str,
) -> Result<ScoreReport> {
    let gold_ids: BTreeSet<&String> = gold.iter().map(|g| &g.id).collect();
    if gold_ids.len() != gold.len() {
        return Err(Error::IdMismatch(
            "duplicate instance ids in gold data".to_string(),
        ));
    }
    for id in gold_ids.iter() {
        if !predictions.contains_key(*id) {
            return Err(Error::IdMismatch(format!(
                "gold instance `{id}` has no prediction"
            )));
        }
    }
    for id in predictions.keys() {
        if !gold_ids.contains(id) {
            return Err(Error::IdMismatch(format!(
                "prediction `{id}` has no gold instance"
            )));
        }
    }

    struct Counts {
        attempted: usize,
        correct: usize,
        total: usize,
    }
    let mut overall = Counts {
        attempted: 0,
        correct: 0,
        total: 0,
    };
    let mut per_pos: BTreeMap<String, Counts> = BTreeMap::new();
    let mut per_lemma: BTreeMap<String, Counts> = BTreeMap::new();

    for instance in gold {
        if polysemous_only && !inventory.is_polysemous(&instance.lemma) {
            continue;
        }
        let prediction = &predictions[&instance.id];
        let attempted = !prediction.abstained;
        let correct = match &prediction.sense {
            Some(s) if attempted => instance.gold.contains(s),
            _ => false,
        };
        let pos = inventory
            .pos(&instance.lemma)
            .unwrap_or("none")
            .to_string();
        for counts in [
            &mut overall,
            per_pos.entry(pos).or_insert(Counts {
                attempted: 0,
                correct: 0,
                total: 0,
            }),
            per_lemma.entry(instance.lemma.clone()).or_insert(Counts {
                attempted: 0,
                correct: 0,
                total: 0,
            }),
        ] {
            counts.total += 1;
            if attempted {
                counts.attempted += 1;
            }
            if correct {
                counts.correct += 1;
            }
        }
    }

    let sub = |c: &Counts| SubReport::from_counts(c.attempted, c.correct, c.total);
    let per_lemma: BTreeMap<String, SubReport> =
        per_lemma.iter().map(|(k, v)| (k.clone(), sub(v))).collect();
    let macro_f1 = if per_lemma.is_empty() {
        0.0
    } else {
        per_lemma.values().map(|r| r.f1).sum::<f64>() / per_lemma.len() as f64
    };
    let overall = sub(&overall);
    Ok(ScoreReport {
        attempted: overall.attempted,
        correct: overall.correct,
        total: overall.total,
        precision: overall.precision,
        recall: overall.recall,
        f1: overall.f1,
        macro_f1,
        per_pos: per_pos.iter().map(|(k, v)| (k.clone(), sub(v))).collect(),
        per_lemma,
        fingerprint: fingerprint.to_string(),
    })
}

/// One prediction as written to a predictions JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub lemma: String,
    pub sense: Option<String>,
    pub score: f64,
    pub method: Method,
    pub abstained: bool,
    pub fingerprint: String,
}

pub fn write_predictions(records: &[PredictionRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for record in records {
        let line =
            serde_json::to_string(record).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut records = Vec::new();
    for (line_no, value) in read_jsonl(path)? {
        let record: PredictionRecord = serde_json::from_value(value)
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        if record.abstained != record.sense.is_none() {
            return Err(Error::parse(
                path,
                line_no,
                "abstained flag disagrees with sense field",
            ));
        }
        records.push(record);
    }
    Ok(records)
}

/// Everything needed to run and score methods on one task.
pub struct EvalTask<'a> {
    pub inventory: &'a SenseInventory,
    pub labeled: &'a LabeledByLemma,
    pub unlabeled: &'a UnlabeledByLemma,
    pub instances: &'a [EvalInstance],
    pub bow: Option<&'a Embedder>,
    pub lm: Option<&'a Embedder>,
    pub lp: LpParams,
    /// Normalize context vectors before averaging into sense vectors.
    pub normalize: bool,
    pub polysemous_only: bool,
    pub fingerprint: String,
}

/// Predictions plus non-fatal diagnostics from one method run.
#[derive(Debug)]
pub struct MethodRun {
    pub predictions: BTreeMap<String, Prediction>,
    pub warnings: Vec<String>,
}

impl EvalTask<'_> {
    fn embedder_for(&self, backend: BackendKind) -> Result<&Embedder> {
        let embedder = match backend {
            BackendKind::Bow => self.bow,
            BackendKind::Lm => self.lm,
        };
        embedder.ok_or_else(|| {
            Error::InvalidInput(format!(
                "method needs the `{}` backend but it is not configured",
                backend.as_str()
            ))
        })
    }

    /// Runs one method over all instances with the task's training data.
    pub fn predict(&self, spec: MethodSpec) -> Result<MethodRun> {
        self.predict_with(spec, self.labeled)
    }

    /// Runs one method with an alternative training set (ablation support).
    ///
    /// Instances whose lemma has no training example abstain; propagation
    /// additionally abstains queries that cannot be embedded.
    pub fn predict_with(&self, spec: MethodSpec, labeled: &LabeledByLemma) -> Result<MethodRun> {
        let mut by_lemma: BTreeMap<&str, Vec<&EvalInstance>> = BTreeMap::new();
        for instance in self.instances {
            by_lemma
                .entry(instance.lemma.as_str())
                .or_default()
                .push(instance);
        }

        let mut predictions = BTreeMap::new();
        let mut warnings = Vec::new();
        for (lemma, instances) in by_lemma {
            let examples = labeled.get(lemma).map(Vec::as_slice).unwrap_or(&[]);
            if examples.is_empty() {
                for instance in instances {
                    predictions.insert(instance.id.clone(), Prediction::abstain(spec.method));
                }
                warnings.push(format!("lemma `{lemma}`: no training examples, abstaining"));
                continue;
            }
            match spec.method {
                Method::Mfs => {
                    let counts = count_senses(examples);
                    let pred = classify_mfs(lemma, self.inventory, Some(&counts))?;
                    for instance in instances {
                        predictions.insert(instance.id.clone(), pred.clone());
                    }
                }
                Method::Nn => {
                    let embedder = self.embedder_for(spec.backend)?;
                    let (sv, mut build_warnings) = build_sense_vectors(
                        lemma,
                        examples,
                        embedder,
                        self.inventory,
                        self.normalize,
                    )?;
                    warnings.append(&mut build_warnings);
                    for instance in instances {
                        let pred = match embedder.embed(&instance.sentence) {
                            Ok(ctx) => classify_nn(&ctx, &sv, self.inventory)?,
                            Err(Error::EmptyContext) => {
                                warnings.push(format!(
                                    "instance `{}`: empty context, abstaining",
                                    instance.id
                                ));
                                Prediction::abstain(Method::Nn)
                            }
                            Err(other) => return Err(other),
                        };
                        predictions.insert(instance.id.clone(), pred);
                    }
                }
                Method::Lp => {
                    let embedder = self.embedder_for(spec.backend)?;
                    let mut seeds = Vec::new();
                    for (idx, ex) in examples.iter().enumerate() {
                        match embedder.embed(&ex.sentence) {
                            Ok(_) => seeds.push(ex.clone()),
                            Err(Error::EmptyContext) => warnings.push(format!(
                                "lemma `{lemma}` seed {idx}: empty context, dropped"
                            )),
                            Err(other) => return Err(other),
                        }
                    }
                    let pool: Vec<Sentence> = self
                        .unlabeled
                        .get(lemma)
                        .map(Vec::as_slice)
                        .unwrap_or(&[])
                        .iter()
                        .filter(|s| match embedder.embed(s) {
                            Ok(_) => true,
                            Err(_) => false,
                        })
                        .cloned()
                        .collect();
                    let mut queries = Vec::new();
                    let mut query_instances = Vec::new();
                    for instance in &instances {
                        match embedder.embed(&instance.sentence) {
                            Ok(_) => {
                                queries.push(instance.sentence.clone());
                                query_instances.push(*instance);
                            }
                            Err(Error::EmptyContext) => {
                                warnings.push(format!(
                                    "instance `{}`: empty context, abstaining",
                                    instance.id
                                ));
                                predictions.insert(
                                    instance.id.clone(),
                                    Prediction::abstain(Method::Lp),
                                );
                            }
                            Err(other) => return Err(other),
                        }
                    }
                    if seeds.is_empty() {
                        warnings
                            .push(format!("lemma `{lemma}`: no usable seeds, abstaining"));
                        for instance in query_instances {
                            predictions
                                .insert(instance.id.clone(), Prediction::abstain(Method::Lp));
                        }
                        continue;
                    }
                    if query_instances.is_empty() {
                        continue;
                    }
                    let graph = build_graph(
                        lemma,
                        self.inventory,
                        &seeds,
                        &pool,
                        &queries,
                        embedder,
                        &self.lp,
                    )?;
                    let solution = propagate(&graph, &self.lp)?;
                    if !solution.converged {
                        warnings.push(format!(
                            "lemma `{lemma}`: propagation stopped at {} sweeps without \
                             reaching tolerance",
                            solution.iterations
                        ));
                    }
                    let counts = count_senses(examples);
                    for (k, instance) in query_instances.iter().enumerate() {
                        let pred = classify_lp(
                            &solution,
                            &graph,
                            graph.query_vertex(k),
                            self.inventory,
                            Some(&counts),
                        )?;
                        predictions.insert(instance.id.clone(), pred);
                    }
                }
            }
        }
        Ok(MethodRun {
            predictions,
            warnings,
        })
    }

    /// Predicts and scores in one step.
    pub fn evaluate(&self, spec: MethodSpec) -> Result<(MethodRun, ScoreReport)> {
        let run = self.predict(spec)?;
        let report = score(
            &run.predictions,
            self.instances,
            self.inventory,
            self.polysemous_only,
            &self.fingerprint,
        )?;
        Ok((run, report))
    }
}

/// One full propagation evaluation per percentile, sharing embeddings.
pub fn run_density_sweep(
    task: &EvalTask,
    spec: MethodSpec,
    percentiles: &[f64],
) -> Result<Vec<(f64, ScoreReport)>> {
    if percentiles.is_empty() {
        return Err(Error::InvalidInput(
            "density sweep needs at least one percentile".to_string(),
        ));
    }
    if spec.method != Method::Lp {
        return Err(Error::InvalidInput(
            "density sweep only applies to the propagation method".to_string(),
        ));
    }
    let mut rows = Vec::with_capacity(percentiles.len());
    for &q in percentiles {
        let sub_task = EvalTask {
            lp: LpParams {
                percentile: q,
                ..task.lp
            },
            fingerprint: task.fingerprint.clone(),
            ..*task
        };
        let (_, report) = sub_task.evaluate(spec)?;
        rows.push((q, report));
    }
    Ok(rows)
}

/// Evaluation result for one training subset and method.
pub struct AblationRow {
    pub subset: String,
    pub method: String,
    pub report: ScoreReport,
}

/// Evaluates every method on every named training subset.
pub fn run_ablation(
    task: &EvalTask,
    subsets: &[(String, LabeledByLemma)],
    methods: &[MethodSpec],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, labeled) in subsets {
        for &spec in methods {
            let run = task.predict_with(spec, labeled)?;
            let report = score(
                &run.predictions,
                task.instances,
                task.inventory,
                task.polysemous_only,
                &task.fingerprint,
            )?;
            rows.push(AblationRow {
                subset: name.clone(),
                method: spec.label(),
                report,
            });
        }
    }
    Ok(rows)
}

/// Writes a score report as pretty JSON.
pub fn write_report_json(report: &ScoreReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Writes a score report as CSV: overall, per-POS, per-lemma, macro rows.
pub fn write_report_csv(report: &ScoreReport, path: &Path) -> Result<()> {
    let mut w = csv_writer(path, &report.fingerprint)?;
    write_csv_line(
        &mut w,
        path,
        "slice,attempted,correct,total,precision,recall,f1",
    )?;
    let row = |name: &str, r: &SubReport| {
        format!(
            "{name},{},{},{},{},{},{}",
            r.attempted, r.correct, r.total, r.precision, r.recall, r.f1
        )
    };
    let overall = SubReport {
        attempted: report.attempted,
        correct: report.correct,
        total: report.total,
        precision: report.precision,
        recall: report.recall,
        f1: report.f1,
    };
    write_csv_line(&mut w, path, &row("overall", &overall))?;
    for (pos, r) in &report.per_pos {
        write_csv_line(&mut w, path, &row(&format!("pos:{pos}"), r))?;
    }
    for (lemma, r) in &report.per_lemma {
        write_csv_line(&mut w, path, &row(&format!("lemma:{lemma}"), r))?;
    }
    write_csv_line(&mut w, path, &format!("macro,,,,,,{}", report.macro_f1))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes density sweep results: one row per percentile with overall
/// metrics and one F1 column per POS tag seen in the inventory.
pub fn write_sweep_csv(
    rows: &[(f64, ScoreReport)],
    inventory: &SenseInventory,
    path: &Path,
    fingerprint: &str,
) -> Result<()> {
    let mut pos_tags: BTreeSet<String> = inventory
        .lemmas()
        .filter_map(|l| inventory.pos(l).map(str::to_string))
        .collect();
    if inventory.lemmas().any(|l| inventory.pos(l).is_none()) {
        pos_tags.insert("none".to_string());
    }
    let mut w = csv_writer(path, fingerprint)?;
    let mut header = "percentile,attempted,correct,total,precision,recall,f1,macro_f1".to_string();
    for pos in &pos_tags {
        header.push_str(&format!(",f1:{pos}"));
    }
    write_csv_line(&mut w, path, &header)?;
    for (q, report) in rows {
        let mut line = format!(
            "{q},{},{},{},{},{},{},{}",
            report.attempted,
            report.correct,
            report.total,
            report.precision,
            report.recall,
            report.f1,
            report.macro_f1
        );
        for pos in &pos_tags {
            match report.per_pos.get(pos) {
                Some(r) => line.push_str(&format!(",{}", r.f1)),
                None => line.push(','),
            }
        }
        write_csv_line(&mut w, path, &line)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes ablation results: one row per subset and method.
pub fn write_ablation_csv(rows: &[AblationRow], path: &Path, fingerprint: &str) -> Result<()> {
    let mut w = csv_writer(path, fingerprint)?;
    write_csv_line(
        &mut w,
        path,
        "subset,method,attempted,correct,total,precision,recall,f1,macro_f1",
    )?;
    for row in rows {
        let r = &row.report;
        write_csv_line(
            &mut w,
            path,
            &format!(
                "{},{},{},{},{},{},{},{},{}",
                row.subset,
                row.method,
                r.attempted,
                r.correct,
                r.total,
                r.precision,
                r.recall,
                r.f1,
                r.macro_f1
            ),
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path, fingerprint: &str) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(w, "# fingerprint={fingerprint}").map_err(|e| Error::io(path, e))?;
    Ok(w)
}

fn write_csv_line(w: &mut BufWriter<File>, path: &Path, line: &str) -> Result<()> {
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}
