//! Oracle-driven experiments: the engine answered from ground truth, plus a
//! random-sampling baseline, over synthetic or ingested corpora.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::ProbabilisticClassifier;
use crate::corpus::{ingest_dataset, Class, Dataset, Document, IngestOptions, Origin};
use crate::embed::tokenize;
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::metrics::{self, auc_roc, ConvergencePoint, Estimate, MetricReport};
use crate::seeding::{self, stream};
use crate::workspace::{Bootstrap, Next, PreLabel, Workspace};

/// Parameters of a synthetic bag-of-words corpus.
///
/// Every token is drawn from the document's class topic with probability
/// `signal` and from a shared background vocabulary otherwise. The two class
/// topics share `topic_overlap` words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_docs: usize,
    pub prevalence: f64,
    pub signal: f64,
    pub doc_len: usize,
    pub background_vocab: usize,
    pub topic_vocab: usize,
    pub topic_overlap: usize,
    pub task_name: String,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_docs: 5000,
            prevalence: 0.25,
            signal: STRONG_SIGNAL,
            doc_len: 30,
            background_vocab: 2000,
            topic_vocab: 60,
            topic_overlap: 20,
            task_name: "target".into(),
            seed: 0,
        }
    }
}

pub const STRONG_SIGNAL: f64 = 0.5;

impl CorpusSpec {
    pub fn rare() -> Self {
        Self {
            prevalence: 0.03,
            ..Self::default()
        }
    }

    pub fn common() -> Self {
        Self::default()
    }

    fn topic_range(&self, cls: Class) -> std::ops::Range<usize> {
        let shift = self.topic_vocab - self.topic_overlap.min(self.topic_vocab);
        match cls {
            Class::Yes => 0..self.topic_vocab,
            Class::No => shift..shift + self.topic_vocab,
        }
    }

    /// Words only the positive topic uses; natural keyword queries.
    pub fn keywords(&self, n: usize) -> Vec<String> {
        let shift = self.topic_vocab - self.topic_overlap.min(self.topic_vocab);
        (0..shift.min(n)).map(|i| format!("t{i}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::Invalid("prevalence must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.signal) {
            return Err(Error::Invalid("signal must lie in [0, 1]".into()));
        }
        if self.n_docs == 0 || self.doc_len == 0 || self.background_vocab == 0 || self.topic_vocab == 0 {
            return Err(Error::Invalid("corpus sizes must be positive".into()));
        }
        Ok(())
    }
}

pub fn make_synthetic_corpus(spec: &CorpusSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seeding::rng(spec.seed, &[stream::CORPUS]);
    let n_pos = ((spec.prevalence * spec.n_docs as f64).round() as usize).clamp(1, spec.n_docs);
    let mut classes: Vec<Class> = (0..spec.n_docs)
        .map(|i| if i < n_pos { Class::Yes } else { Class::No })
        .collect();
    classes.shuffle(&mut rng);
    let docs = classes
        .iter()
        .enumerate()
        .map(|(i, &cls)| {
            let topic = spec.topic_range(cls);
            let words: Vec<String> = (0..spec.doc_len)
                .map(|_| {
                    if rng.random::<f64>() < spec.signal {
                        format!("t{}", rng.random_range(topic.clone()))
                    } else {
                        format!("w{}", rng.random_range(0..spec.background_vocab))
                    }
                })
                .collect();
            Document::new(format!("s{i:05}"), words.join(" ")).with_truth(&spec.task_name, cls)
        })
        .collect();
    Dataset::new(format!("synthetic-{}", spec.seed), "synthetic", docs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    Random,
    Keyword,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalScope {
    /// Documents held out of the labeling pool.
    Probe,
    /// The validation split of the final cycle.
    Validation,
}

/// An external corpus with a ground-truth column for the experiment's task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSource {
    pub path: PathBuf,
    #[serde(flatten)]
    pub ingest: IngestOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task_name: String,
    pub label_budget: usize,
    pub high_fraction: f64,
    pub prelabeled: usize,
    pub prelabeled_counts_toward_budget: bool,
    pub bootstrap_mode: BootstrapMode,
    /// Query terms for keyword bootstrapping and pre-label candidates.
    pub keywords: Vec<String>,
    pub seeds: Vec<u64>,
    pub baseline: bool,
    /// Budget of the random baseline; the active budget when unset.
    pub baseline_budget: Option<usize>,
    pub eval_scope: EvalScope,
    pub probe_size: usize,
    pub engine: EngineConfig,
    pub corpus: CorpusSpec,
    pub dataset: Option<DatasetSource>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task_name: "target".into(),
            label_budget: 100,
            high_fraction: 1.0,
            prelabeled: 0,
            prelabeled_counts_toward_budget: false,
            bootstrap_mode: BootstrapMode::Random,
            keywords: Vec::new(),
            seeds: vec![1, 2, 3, 4, 5],
            baseline: false,
            baseline_budget: None,
            eval_scope: EvalScope::Probe,
            probe_size: 500,
            engine: EngineConfig::default(),
            corpus: CorpusSpec::default(),
            dataset: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.label_budget == 0 {
            return Err(Error::Invalid("label_budget must be positive".into()));
        }
        if self.prelabeled_counts_toward_budget && self.label_budget <= self.prelabeled {
            return Err(Error::Invalid(
                "label_budget must exceed prelabeled when pre-labels count toward it".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Invalid("at least one seed is required".into()));
        }
        if !(0.0..=1.0).contains(&self.high_fraction) {
            return Err(Error::Invalid("high_fraction must lie in [0, 1]".into()));
        }
        self.engine.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_toml(&text)
    }

    /// Oracle labels the active run consumes.
    pub fn oracle_budget(&self) -> usize {
        if self.prelabeled_counts_toward_budget {
            self.label_budget - self.prelabeled
        } else {
            self.label_budget
        }
    }

    fn engine_config(&self, seed: u64) -> EngineConfig {
        let mut cfg = self.engine.clone();
        cfg.selection.high_fraction = self.high_fraction;
        cfg.seed = seed;
        cfg
    }

    /// The dataset named by `dataset`, or the synthetic corpus otherwise.
    pub fn materialize(&self) -> Result<Dataset> {
        match &self.dataset {
            Some(src) => ingest_dataset(&src.path, &src.ingest),
            None => {
                let mut spec = self.corpus.clone();
                spec.task_name = self.task_name.clone();
                make_synthetic_corpus(&spec)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Active,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub oracle_labels: usize,
    pub prelabeled: usize,
    /// Positives among oracle-answered documents; pre-labels excluded.
    pub positives_found: usize,
    pub yes_count: usize,
    pub no_count: usize,
    pub cycles: u64,
    pub auc: f64,
    pub report: Option<MetricReport>,
    pub convergence: Vec<ConvergencePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub auc_median: f64,
    pub auc_mean: f64,
    pub positives_found_median: f64,
    pub positives_found_mean: f64,
    pub yes_count_mean: f64,
    pub no_count_mean: f64,
    pub report: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: RunMode,
    pub config: ExperimentConfig,
    pub dataset_id: String,
    pub pool_size: usize,
    pub eval_size: usize,
    pub runs: Vec<SeedRun>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub active: ExperimentReport,
    pub baseline: Option<ExperimentReport>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn aggregate(runs: &[SeedRun]) -> Aggregate {
    let col = |f: &dyn Fn(&SeedRun) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
    let auc = col(&|r| r.auc);
    let pos = col(&|r| r.positives_found as f64);
    let reports: Vec<&MetricReport> = runs.iter().filter_map(|r| r.report.as_ref()).collect();
    let report = (!reports.is_empty()).then(|| {
        let est = |f: &dyn Fn(&MetricReport) -> Estimate| {
            metrics::uncertainty(&reports.iter().map(|r| f(r).mean).collect::<Vec<_>>())
        };
        let n = reports.len();
        MetricReport {
            accuracy: est(&|r| r.accuracy),
            precision: est(&|r| r.precision),
            recall: est(&|r| r.recall),
            auc_roc: est(&|r| r.auc_roc),
            yes_count: reports.iter().map(|r| r.yes_count).sum::<usize>() / n,
            no_count: reports.iter().map(|r| r.no_count).sum::<usize>() / n,
            degenerate_auc: reports.iter().all(|r| r.degenerate_auc),
            n_eval: reports.iter().map(|r| r.n_eval).sum::<usize>() / n,
        }
    });
    Aggregate {
        auc_median: median(&auc),
        auc_mean: mean(&auc),
        positives_found_median: median(&pos),
        positives_found_mean: mean(&pos),
        yes_count_mean: mean(&col(&|r| r.yes_count as f64)),
        no_count_mean: mean(&col(&|r| r.no_count as f64)),
        report,
    }
}

/// Ground truth plus the pool/probe partition shared by every seed.
struct Prepared {
    dataset_id: String,
    pool: Dataset,
    probe: Vec<(String, Class)>,
    texts: std::collections::HashMap<String, String>,
}

impl Prepared {
    fn new(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Self> {
        let truth = |d: &Document| {
            d.ground_truth
                .get(&cfg.task_name)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("document {} has no ground truth for {}", d.doc_id, cfg.task_name)))
        };
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let probe_n = match cfg.eval_scope {
            EvalScope::Probe => cfg.probe_size.min(dataset.len() / 2),
            EvalScope::Validation => 0,
        };
        order.shuffle(&mut seeding::rng(0, &[stream::PROBE]));
        let (probe_idx, pool_idx) = order.split_at(probe_n);
        let mut pool_idx = pool_idx.to_vec();
        pool_idx.sort_unstable();
        let probe = probe_idx
            .iter()
            .map(|&i| {
                let d = &dataset.documents[i];
                Ok((d.doc_id.clone(), truth(d)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let pool_docs: Vec<Document> = pool_idx.iter().map(|&i| dataset.documents[i].clone()).collect();
        let texts = probe_idx
            .iter()
            .map(|&i| (dataset.documents[i].doc_id.clone(), dataset.documents[i].text.clone()))
            .collect();
        Ok(Self {
            dataset_id: dataset.dataset_id.clone(),
            pool: Dataset::new(format!("{}-pool", dataset.dataset_id), dataset.source_uri.clone(), pool_docs)?,
            probe,
            texts,
        })
    }

    fn truth(&self, task: &str, doc_id: &str) -> Result<Class> {
        self.pool
            .get(doc_id)
            .and_then(|d| d.ground_truth.get(task).copied())
            .ok_or_else(|| Error::Invalid(format!("document {doc_id} has no ground truth for {task}")))
    }

    fn workspace(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Workspace> {
        let mut ws = Workspace::for_simulation(cfg.engine_config(seed))?;
        ws.add_dataset(self.pool.clone())?;
        ws.create_task(&cfg.task_name, Some(&self.pool.dataset_id), None)?;
        Ok(ws)
    }

    /// Trains a last cycle over every label if needed, then scores the eval set.
    fn finish(&self, cfg: &ExperimentConfig, ws: &mut Workspace, seed: u64, mut run: SeedRun) -> Result<SeedRun> {
        let task = cfg.task_name.as_str();
        let labels = ws.corpus().labels(task);
        let engine = ws.engine(task)?;
        let stale = engine.state().cycle_index == 0 || engine.state().new_labels_since_split > 0;
        if stale && labels.len() >= engine.config().min_labels_before_training {
            ws.run_cycle(task)?;
        }
        let engine = ws.engine(task)?;
        let (yes, no) = ws.corpus().class_counts(task);
        run.yes_count = yes;
        run.no_count = no;
        run.cycles = engine.state().cycle_index;
        run.convergence = metrics::convergence_series(&engine.state().metrics_history);
        let Some(model) = engine.model() else {
            run.auc = 0.5;
            return Ok(run);
        };
        match cfg.eval_scope {
            EvalScope::Probe => {
                let vocab = engine.vocabulary();
                let scores = self
                    .probe
                    .iter()
                    .map(|(id, _)| Ok(model.predict_proba(&vocab.transform(&self.texts[id]))?.p_yes))
                    .collect::<Result<Vec<f64>>>()?;
                let truth: Vec<Class> = self.probe.iter().map(|(_, c)| *c).collect();
                run.auc = auc_roc(&scores, &truth)?.value;
                run.report = Some(metrics::evaluate(
                    &scores,
                    &truth,
                    yes,
                    no,
                    seeding::derive_seed(seed, &[stream::METRICS]),
                )?);
            }
            EvalScope::Validation => {
                let last = engine.state().metrics_history.last();
                run.auc = last.map_or(0.5, |m| m.auc.value);
                run.report = last.and_then(|m| m.report.clone());
            }
        }
        Ok(run)
    }

    fn prelabels(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<PreLabel>> {
        if cfg.prelabeled == 0 {
            return Ok(Vec::new());
        }
        let mut rng = seeding::rng(seed, &[stream::ORACLE]);
        let wanted: BTreeSet<String> = cfg.keywords.iter().flat_map(|t| tokenize(t, true)).collect();
        let hits: Vec<&str> = self
            .pool
            .documents
            .iter()
            .filter(|d| tokenize(&d.text, true).iter().any(|t| wanted.contains(t)))
            .map(|d| d.doc_id.as_str())
            .collect();
        let from_keywords = (cfg.prelabeled / 2).min(hits.len());
        let mut chosen: Vec<&str> = hits.choose_multiple(&mut rng, from_keywords).copied().collect();
        let taken: BTreeSet<&str> = chosen.iter().copied().collect();
        let rest: Vec<&str> = self
            .pool
            .documents
            .iter()
            .map(|d| d.doc_id.as_str())
            .filter(|id| !taken.contains(id))
            .collect();
        let need = cfg.prelabeled - from_keywords;
        chosen.extend(rest.choose_multiple(&mut rng, need.min(rest.len())).copied());
        chosen
            .into_iter()
            .map(|id| {
                Ok(PreLabel {
                    doc_id: id.to_string(),
                    cls: self.truth(&cfg.task_name, id)?,
                })
            })
            .collect()
    }

    fn active_run(&self, cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
        let task = cfg.task_name.as_str();
        let mut ws = self.workspace(cfg, seed)?;
        let prelabels = self.prelabels(cfg, seed)?;
        let prelabeled = prelabels.len();
        if !prelabels.is_empty() {
            let (_, job) = ws.bootstrap(
                task,
                &Bootstrap::PreLabeled {
                    labels: prelabels,
                    annotator: "keyword-search".into(),
                },
            )?;
            if let Some(job) = job {
                ws.finish_cycle(job.run()?)?;
            }
        }
        if cfg.bootstrap_mode == BootstrapMode::Keyword && ws.engine(task)?.state().cycle_index == 0 {
            let terms = cfg.keywords.clone();
            ws.bootstrap(task, &Bootstrap::Keyword { terms })?;
        }
        let mut positives_found = 0;
        let mut oracle_labels = 0;
        while oracle_labels < cfg.oracle_budget() {
            let Next::Doc(served) = ws.next_to_label_sync(task)? else {
                break;
            };
            let cls = self.truth(task, &served.doc_id)?;
            ws.submit_label_sync(task, &served.doc_id, cls, "oracle", Origin::Oracle)?;
            oracle_labels += 1;
            positives_found += usize::from(cls.is_yes());
        }
        let run = SeedRun {
            seed,
            oracle_labels,
            prelabeled,
            positives_found,
            yes_count: 0,
            no_count: 0,
            cycles: 0,
            auc: 0.5,
            report: None,
            convergence: Vec::new(),
        };
        self.finish(cfg, &mut ws, seed, run)
    }

    fn random_run(&self, cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
        let task = cfg.task_name.as_str();
        let budget = cfg.baseline_budget.unwrap_or(cfg.label_budget);
        let mut ws = self.workspace(cfg, seed)?;
        let ids: Vec<&str> = self.pool.documents.iter().map(|d| d.doc_id.as_str()).collect();
        let sample = ids.choose_multiple(&mut seeding::rng(seed, &[stream::ORACLE, 1]), budget.min(ids.len()));
        let mut positives_found = 0;
        let mut oracle_labels = 0;
        for id in sample {
            let cls = self.truth(task, id)?;
            let (_, job) = ws.submit_label(task, id, cls, "oracle", Origin::Oracle)?;
            if job.is_some() {
                // trained once at the end
                ws.abort_cycle(task);
            }
            oracle_labels += 1;
            positives_found += usize::from(cls.is_yes());
        }
        let run = SeedRun {
            seed,
            oracle_labels,
            prelabeled: 0,
            positives_found,
            yes_count: 0,
            no_count: 0,
            cycles: 0,
            auc: 0.5,
            report: None,
            convergence: Vec::new(),
        };
        self.finish(cfg, &mut ws, seed, run)
    }
}

fn run_seeds(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    mode: RunMode,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let prep = Prepared::new(cfg, dataset)?;
    let runs = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let prep = &prep;
                s.spawn(move || match mode {
                    RunMode::Active => prep.active_run(cfg, seed),
                    RunMode::Random => prep.random_run(cfg, seed),
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(ExperimentReport {
        mode,
        config: cfg.clone(),
        dataset_id: prep.dataset_id.clone(),
        pool_size: prep.pool.len(),
        eval_size: prep.probe.len(),
        aggregate: aggregate(&runs),
        runs,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentReport> {
    run_seeds(cfg, dataset, RunMode::Active)
}

pub fn run_random_baseline(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentReport> {
    run_seeds(cfg, dataset, RunMode::Random)
}

/// Runs the configured experiment and, when asked, the random baseline.
pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulationOutput> {
    let dataset = cfg.materialize()?;
    let active = run_experiment(cfg, &dataset)?;
    let baseline = if cfg.baseline {
        Some(run_random_baseline(cfg, &dataset)?)
    } else {
        None
    };
    Ok(SimulationOutput { active, baseline })
}

fn fmt_est(e: Estimate) -> String {
    format!("{:.2} ± {:.2}", e.mean, e.half_width)
}

/// Plain-text results table: one row per report.
pub fn render_table(reports: &[&ExperimentReport]) -> String {
    let mut out = String::new();
    let header = ["Label", "Mode", "Accuracy", "Precision", "Recall", "AUC-ROC", "Yes/No", "Obs."];
    let rows: Vec<[String; 8]> = reports
        .iter()
        .map(|r| {
            let c = &r.config;
            let (acc, prec, rec, auc) = match &r.aggregate.report {
                Some(m) => (fmt_est(m.accuracy), fmt_est(m.precision), fmt_est(m.recall), fmt_est(m.auc_roc)),
                None => ("--".into(), "--".into(), "--".into(), "--".into()),
            };
            let obs = match r.mode {
                RunMode::Active => format!(
                    "budget {} hf {:.1} pre {} pos {:.0}",
                    c.label_budget, c.high_fraction, c.prelabeled, r.aggregate.positives_found_median
                ),
                RunMode::Random => format!(
                    "budget {} pos {:.0}",
                    c.baseline_budget.unwrap_or(c.label_budget),
                    r.aggregate.positives_found_median
                ),
            };
            [
                c.task_name.clone(),
                match r.mode {
                    RunMode::Active => "active".into(),
                    RunMode::Random => "random".into(),
                },
                acc,
                prec,
                rec,
                auc,
                format!("{:.0}/{:.0}", r.aggregate.yes_count_mean, r.aggregate.no_count_mean),
                obs,
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].chars().count())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", padded.join(" | ").trim_end());
    };
    line(header.to_vec(), &mut out);
    let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    for r in &rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Model, TrainConfig};
    use crate::embed::{SparseVector, Vocabulary};

    fn oracle_auc(spec: &CorpusSpec) -> f64 {
        let ds = make_synthetic_corpus(spec).unwrap();
        let vocab = Vocabulary::fit(ds.documents.iter().map(|d| d.text.as_str()), Default::default()).unwrap();
        let xs: Vec<(SparseVector, Class)> = ds
            .documents
            .iter()
            .map(|d| (vocab.transform(&d.text), d.ground_truth[&spec.task_name]))
            .collect();
        let (train, test) = xs.split_at(xs.len() / 2);
        let ex: Vec<(&SparseVector, Class)> = train.iter().map(|(x, c)| (x, *c)).collect();
        let model = Model::train(&ex, vocab.len(), &TrainConfig::default(), 1).unwrap();
        let scores: Vec<f64> = test.iter().map(|(x, _)| model.predict_proba(x).unwrap().p_yes).collect();
        let truth: Vec<Class> = test.iter().map(|(_, c)| *c).collect();
        auc_roc(&scores, &truth).unwrap().value
    }

    #[test]
    fn corpus_prevalence_is_exact() {
        let spec = CorpusSpec {
            n_docs: 1000,
            prevalence: 0.03,
            ..CorpusSpec::default()
        };
        let ds = make_synthetic_corpus(&spec).unwrap();
        let pos = ds.documents.iter().filter(|d| d.ground_truth["target"].is_yes()).count();
        assert_eq!(pos, 30);
        assert_eq!(make_synthetic_corpus(&spec).unwrap(), ds);
    }

    #[test]
    fn strong_signal_is_separable() {
        let spec = CorpusSpec {
            n_docs: 2000,
            prevalence: 0.5,
            ..CorpusSpec::default()
        };
        assert!(oracle_auc(&spec) >= 0.95);
    }

    #[test]
    fn zero_signal_is_chance() {
        let spec = CorpusSpec {
            n_docs: 2000,
            prevalence: 0.5,
            signal: 0.0,
            ..CorpusSpec::default()
        };
        let auc = oracle_auc(&spec);
        assert!((auc - 0.5).abs() <= 0.05, "{auc}");
    }

    #[test]
    fn random_baseline_positive_rate() {
        // binomial expectation: 200 draws at 1% prevalence average 2 positives
        let spec = CorpusSpec {
            n_docs: 5000,
            prevalence: 0.01,
            ..CorpusSpec::default()
        };
        let ds = make_synthetic_corpus(&spec).unwrap();
        let cfg = ExperimentConfig {
            label_budget: 200,
            seeds: (1..=20).collect(),
            engine: EngineConfig {
                training: TrainConfig {
                    max_epochs: 20,
                    ..TrainConfig::default()
                },
                ..EngineConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let r = run_random_baseline(&cfg, &ds).unwrap();
        let pool_rate = {
            let prep = Prepared::new(&cfg, &ds).unwrap();
            prep.pool.documents.iter().filter(|d| d.ground_truth["target"].is_yes()).count() as f64
                / prep.pool.len() as f64
        };
        let expected = 200.0 * pool_rate;
        let sd = (200.0 * pool_rate * (1.0 - pool_rate) / 20.0).sqrt();
        assert!((r.aggregate.positives_found_mean - expected).abs() < 4.0 * sd + 0.5);
        let again = run_random_baseline(&cfg, &ds).unwrap();
        assert_eq!(again.runs, r.runs);
    }

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            label_budget: 40,
            seeds: vec![1, 2, 3],
            probe_size: 200,
            corpus: CorpusSpec {
                n_docs: 800,
                ..CorpusSpec::default()
            },
            engine: EngineConfig {
                selection: crate::select::SelectionConfig {
                    k_top: 100,
                    ..Default::default()
                },
                ..EngineConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn budget_is_exact() {
        let mut cfg = small_cfg();
        cfg.prelabeled = 10;
        cfg.keywords = cfg.corpus.keywords(3);
        let out = simulate(&cfg).unwrap();
        assert_eq!(out.active.runs.len(), 3);
        for r in &out.active.runs {
            assert_eq!(r.oracle_labels, 40);
            assert_eq!(r.prelabeled, 10);
            assert_eq!(r.yes_count + r.no_count, 50);
            assert!(r.cycles >= 2);
        }
        cfg.prelabeled_counts_toward_budget = true;
        let out = simulate(&cfg).unwrap();
        assert!(out.active.runs.iter().all(|r| r.oracle_labels == 30));
        let aucs: Vec<f64> = out.active.runs.iter().map(|r| r.auc).collect();
        assert_eq!(out.active.aggregate.auc_median, median(&aucs));
    }

    #[test]
    fn experiments_are_reproducible() {
        let cfg = small_cfg();
        let ds = cfg.materialize().unwrap();
        let a = run_experiment(&cfg, &ds).unwrap();
        let b = run_experiment(&cfg, &ds).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_truth_aborts() {
        let ds = Dataset::new(
            "d",
            "mem",
            (0..40).map(|i| Document::new(format!("x{i}"), format!("aa bb cc{i}"))).collect(),
        )
        .unwrap();
        let err = run_experiment(&small_cfg(), &ds).unwrap_err();
        assert!(err.to_string().contains("no ground truth"), "{err}");
    }

    #[test]
    fn config_from_toml_and_table() {
        let cfg = ExperimentConfig::from_toml(
            "label_budget = 30\nhigh_fraction = 0.7\nseeds = [4]\nbaseline = true\nprobe_size = 100\n[corpus]\nn_docs = 400\n[engine.selection]\nk_top = 50\n",
        )
        .unwrap();
        assert_eq!(cfg.engine.selection.k_top, 50);
        assert_eq!(cfg.corpus.n_docs, 400);
        let out = simulate(&cfg).unwrap();
        let table = render_table(&[&out.active, out.baseline.as_ref().unwrap()]);
        assert!(table.starts_with("Label"));
        assert_eq!(table.lines().count(), 4);
        assert!(ExperimentConfig::from_toml("label_budget = 10\nprelabeled = 10\nprelabeled_counts_toward_budget = true").is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
