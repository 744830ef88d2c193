//! Active-learning cycle orchestration for one labeling task.
//!
//! A cycle splits the current annotations into train and validation parts,
//! trains the classifier, calibrates per-label conformal thresholds on the
//! validation part, scores every unlabeled document and selects the next
//! labeling batch. Cycles run in three steps ([`Engine::begin_cycle`],
//! [`CycleJob::run`], [`Engine::finish_cycle`]) so callers can run the heavy
//! middle step off the writer thread while labels keep arriving.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{Model, ProbabilisticClassifier, TrainConfig};
use crate::conformal::{calibrate, CalibrationSet, PredictionRecord, Thresholds};
use crate::corpus::{Class, Dataset};
use crate::embed::{tokenize, SparseVector, TfidfParams, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::{self, auc_roc, CycleMetrics};
use crate::seeding::{self, stream};
use crate::select::{refill, select_batch, Pool, SelectionConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetrainPolicy {
    /// Retrain once every document of the current batch is labeled.
    #[default]
    OnBatchConsumed,
    EveryNLabels { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub alpha: f64,
    pub validation_fraction: f64,
    pub min_labels_before_training: usize,
    pub selection: SelectionConfig,
    pub retrain_policy: RetrainPolicy,
    pub seed: u64,
    pub tfidf: TfidfParams,
    pub training: TrainConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            validation_fraction: 0.2,
            min_labels_before_training: 10,
            selection: SelectionConfig::default(),
            retrain_policy: RetrainPolicy::default(),
            seed: 0,
            tfidf: TfidfParams::default(),
            training: TrainConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Invalid("alpha must lie in (0, 1)".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Invalid("validation_fraction must lie in (0, 1)".into()));
        }
        if let RetrainPolicy::EveryNLabels { n: 0 } = self.retrain_policy {
            return Err(Error::Invalid("every_n_labels needs n > 0".into()));
        }
        self.selection.validate()?;
        self.training.validate()
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
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum QueueBootstrap {
    Random,
    Keyword { terms: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    pub queue_len: usize,
    pub keyword_matches: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServeSource {
    Queue,
    Refill,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Serve {
    Doc { doc_id: String, source: ServeSource },
    /// The queue ran dry, nothing is training and a cycle may run now.
    CycleDue,
    /// Every document of the task is labeled.
    Complete,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleState {
    pub cycle_index: u64,
    pub model: Option<Model>,
    pub thresholds: Option<Thresholds>,
    pub queue: VecDeque<String>,
    pub records: Vec<PredictionRecord>,
    pub pool: Pool,
    /// The batch selected by the last cycle.
    pub batch: Vec<String>,
    /// Ids handed out since the last cycle finished.
    pub served: BTreeSet<String>,
    pub draws: u64,
    pub new_labels_since_split: usize,
    pub training_in_progress: bool,
    pub metrics_history: Vec<CycleMetrics>,
}

/// Immutable inputs of one cycle, safe to move to a worker thread.
#[derive(Debug, Clone)]
pub struct CycleJob {
    pub task: String,
    pub cycle_index: u64,
    config: EngineConfig,
    model_version: u64,
    dim: usize,
    doc_ids: Arc<Vec<String>>,
    vectors: Arc<Vec<SparseVector>>,
    labeled: Vec<(usize, Class)>,
    unlabeled: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleOutcome {
    pub task: String,
    pub cycle_index: u64,
    pub model: Model,
    pub thresholds: Thresholds,
    pub records: Vec<PredictionRecord>,
    pub pool: Pool,
    pub queue: Vec<String>,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    pub metrics: CycleMetrics,
}

impl CycleJob {
    pub fn labeled_count(&self) -> usize {
        self.labeled.len()
    }

    pub fn run(self) -> Result<CycleOutcome> {
        let cfg = &self.config;
        let mut order = self.labeled.clone();
        order.shuffle(&mut seeding::rng(cfg.seed, &[stream::SPLIT, self.cycle_index]));
        let n = order.len();
        let n_val = ((cfg.validation_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
        let (validation, train) = order.split_at(n_val);

        let train_examples: Vec<(&SparseVector, Class)> =
            train.iter().map(|&(i, c)| (&self.vectors[i], c)).collect();
        let model = Model::train(&train_examples, self.dim, &cfg.training, self.model_version)?;

        let val_probs = validation
            .iter()
            .map(|&(i, c)| Ok((model.predict_proba(&self.vectors[i])?, c)))
            .collect::<Result<Vec<_>>>()?;
        let thresholds = calibrate(&CalibrationSet::from_predictions(val_probs.iter().copied()), cfg.alpha)?;

        let records = self
            .unlabeled
            .iter()
            .map(|&i| {
                let p = model.predict_proba(&self.vectors[i])?;
                Ok(PredictionRecord::new(self.doc_ids[i].clone(), p, &thresholds))
            })
            .collect::<Result<Vec<_>>>()?;

        let positions: HashMap<&str, usize> = self
            .unlabeled
            .iter()
            .map(|&i| (self.doc_ids[i].as_str(), i))
            .collect();
        let mut sel_cfg = cfg.selection;
        sel_cfg.seed = seeding::derive_seed(cfg.seed, &[stream::SELECT, self.cycle_index]);
        let selection = select_batch(
            &records,
            |id| positions.get(id).map(|&i| model.embedding(&self.vectors[i])),
            &sel_cfg,
        )?;

        let val_scores: Vec<f64> = val_probs.iter().map(|(p, _)| p.p_yes).collect();
        let val_truth: Vec<Class> = val_probs.iter().map(|(_, c)| *c).collect();
        let yes = self.labeled.iter().filter(|(_, c)| c.is_yes()).count();
        let report = if val_truth.is_empty() {
            None
        } else {
            Some(metrics::evaluate(
                &val_scores,
                &val_truth,
                yes,
                n - yes,
                seeding::derive_seed(cfg.seed, &[stream::METRICS, self.cycle_index]),
            )?)
        };
        let auc = if val_truth.is_empty() {
            metrics::Auc {
                value: 0.5,
                degenerate: true,
            }
        } else {
            auc_roc(&val_scores, &val_truth)?
        };

        let metrics = CycleMetrics {
            cycle_index: self.cycle_index,
            labels_used: n,
            train_size: train.len(),
            validation_size: validation.len(),
            model_version: model.version,
            degenerate_model: model.is_degenerate(),
            thresholds,
            auc,
            report,
        };
        let ids = |part: &[(usize, Class)]| part.iter().map(|&(i, _)| self.doc_ids[i].clone()).collect();
        Ok(CycleOutcome {
            task: self.task.clone(),
            cycle_index: self.cycle_index,
            train_ids: ids(train),
            validation_ids: ids(validation),
            model,
            thresholds,
            records,
            pool: selection.pool,
            queue: selection.queue,
            metrics,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Engine {
    task: String,
    config: EngineConfig,
    vocab: Arc<Vocabulary>,
    doc_ids: Arc<Vec<String>>,
    positions: HashMap<String, usize>,
    vectors: Arc<Vec<SparseVector>>,
    state: CycleState,
}

/// Serializable form of an [`Engine`]; vectors are recomputed from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSnapshot {
    pub task: String,
    pub config: EngineConfig,
    pub vocab: Vocabulary,
    pub state: CycleState,
}

impl Engine {
    /// Fits the vocabulary on the task's dataset and queues it in random order.
    pub fn new(task: &str, dataset: &Dataset, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::Invalid("dataset has no documents".into()));
        }
        let vocab = Vocabulary::fit(dataset.documents.iter().map(|d| d.text.as_str()), config.tfidf)?;
        let mut engine = Self::assemble(task, dataset, config, vocab, CycleState::default());
        engine.bootstrap(dataset, &BTreeMap::new(), &QueueBootstrap::Random)?;
        Ok(engine)
    }

    fn assemble(
        task: &str,
        dataset: &Dataset,
        config: EngineConfig,
        vocab: Vocabulary,
        state: CycleState,
    ) -> Self {
        let doc_ids: Vec<String> = dataset.documents.iter().map(|d| d.doc_id.clone()).collect();
        let vectors = dataset.documents.iter().map(|d| vocab.transform(&d.text)).collect();
        let positions = doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Self {
            task: task.to_string(),
            config,
            vocab: Arc::new(vocab),
            doc_ids: Arc::new(doc_ids),
            positions,
            vectors: Arc::new(vectors),
            state,
        }
    }

    pub fn snapshot(&self) -> EngineSnapshot {
        EngineSnapshot {
            task: self.task.clone(),
            config: self.config.clone(),
            vocab: (*self.vocab).clone(),
            state: self.state.clone(),
        }
    }

    /// Restores an engine. A cycle that was running when the snapshot was
    /// taken is dropped and becomes due again.
    pub fn restore(snap: EngineSnapshot, dataset: &Dataset) -> Self {
        let mut state = snap.state;
        if state.training_in_progress {
            state.training_in_progress = false;
            state.new_labels_since_split = state.new_labels_since_split.max(1);
        }
        Self::assemble(&snap.task, dataset, snap.config, snap.vocab, state)
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn state(&self) -> &CycleState {
        &self.state
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vector(&self, doc_id: &str) -> Option<&SparseVector> {
        self.positions.get(doc_id).map(|&i| &self.vectors[i])
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn model(&self) -> Option<&Model> {
        self.state.model.as_ref()
    }

    pub fn training_in_progress(&self) -> bool {
        self.state.training_in_progress
    }

    pub fn queue_depth(&self) -> usize {
        self.state.queue.len()
    }

    /// Replaces the queue: random order, or keyword matches first.
    pub fn bootstrap(
        &mut self,
        dataset: &Dataset,
        labels: &BTreeMap<String, Class>,
        mode: &QueueBootstrap,
    ) -> Result<BootstrapOutcome> {
        let mut rng = seeding::rng(self.config.seed, &[stream::BOOTSTRAP, self.state.cycle_index]);
        let unlabeled: Vec<&str> = self
            .doc_ids
            .iter()
            .map(String::as_str)
            .filter(|id| !labels.contains_key(*id))
            .collect();
        let (mut head, mut rest, warning) = match mode {
            QueueBootstrap::Random => (Vec::new(), unlabeled, None),
            QueueBootstrap::Keyword { terms } => {
                let wanted: BTreeSet<String> = terms
                    .iter()
                    .flat_map(|t| tokenize(t, true))
                    .collect();
                let (hits, misses): (Vec<&str>, Vec<&str>) = unlabeled.into_iter().partition(|id| {
                    let doc = dataset.get(id).expect("engine ids come from the dataset");
                    tokenize(&doc.text, true).iter().any(|t| wanted.contains(t))
                });
                if hits.is_empty() {
                    tracing::warn!(task = %self.task, ?terms, "keyword bootstrap matched nothing; using random order");
                    (
                        Vec::new(),
                        misses,
                        Some(format!("no document matched {terms:?}; fell back to random order")),
                    )
                } else {
                    (hits, misses, None)
                }
            }
        };
        let keyword_matches = head.len();
        rest.shuffle(&mut rng);
        head.append(&mut rest);
        self.state.queue = head.into_iter().map(str::to_string).collect();
        self.state.served.clear();
        Ok(BootstrapOutcome {
            queue_len: self.state.queue.len(),
            keyword_matches,
            warning,
        })
    }

    fn cycle_due(&self, labels: &BTreeMap<String, Class>) -> bool {
        !self.state.training_in_progress
            && labels.len() >= self.config.min_labels_before_training
            && (self.state.cycle_index == 0 || self.state.new_labels_since_split > 0)
    }

    /// Records that a label arrived; returns whether the retrain policy fires.
    pub fn on_label(&mut self, labels: &BTreeMap<String, Class>, was_new: bool) -> bool {
        if was_new {
            self.state.new_labels_since_split += 1;
        }
        if !self.cycle_due(labels) {
            return false;
        }
        if self.state.cycle_index == 0 {
            return true;
        }
        match self.config.retrain_policy {
            RetrainPolicy::OnBatchConsumed => {
                self.state.batch.iter().all(|d| labels.contains_key(d))
            }
            RetrainPolicy::EveryNLabels { n } => self.state.new_labels_since_split >= n,
        }
    }

    pub fn next_to_label(&mut self, labels: &BTreeMap<String, Class>) -> Serve {
        if labels.len() >= self.doc_ids.len() {
            return Serve::Complete;
        }
        while let Some(id) = self.state.queue.pop_front() {
            if !labels.contains_key(&id) {
                self.state.served.insert(id.clone());
                return Serve::Doc {
                    doc_id: id,
                    source: ServeSource::Queue,
                };
            }
        }
        if self.cycle_due(labels) {
            return Serve::CycleDue;
        }
        let draw = self.state.draws;
        self.state.draws += 1;
        if !self.state.pool.is_empty() {
            let mut exclude = self.state.served.clone();
            exclude.extend(
                self.state
                    .pool
                    .ids()
                    .filter(|id| labels.contains_key(*id))
                    .map(str::to_string),
            );
            let seed = seeding::derive_seed(self.config.seed, &[self.state.cycle_index, draw]);
            if let Some(id) = refill(&self.state.pool, &exclude, 1, seed).ids.pop() {
                self.state.served.insert(id.clone());
                return Serve::Doc {
                    doc_id: id,
                    source: ServeSource::Refill,
                };
            }
        }
        let unlabeled: Vec<&String> = self
            .doc_ids
            .iter()
            .filter(|id| !labels.contains_key(*id) && !self.state.served.contains(*id))
            .collect();
        let candidates: Vec<&String> = if unlabeled.is_empty() {
            self.doc_ids.iter().filter(|id| !labels.contains_key(*id)).collect()
        } else {
            unlabeled
        };
        let mut rng = seeding::rng(
            self.config.seed,
            &[stream::FALLBACK, self.state.cycle_index, draw],
        );
        let id = candidates[rng.random_range(0..candidates.len())].clone();
        self.state.served.insert(id.clone());
        Serve::Doc {
            doc_id: id,
            source: ServeSource::Fallback,
        }
    }

    /// Snapshots the labels into a job and marks training as running.
    pub fn begin_cycle(&mut self, labels: &BTreeMap<String, Class>) -> Result<CycleJob> {
        if self.state.training_in_progress {
            return Err(Error::Busy(self.task.clone()));
        }
        let min = self.config.min_labels_before_training;
        if labels.len() < min {
            return Err(Error::Conflict(format!(
                "task {} has {} labels; training starts at {min}",
                self.task,
                labels.len()
            )));
        }
        let mut labeled = Vec::with_capacity(labels.len());
        for (id, &cls) in labels {
            let &i = self
                .positions
                .get(id)
                .ok_or_else(|| Error::not_found("document", id.as_str()))?;
            labeled.push((i, cls));
        }
        let unlabeled = (0..self.doc_ids.len())
            .filter(|&i| !labels.contains_key(&self.doc_ids[i]))
            .collect();
        self.state.training_in_progress = true;
        self.state.new_labels_since_split = 0;
        Ok(CycleJob {
            task: self.task.clone(),
            cycle_index: self.state.cycle_index + 1,
            config: self.config.clone(),
            model_version: self.state.model.as_ref().map_or(1, |m| m.version + 1),
            dim: self.vocab.len(),
            doc_ids: Arc::clone(&self.doc_ids),
            vectors: Arc::clone(&self.vectors),
            labeled,
            unlabeled,
        })
    }

    pub fn finish_cycle(&mut self, outcome: CycleOutcome) -> Result<()> {
        if outcome.cycle_index != self.state.cycle_index + 1 {
            self.state.training_in_progress = false;
            return Err(Error::Conflict(format!(
                "stale cycle {} for task {} at cycle {}",
                outcome.cycle_index, self.task, self.state.cycle_index
            )));
        }
        let s = &mut self.state;
        s.cycle_index = outcome.cycle_index;
        s.model = Some(outcome.model);
        s.thresholds = Some(outcome.thresholds);
        s.records = outcome.records;
        s.pool = outcome.pool;
        s.batch = outcome.queue.clone();
        s.queue = outcome.queue.into();
        s.served.clear();
        s.metrics_history.push(outcome.metrics);
        s.training_in_progress = false;
        Ok(())
    }

    /// Clears the training flag after a failed job.
    pub fn abort_cycle(&mut self) {
        self.state.training_in_progress = false;
    }

    pub fn run_cycle(&mut self, labels: &BTreeMap<String, Class>) -> Result<()> {
        let job = self.begin_cycle(labels)?;
        match job.run() {
            Ok(outcome) => self.finish_cycle(outcome),
            Err(e) => {
                self.abort_cycle();
                Err(e)
            }
        }
    }

    /// Current model's prediction for any document of the task.
    pub fn predict(&self, doc_id: &str) -> Result<Option<PredictionRecord>> {
        let (Some(model), Some(th)) = (&self.state.model, &self.state.thresholds) else {
            return Ok(None);
        };
        let x = self
            .vector(doc_id)
            .ok_or_else(|| Error::not_found("document", doc_id))?;
        Ok(Some(PredictionRecord::new(doc_id, model.predict_proba(x)?, th)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn dataset(n: usize) -> Dataset {
        let docs = (0..n)
            .map(|i| {
                let text = if i.is_multiple_of(3) {
                    format!("broken screen arrived damaged item{i} box")
                } else {
                    format!("lovely product works great item{i} box")
                };
                Document::new(format!("d{i:03}"), text)
            })
            .collect();
        Dataset::new("ds", "mem", docs).unwrap()
    }

    fn small_config() -> EngineConfig {
        EngineConfig {
            selection: SelectionConfig {
                k_top: 20,
                k_cluster: 4,
                high_fraction: 1.0,
                seed: 0,
            },
            seed: 7,
            ..EngineConfig::default()
        }
    }

    fn truth(id: &str) -> Class {
        let i: usize = id[1..].parse().unwrap();
        if i.is_multiple_of(3) {
            Class::Yes
        } else {
            Class::No
        }
    }

    #[test]
    fn config_defaults_and_toml() {
        let cfg = EngineConfig::default();
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.validation_fraction, 0.2);
        assert_eq!(cfg.min_labels_before_training, 10);
        assert_eq!(cfg.selection.k_top, 500);
        assert_eq!(cfg.selection.k_cluster, 6);
        assert_eq!(cfg.retrain_policy, RetrainPolicy::OnBatchConsumed);

        let cfg = EngineConfig::from_toml(
            "alpha = 0.05\nseed = 3\n[selection]\nhigh_fraction = 0.7\n[retrain_policy]\nkind = \"every_n_labels\"\nn = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.alpha, 0.05);
        assert_eq!(cfg.selection.high_fraction, 0.7);
        assert_eq!(cfg.selection.k_top, 500);
        assert_eq!(cfg.retrain_policy, RetrainPolicy::EveryNLabels { n: 4 });
        assert!(EngineConfig::from_toml("alpha = 1.5").is_err());
        assert!(EngineConfig::from_toml("validation_fraction = 0.0").is_err());
    }

    #[test]
    fn random_bootstrap_is_seeded() {
        let ds = dataset(30);
        let a = Engine::new("t", &ds, small_config()).unwrap();
        let b = Engine::new("t", &ds, small_config()).unwrap();
        assert_eq!(a.state().queue, b.state().queue);
        assert_eq!(a.queue_depth(), 30);
        let mut other = small_config();
        other.seed = 8;
        let c = Engine::new("t", &ds, other).unwrap();
        assert_ne!(a.state().queue, c.state().queue);
    }

    #[test]
    fn keyword_bootstrap_puts_matches_first() {
        let docs = vec![
            Document::new("a", "works fine"),
            Document::new("b", "it arrived Broken!"),
            Document::new("c", "fine fine"),
            Document::new("d", "broken and brokenness"),
            Document::new("e", "unbroken seal, broken box"),
        ];
        let ds = Dataset::new("ds", "mem", docs).unwrap();
        let mut e = Engine::new("t", &ds, small_config()).unwrap();
        let out = e
            .bootstrap(&ds, &BTreeMap::new(), &QueueBootstrap::Keyword { terms: vec!["broken".into()] })
            .unwrap();
        assert_eq!(out.keyword_matches, 3);
        let head: Vec<_> = e.state().queue.iter().take(3).cloned().collect();
        assert_eq!(head, ["b", "d", "e"]);

        let out = e
            .bootstrap(&ds, &BTreeMap::new(), &QueueBootstrap::Keyword { terms: vec!["zebra".into()] })
            .unwrap();
        assert!(out.warning.is_some());
        assert_eq!(out.queue_len, 5);
    }

    #[test]
    fn cycle_requires_minimum_labels() {
        let ds = dataset(30);
        let mut e = Engine::new("t", &ds, small_config()).unwrap();
        let mut labels = BTreeMap::new();
        for _ in 0..9 {
            let Serve::Doc { doc_id, .. } = e.next_to_label(&labels) else { panic!() };
            labels.insert(doc_id.clone(), truth(&doc_id));
            assert!(!e.on_label(&labels, true));
        }
        assert!(matches!(e.begin_cycle(&labels), Err(Error::Conflict(_))));
        let Serve::Doc { doc_id, source } = e.next_to_label(&labels) else { panic!() };
        assert_eq!(source, ServeSource::Queue);
        labels.insert(doc_id.clone(), truth(&doc_id));
        assert!(e.on_label(&labels, true));
        e.run_cycle(&labels).unwrap();
        assert_eq!(e.state().cycle_index, 1);
        assert_eq!(e.queue_depth(), 4);
        assert_eq!(e.state().records.len(), 20);
        let m = &e.state().metrics_history[0];
        assert_eq!(m.labels_used, 10);
        assert_eq!(m.validation_size, 2);
        assert_eq!(m.train_size, 8);
    }

    #[test]
    fn busy_while_training_and_refill() {
        let ds = dataset(40);
        let mut e = Engine::new("t", &ds, small_config()).unwrap();
        let mut labels = BTreeMap::new();
        while labels.len() < 10 {
            let Serve::Doc { doc_id, .. } = e.next_to_label(&labels) else { panic!() };
            labels.insert(doc_id.clone(), truth(&doc_id));
        }
        e.run_cycle(&labels).unwrap();
        // Label the batch, then hold a job open.
        for _ in 0..4 {
            let Serve::Doc { doc_id, source } = e.next_to_label(&labels) else { panic!() };
            assert_eq!(source, ServeSource::Queue);
            labels.insert(doc_id.clone(), truth(&doc_id));
            e.on_label(&labels, true);
        }
        let job = e.begin_cycle(&labels).unwrap();
        assert!(e.training_in_progress());
        assert!(matches!(e.begin_cycle(&labels), Err(Error::Busy(_))));
        let Serve::Doc { doc_id, source } = e.next_to_label(&labels) else { panic!() };
        assert_eq!(source, ServeSource::Refill);
        assert!(e.state().pool.contains(&doc_id));
        labels.insert(doc_id.clone(), truth(&doc_id));
        assert!(!e.on_label(&labels, true));
        e.finish_cycle(job.run().unwrap()).unwrap();
        assert!(!e.training_in_progress());
        assert_eq!(e.state().new_labels_since_split, 1);
    }

    #[test]
    fn completion_when_all_labeled() {
        let ds = dataset(12);
        let mut e = Engine::new("t", &ds, small_config()).unwrap();
        let labels: BTreeMap<String, Class> =
            ds.documents.iter().map(|d| (d.doc_id.clone(), truth(&d.doc_id))).collect();
        assert_eq!(e.next_to_label(&labels), Serve::Complete);
    }

    #[test]
    fn queue_pops_head() {
        let ds = dataset(12);
        let mut e = Engine::new("t", &ds, small_config()).unwrap();
        let before: Vec<_> = e.state().queue.iter().cloned().collect();
        let Serve::Doc { doc_id, .. } = e.next_to_label(&BTreeMap::new()) else { panic!() };
        assert_eq!(doc_id, before[0]);
        assert_eq!(e.state().queue.iter().cloned().collect::<Vec<_>>(), before[1..]);
    }

    #[test]
    fn every_n_labels_policy() {
        let ds = dataset(40);
        let mut cfg = small_config();
        cfg.retrain_policy = RetrainPolicy::EveryNLabels { n: 3 };
        let mut e = Engine::new("t", &ds, cfg).unwrap();
        let mut labels = BTreeMap::new();
        while labels.len() < 10 {
            let Serve::Doc { doc_id, .. } = e.next_to_label(&labels) else { panic!() };
            labels.insert(doc_id.clone(), truth(&doc_id));
            e.on_label(&labels, true);
        }
        e.run_cycle(&labels).unwrap();
        let mut fired = Vec::new();
        for _ in 0..3 {
            let Serve::Doc { doc_id, .. } = e.next_to_label(&labels) else { panic!() };
            labels.insert(doc_id.clone(), truth(&doc_id));
            fired.push(e.on_label(&labels, true));
        }
        assert_eq!(fired, [false, false, true]);
    }

    #[test]
    fn snapshot_restores_state() {
        let ds = dataset(30);
        let mut e = Engine::new("t", &ds, small_config()).unwrap();
        let labels: BTreeMap<String, Class> = ds.documents[..12]
            .iter()
            .map(|d| (d.doc_id.clone(), truth(&d.doc_id)))
            .collect();
        e.run_cycle(&labels).unwrap();
        let snap = e.snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        let back: EngineSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back, snap);
        let restored = Engine::restore(back, &ds);
        assert_eq!(restored.state(), e.state());
        assert_eq!(restored.vector("d001"), e.vector("d001"));
    }
}
