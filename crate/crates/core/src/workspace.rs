//! Corpus plus one engine per task: the unit the service and the simulator drive.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    ingest_dataset, Annotation, Class, Corpus, Dataset, IngestOptions, LabelTask, NewAnnotation,
    Origin,
};
use crate::engine::{
    BootstrapOutcome, CycleJob, CycleOutcome, Engine, EngineConfig, EngineSnapshot,
    QueueBootstrap, Serve, ServeSource,
};
use crate::error::{Error, Result};
use crate::metrics::{convergence_series, ConvergencePoint, CycleMetrics};

pub const SNAPSHOT_MAGIC: &str = "CALV1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreLabel {
    pub doc_id: String,
    pub cls: Class,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Bootstrap {
    Random,
    Keyword {
        terms: Vec<String>,
    },
    PreLabeled {
        labels: Vec<PreLabel>,
        #[serde(default = "default_prelabel_annotator")]
        annotator: String,
    },
}

fn default_prelabel_annotator() -> String {
    "bootstrap".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub queue_len: usize,
    pub keyword_matches: usize,
    pub prelabeled: usize,
    pub labels_total: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub doc_id: String,
    pub labels_total: usize,
    pub cycle_index: u64,
    pub training_in_progress: bool,
    /// True when the label replaced an earlier one for the same document.
    pub superseded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_name: String,
    pub dataset_id: String,
    pub created_at: DateTime<Utc>,
    pub doc_count: usize,
    pub labels_total: usize,
    pub yes_count: usize,
    pub no_count: usize,
    pub cycle_index: u64,
    pub training_in_progress: bool,
    pub queue_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub task_name: String,
    pub cycle_index: u64,
    pub latest: Option<CycleMetrics>,
    pub history: Vec<CycleMetrics>,
    pub series: Vec<ConvergencePoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Served {
    pub doc_id: String,
    pub text: String,
    pub cycle_index: u64,
    pub source: ServeSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Next {
    Doc(Served),
    Complete,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    defaults: EngineConfig,
    simulation: bool,
    datasets: Vec<Dataset>,
    tasks: Vec<LabelTask>,
    log: Vec<Annotation>,
    engines: Vec<EngineSnapshot>,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    corpus: Corpus,
    engines: BTreeMap<String, Engine>,
    defaults: EngineConfig,
}

impl Workspace {
    pub fn new(defaults: EngineConfig) -> Result<Self> {
        defaults.validate()?;
        Ok(Self {
            corpus: Corpus::new(),
            engines: BTreeMap::new(),
            defaults,
        })
    }

    /// A workspace whose corpus accepts oracle annotations.
    pub fn for_simulation(defaults: EngineConfig) -> Result<Self> {
        let mut ws = Self::new(defaults)?;
        ws.corpus = Corpus::for_simulation();
        Ok(ws)
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn defaults(&self) -> &EngineConfig {
        &self.defaults
    }

    pub fn engine(&self, task: &str) -> Result<&Engine> {
        self.engines
            .get(task)
            .ok_or_else(|| Error::not_found("task", task))
    }

    fn engine_mut(&mut self, task: &str) -> Result<&mut Engine> {
        self.engines
            .get_mut(task)
            .ok_or_else(|| Error::not_found("task", task))
    }

    pub fn set_journal(&mut self, path: Option<PathBuf>) {
        self.corpus.set_journal(path);
    }

    pub fn add_dataset(&mut self, dataset: Dataset) -> Result<String> {
        let id = dataset.dataset_id.clone();
        self.corpus.add_dataset(dataset)?;
        Ok(id)
    }

    pub fn ingest(&mut self, path: &Path, opts: &IngestOptions) -> Result<String> {
        self.add_dataset(ingest_dataset(path, opts)?)
    }

    /// Creates a task. Without a dataset id the only ingested dataset is used.
    pub fn create_task(
        &mut self,
        task_name: &str,
        dataset_id: Option<&str>,
        config: Option<EngineConfig>,
    ) -> Result<TaskSummary> {
        let dataset_id = match dataset_id {
            Some(id) => id.to_string(),
            None => {
                let ids: Vec<&str> = self.corpus.datasets().map(|d| d.dataset_id.as_str()).collect();
                match ids.as_slice() {
                    [only] => only.to_string(),
                    [] => return Err(Error::Invalid("no dataset ingested yet".into())),
                    _ => return Err(Error::Invalid("several datasets exist; name one with dataset_id".into())),
                }
            }
        };
        let config = config.unwrap_or_else(|| self.defaults.clone());
        let name = task_name.trim().to_string();
        if self.engines.contains_key(&name) {
            return Err(Error::Conflict(format!("task {name:?} already exists")));
        }
        let engine = Engine::new(&name, self.corpus.dataset(&dataset_id)?, config)?;
        self.corpus.create_task(&name, &dataset_id)?;
        self.engines.insert(name.clone(), engine);
        self.summary(&name)
    }

    pub fn delete_task(&mut self, task: &str) -> Result<()> {
        self.corpus.remove_task(task)?;
        self.engines.remove(task);
        Ok(())
    }

    pub fn summary(&self, task: &str) -> Result<TaskSummary> {
        let t = self.corpus.task(task)?;
        let engine = self.engine(task)?;
        let (yes, no) = self.corpus.class_counts(task);
        Ok(TaskSummary {
            task_name: t.task_name.clone(),
            dataset_id: t.dataset_id.clone(),
            created_at: t.created_at,
            doc_count: engine.doc_count(),
            labels_total: yes + no,
            yes_count: yes,
            no_count: no,
            cycle_index: engine.state().cycle_index,
            training_in_progress: engine.training_in_progress(),
            queue_depth: engine.queue_depth(),
        })
    }

    pub fn summaries(&self) -> Vec<TaskSummary> {
        self.corpus
            .tasks()
            .filter_map(|t| self.summary(&t.task_name).ok())
            .collect()
    }

    /// Replaces the task's queue; pre-labels are recorded first.
    pub fn bootstrap(&mut self, task: &str, mode: &Bootstrap) -> Result<(BootstrapReport, Option<CycleJob>)> {
        let dataset = self.corpus.task_dataset(task)?.clone();
        let mut prelabeled = 0;
        let mut fires = false;
        let queue_mode = match mode {
            Bootstrap::Random => QueueBootstrap::Random,
            Bootstrap::Keyword { terms } => QueueBootstrap::Keyword {
                terms: terms.clone(),
            },
            Bootstrap::PreLabeled { labels, annotator } => {
                for l in labels {
                    if !dataset.contains(&l.doc_id) {
                        return Err(Error::not_found("document", l.doc_id.as_str()));
                    }
                }
                for l in labels {
                    let (_, f) = self.record(
                        task,
                        NewAnnotation::new(&l.doc_id, task, l.cls, Origin::PreLabeled, annotator),
                    )?;
                    fires |= f;
                    prelabeled += 1;
                }
                QueueBootstrap::Random
            }
        };
        let labels = self.corpus.labels(task);
        let BootstrapOutcome {
            queue_len,
            keyword_matches,
            warning,
        } = self.engine_mut(task)?.bootstrap(&dataset, &labels, &queue_mode)?;
        let job = if fires { self.try_begin(task)? } else { None };
        Ok((
            BootstrapReport {
                queue_len,
                keyword_matches,
                prelabeled,
                labels_total: labels.len(),
                warning,
            },
            job,
        ))
    }

    fn record(&mut self, task: &str, a: NewAnnotation) -> Result<(Ack, bool)> {
        let was_new = self.corpus.active_label(task, &a.doc_id).is_none();
        let doc_id = self.corpus.record_annotation(a)?.doc_id.clone();
        let labels = self.corpus.labels(task);
        let engine = self.engine_mut(task)?;
        let fires = engine.on_label(&labels, was_new);
        Ok((
            Ack {
                doc_id,
                labels_total: labels.len(),
                cycle_index: engine.state().cycle_index,
                training_in_progress: engine.training_in_progress(),
                superseded: !was_new,
            },
            fires,
        ))
    }

    fn try_begin(&mut self, task: &str) -> Result<Option<CycleJob>> {
        let labels = self.corpus.labels(task);
        let engine = self.engine_mut(task)?;
        if engine.training_in_progress() {
            return Ok(None);
        }
        engine.begin_cycle(&labels).map(Some)
    }

    /// Records a label. When the retrain policy fires, the returned job has
    /// already been started and must be handed back via [`Self::finish_cycle`].
    pub fn submit_label(
        &mut self,
        task: &str,
        doc_id: &str,
        cls: Class,
        annotator: &str,
        origin: Origin,
    ) -> Result<(Ack, Option<CycleJob>)> {
        let (mut ack, fires) = self.record(task, NewAnnotation::new(doc_id, task, cls, origin, annotator))?;
        let job = if fires { self.try_begin(task)? } else { None };
        if job.is_some() {
            ack.training_in_progress = true;
        }
        Ok((ack, job))
    }

    /// Like [`Self::submit_label`] but runs a triggered cycle inline.
    pub fn submit_label_sync(
        &mut self,
        task: &str,
        doc_id: &str,
        cls: Class,
        annotator: &str,
        origin: Origin,
    ) -> Result<Ack> {
        let (mut ack, job) = self.submit_label(task, doc_id, cls, annotator, origin)?;
        if let Some(job) = job {
            self.complete(task, job)?;
            let e = self.engine(task)?;
            ack.cycle_index = e.state().cycle_index;
            ack.training_in_progress = false;
        }
        Ok(ack)
    }

    fn complete(&mut self, task: &str, job: CycleJob) -> Result<()> {
        match job.run() {
            Ok(outcome) => self.finish_cycle(outcome),
            Err(e) => {
                self.abort_cycle(task);
                Err(e)
            }
        }
    }

    fn served(&self, task: &str, serve: Serve) -> Result<Next> {
        Ok(match serve {
            Serve::Doc { doc_id, source } => {
                let text = self
                    .corpus
                    .task_dataset(task)?
                    .get(&doc_id)
                    .map(|d| d.text.clone())
                    .ok_or_else(|| Error::not_found("document", doc_id.as_str()))?;
                Next::Doc(Served {
                    doc_id,
                    text,
                    cycle_index: self.engine(task)?.state().cycle_index,
                    source,
                })
            }
            Serve::Complete => Next::Complete,
            Serve::CycleDue => unreachable!("callers resolve CycleDue before serving"),
        })
    }

    /// Next document to label. An empty queue with a due cycle starts that
    /// cycle (returned as a job) and serves from the previous pool meanwhile.
    pub fn next_to_label(&mut self, task: &str) -> Result<(Next, Option<CycleJob>)> {
        let labels = self.corpus.labels(task);
        let engine = self.engine_mut(task)?;
        let mut serve = engine.next_to_label(&labels);
        let mut job = None;
        if serve == Serve::CycleDue {
            job = Some(engine.begin_cycle(&labels)?);
            serve = engine.next_to_label(&labels);
        }
        Ok((self.served(task, serve)?, job))
    }

    /// Like [`Self::next_to_label`] but runs a due cycle before serving.
    pub fn next_to_label_sync(&mut self, task: &str) -> Result<Next> {
        let labels = self.corpus.labels(task);
        let serve = self.engine_mut(task)?.next_to_label(&labels);
        let serve = if serve == Serve::CycleDue {
            self.run_cycle(task)?;
            self.engine_mut(task)?.next_to_label(&labels)
        } else {
            serve
        };
        self.served(task, serve)
    }

    /// Starts a cycle by hand; fails with `Busy` while one is running.
    pub fn begin_cycle(&mut self, task: &str) -> Result<CycleJob> {
        let labels = self.corpus.labels(task);
        self.engine_mut(task)?.begin_cycle(&labels)
    }

    pub fn finish_cycle(&mut self, outcome: CycleOutcome) -> Result<()> {
        let task = outcome.task.clone();
        self.engine_mut(&task)?.finish_cycle(outcome)
    }

    pub fn abort_cycle(&mut self, task: &str) {
        if let Some(e) = self.engines.get_mut(task) {
            e.abort_cycle();
        }
    }

    pub fn run_cycle(&mut self, task: &str) -> Result<()> {
        let job = self.begin_cycle(task)?;
        self.complete(task, job)
    }

    pub fn metrics(&self, task: &str) -> Result<MetricsView> {
        let engine = self.engine(task)?;
        let history = engine.state().metrics_history.clone();
        Ok(MetricsView {
            task_name: task.to_string(),
            cycle_index: engine.state().cycle_index,
            latest: history.last().cloned(),
            series: convergence_series(&history),
            history,
        })
    }

    pub fn export(&self, task: &str) -> Result<Vec<u8>> {
        self.corpus.export_annotations(task)
    }

    /// Writes the full state to `path` atomically.
    pub fn snapshot(&self, path: &Path) -> Result<()> {
        let state = StateFile {
            defaults: self.defaults.clone(),
            simulation: self.corpus.is_simulation(),
            datasets: self.corpus.datasets().cloned().collect(),
            tasks: self.corpus.tasks_vec(),
            log: self.corpus.log().to_vec(),
            engines: self.engines.values().map(Engine::snapshot).collect(),
        };
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(SNAPSHOT_MAGIC.as_bytes())?;
            f.write_all(b"\n")?;
            serde_json::to_writer(&mut f, &state)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let split = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
        let header = String::from_utf8_lossy(&bytes[..split]);
        if header != SNAPSHOT_MAGIC {
            return Err(Error::Version {
                expected: SNAPSHOT_MAGIC,
                found: header.chars().take(16).collect(),
            });
        }
        let state: StateFile = serde_json::from_slice(&bytes[(split + 1).min(bytes.len())..])?;
        let corpus = Corpus::from_parts(state.datasets, state.tasks, state.log, state.simulation)?;
        let mut engines = BTreeMap::new();
        for snap in state.engines {
            let dataset = corpus.task_dataset(&snap.task)?;
            let engine = Engine::restore(snap, dataset);
            engines.insert(engine.task().to_string(), engine);
        }
        for t in corpus.tasks() {
            if !engines.contains_key(&t.task_name) {
                return Err(Error::Invalid(format!("snapshot has no engine for task {:?}", t.task_name)));
            }
        }
        state.defaults.validate()?;
        Ok(Self {
            corpus,
            engines,
            defaults: state.defaults,
        })
    }

    /// Appends journal rows newer than the loaded log. Returns how many were applied.
    pub fn replay_journal(&mut self, path: &Path) -> Result<usize> {
        let file = match fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(e.into()),
        };
        let mut applied = 0;
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let a: Annotation = serde_json::from_str(&line)?;
            let len = self.corpus.log().len() as u64;
            if a.seq < len {
                continue;
            }
            if a.seq > len {
                tracing::warn!(seq = a.seq, len, "journal has a gap; ignoring the rest");
                break;
            }
            let task = a.task_name.clone();
            let was_new = self.corpus.active_label(&task, &a.doc_id).is_none();
            self.corpus.replay(a)?;
            if let Some(engine) = self.engines.get_mut(&task) {
                let labels = self.corpus.labels(&task);
                engine.on_label(&labels, was_new);
            }
            applied += 1;
        }
        Ok(applied)
    }
}
