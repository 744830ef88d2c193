//! Documents, labeling tasks and the append-only annotation log.
//!
//! The [`Corpus`] owns every ingested [`Dataset`], the registered
//! [`LabelTask`]s and the annotation log. Re-annotating a `(doc, task)` pair
//! appends a new record; the latest record wins and older rows are kept.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary class of a labeling task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Yes,
    No,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::Yes, Class::No];

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Yes => "yes",
            Class::No => "no",
        }
    }

    pub fn flip(self) -> Class {
        match self {
            Class::Yes => Class::No,
            Class::No => Class::Yes,
        }
    }

    pub fn is_yes(self) -> bool {
        self == Class::Yes
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" | "y" | "true" | "1" | "positive" | "pos" => Ok(Class::Yes),
            "no" | "n" | "false" | "0" | "negative" | "neg" => Ok(Class::No),
            other => Err(Error::Invalid(format!("not a yes/no value: {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    /// Oracle labels keyed by task name. Only populated for simulation data.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ground_truth: BTreeMap<String, Class>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
            ground_truth: BTreeMap::new(),
        }
    }

    pub fn with_truth(mut self, task: impl Into<String>, cls: Class) -> Self {
        self.ground_truth.insert(task.into(), cls);
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub dataset_id: String,
    pub source_uri: String,
    pub documents: Vec<Document>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.dataset_id == other.dataset_id
            && self.source_uri == other.source_uri
            && self.documents == other.documents
    }
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate ids and blank texts.
    pub fn new(
        dataset_id: impl Into<String>,
        source_uri: impl Into<String>,
        documents: Vec<Document>,
    ) -> Result<Self> {
        let mut ds = Self {
            dataset_id: dataset_id.into(),
            source_uri: source_uri.into(),
            documents,
            index: HashMap::new(),
        };
        for (row, doc) in ds.documents.iter().enumerate() {
            if doc.text.trim().is_empty() {
                return Err(Error::Ingest {
                    row,
                    message: format!("document {:?} has empty text", doc.doc_id),
                });
            }
        }
        ds.reindex()?;
        Ok(ds)
    }

    pub(crate) fn reindex(&mut self) -> Result<()> {
        self.index.clear();
        for (row, doc) in self.documents.iter().enumerate() {
            if self.index.insert(doc.doc_id.clone(), row).is_some() {
                return Err(Error::Ingest {
                    row,
                    message: format!("duplicate document id {:?}", doc.doc_id),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.index.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.index.get(doc_id).copied()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.index.contains_key(doc_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            other => Err(Error::Invalid(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub format: Format,
    pub text_column: String,
    #[serde(default)]
    pub id_column: Option<String>,
    /// Task name to column holding its yes/no ground truth.
    #[serde(default)]
    pub truth_columns: BTreeMap<String, String>,
}

impl IngestOptions {
    pub fn new(format: Format, text_column: impl Into<String>) -> Self {
        Self {
            format,
            text_column: text_column.into(),
            id_column: None,
            truth_columns: BTreeMap::new(),
        }
    }
}

/// Reads a CSV or JSONL file into a [`Dataset`] named after the file stem.
pub fn ingest_dataset(path: &Path, opts: &IngestOptions) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let dataset_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    ingest_reader(file, &dataset_id, &path.display().to_string(), opts)
}

pub fn ingest_reader<R: Read>(
    reader: R,
    dataset_id: &str,
    source_uri: &str,
    opts: &IngestOptions,
) -> Result<Dataset> {
    let rows = match opts.format {
        Format::Csv => read_csv_rows(reader, opts)?,
        Format::Jsonl => read_jsonl_rows(reader, opts)?,
    };
    let mut documents = Vec::with_capacity(rows.len());
    for (row, raw) in rows.into_iter().enumerate() {
        if raw.text.trim().is_empty() {
            return Err(Error::Ingest {
                row,
                message: "empty text".to_string(),
            });
        }
        let doc_id = match raw.id {
            Some(id) if !id.trim().is_empty() => id,
            Some(_) => {
                return Err(Error::Ingest {
                    row,
                    message: "empty id".to_string(),
                })
            }
            None => format!("doc-{row}"),
        };
        let mut ground_truth = BTreeMap::new();
        for (task, value) in raw.truth {
            let cls = value.parse::<Class>().map_err(|e| Error::Ingest {
                row,
                message: format!("truth column for task {task:?}: {e}"),
            })?;
            ground_truth.insert(task, cls);
        }
        documents.push(Document {
            doc_id,
            text: raw.text,
            ground_truth,
        });
    }
    Dataset::new(dataset_id, source_uri, documents)
}

struct RawRow {
    id: Option<String>,
    text: String,
    truth: Vec<(String, String)>,
}

fn read_csv_rows<R: Read>(reader: R, opts: &IngestOptions) -> Result<Vec<RawRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Invalid(format!("missing column {name:?}")))
    };
    let text_idx = column(&opts.text_column)?;
    let id_idx = opts.id_column.as_deref().map(column).transpose()?;
    let truth_idx = opts
        .truth_columns
        .iter()
        .map(|(task, col)| Ok((task.clone(), column(col)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Ingest {
            row,
            message: e.to_string(),
        })?;
        let field = |i: usize| -> Result<String> {
            record.get(i).map(str::to_string).ok_or_else(|| Error::Ingest {
                row,
                message: format!("missing field {i}"),
            })
        };
        let mut truth = Vec::new();
        for (task, i) in &truth_idx {
            let v = field(*i)?;
            if !v.trim().is_empty() {
                truth.push((task.clone(), v));
            }
        }
        rows.push(RawRow {
            id: id_idx.map(field).transpose()?,
            text: field(text_idx)?,
            truth,
        });
    }
    Ok(rows)
}

fn read_jsonl_rows<R: Read>(reader: R, opts: &IngestOptions) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    let mut row = 0usize;
    for line in BufReader::new(reader).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Ingest { row, message };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| err("expected a JSON object".to_string()))?;
        let text = match obj.get(&opts.text_column) {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(_) => return Err(err(format!("{:?} is not a string", opts.text_column))),
            None => return Err(err(format!("missing field {:?}", opts.text_column))),
        };
        let id = match &opts.id_column {
            Some(col) => Some(
                obj.get(col)
                    .and_then(scalar_to_string)
                    .ok_or_else(|| err(format!("missing id field {col:?}")))?,
            ),
            None => None,
        };
        let truth = opts
            .truth_columns
            .iter()
            .filter_map(|(task, col)| {
                obj.get(col)
                    .and_then(scalar_to_string)
                    .map(|v| (task.clone(), v))
            })
            .collect();
        rows.push(RawRow { id, text, truth });
        row += 1;
    }
    Ok(rows)
}

fn scalar_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTask {
    pub task_name: String,
    pub dataset_id: String,
    pub classes: [Class; 2],
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Manual,
    PreLabeled,
    Oracle,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Manual => "manual",
            Origin::PreLabeled => "pre_labeled",
            Origin::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub seq: u64,
    pub doc_id: String,
    pub task_name: String,
    pub cls: Class,
    pub origin: Origin,
    pub annotator: String,
    pub timestamp: DateTime<Utc>,
}

/// An annotation before the corpus has stamped it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewAnnotation {
    pub doc_id: String,
    pub task_name: String,
    pub cls: Class,
    pub origin: Origin,
    pub annotator: String,
}

impl NewAnnotation {
    pub fn new(
        doc_id: impl Into<String>,
        task_name: impl Into<String>,
        cls: Class,
        origin: Origin,
        annotator: impl Into<String>,
    ) -> Self {
        Self {
            doc_id: doc_id.into(),
            task_name: task_name.into(),
            cls,
            origin,
            annotator: annotator.into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    datasets: BTreeMap<String, Dataset>,
    tasks: BTreeMap<String, LabelTask>,
    log: Vec<Annotation>,
    // task -> doc -> index into `log`
    active: BTreeMap<String, BTreeMap<String, usize>>,
    simulation: bool,
    journal: Option<PathBuf>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// A corpus that accepts oracle annotations.
    pub fn for_simulation() -> Self {
        Self {
            simulation: true,
            ..Self::default()
        }
    }

    pub fn is_simulation(&self) -> bool {
        self.simulation
    }

    /// Appends every future annotation as one JSON line to `path`.
    pub fn set_journal(&mut self, path: Option<PathBuf>) {
        self.journal = path;
    }

    pub fn add_dataset(&mut self, dataset: Dataset) -> Result<()> {
        if self.datasets.contains_key(&dataset.dataset_id) {
            return Err(Error::Conflict(format!(
                "dataset {:?} already exists",
                dataset.dataset_id
            )));
        }
        self.datasets.insert(dataset.dataset_id.clone(), dataset);
        Ok(())
    }

    pub fn dataset(&self, dataset_id: &str) -> Result<&Dataset> {
        self.datasets
            .get(dataset_id)
            .ok_or_else(|| Error::not_found("dataset", dataset_id))
    }

    pub fn datasets(&self) -> impl Iterator<Item = &Dataset> {
        self.datasets.values()
    }

    pub fn create_task(&mut self, task_name: &str, dataset_id: &str) -> Result<&LabelTask> {
        let task_name = task_name.trim();
        if task_name.is_empty() {
            return Err(Error::Invalid("task name must not be empty".into()));
        }
        self.dataset(dataset_id)?;
        if self.tasks.contains_key(task_name) {
            return Err(Error::Conflict(format!("task {task_name:?} already exists")));
        }
        let task = LabelTask {
            task_name: task_name.to_string(),
            dataset_id: dataset_id.to_string(),
            classes: Class::ALL,
            created_at: Utc::now(),
        };
        self.active.entry(task.task_name.clone()).or_default();
        Ok(self.tasks.entry(task.task_name.clone()).or_insert(task))
    }

    /// Drops the task and its active view; log rows stay for audit.
    pub fn remove_task(&mut self, task_name: &str) -> Result<LabelTask> {
        let task = self
            .tasks
            .remove(task_name)
            .ok_or_else(|| Error::not_found("task", task_name))?;
        self.active.remove(task_name);
        Ok(task)
    }

    pub fn task(&self, task_name: &str) -> Result<&LabelTask> {
        self.tasks
            .get(task_name)
            .ok_or_else(|| Error::not_found("task", task_name))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &LabelTask> {
        self.tasks.values()
    }

    pub fn task_dataset(&self, task_name: &str) -> Result<&Dataset> {
        let task = self.task(task_name)?;
        self.dataset(&task.dataset_id)
    }

    pub fn record_annotation(&mut self, a: NewAnnotation) -> Result<&Annotation> {
        let task = self.task(&a.task_name)?;
        let dataset = self.dataset(&task.dataset_id)?;
        if !dataset.contains(&a.doc_id) {
            return Err(Error::not_found("document", a.doc_id));
        }
        if a.origin == Origin::Oracle && !self.simulation {
            return Err(Error::Invalid(
                "oracle annotations are only accepted in simulation mode".into(),
            ));
        }
        let now = Utc::now();
        let timestamp = match self.log.last() {
            Some(prev) if prev.timestamp > now => prev.timestamp,
            _ => now,
        };
        let annotation = Annotation {
            seq: self.log.len() as u64,
            doc_id: a.doc_id,
            task_name: a.task_name,
            cls: a.cls,
            origin: a.origin,
            annotator: a.annotator,
            timestamp,
        };
        if let Some(path) = &self.journal {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            let mut line = serde_json::to_vec(&annotation)?;
            line.push(b'\n');
            file.write_all(&line)?;
        }
        let idx = self.log.len();
        self.active
            .entry(annotation.task_name.clone())
            .or_default()
            .insert(annotation.doc_id.clone(), idx);
        self.log.push(annotation);
        Ok(&self.log[idx])
    }

    /// Full append-only history, including superseded rows.
    pub fn log(&self) -> &[Annotation] {
        &self.log
    }

    /// Active annotations of a task, in the order they were recorded.
    pub fn active_annotations(&self, task_name: &str) -> Result<Vec<&Annotation>> {
        self.task(task_name)?;
        let mut idx: Vec<usize> = self
            .active
            .get(task_name)
            .map(|m| m.values().copied().collect())
            .unwrap_or_default();
        idx.sort_unstable();
        Ok(idx.into_iter().map(|i| &self.log[i]).collect())
    }

    pub fn active_label(&self, task_name: &str, doc_id: &str) -> Option<&Annotation> {
        self.active
            .get(task_name)
            .and_then(|m| m.get(doc_id))
            .map(|&i| &self.log[i])
    }

    /// Active labels of a task keyed by doc id.
    pub fn labels(&self, task_name: &str) -> BTreeMap<String, Class> {
        self.active
            .get(task_name)
            .map(|m| {
                m.iter()
                    .map(|(doc, &i)| (doc.clone(), self.log[i].cls))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn label_count(&self, task_name: &str) -> usize {
        self.active.get(task_name).map_or(0, BTreeMap::len)
    }

    /// `(yes, no)` counts over active annotations.
    pub fn class_counts(&self, task_name: &str) -> (usize, usize) {
        let mut yes = 0;
        let mut no = 0;
        if let Some(m) = self.active.get(task_name) {
            for &i in m.values() {
                match self.log[i].cls {
                    Class::Yes => yes += 1,
                    Class::No => no += 1,
                }
            }
        }
        (yes, no)
    }

    pub fn origin_count(&self, task_name: &str, origin: Origin) -> usize {
        self.active.get(task_name).map_or(0, |m| {
            m.values().filter(|&&i| self.log[i].origin == origin).count()
        })
    }

    pub fn export_annotations(&self, task_name: &str) -> Result<Vec<u8>> {
        let rows = self.active_annotations(task_name)?;
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["doc_id", "class", "origin", "annotator", "timestamp"])?;
        for a in rows {
            wtr.write_record([
                a.doc_id.as_str(),
                a.cls.as_str(),
                a.origin.as_str(),
                a.annotator.as_str(),
                &a.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Nanos, true),
            ])?;
        }
        wtr.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    /// Rebuilds a corpus from its parts, replaying the log for active state.
    pub(crate) fn from_parts(
        datasets: Vec<Dataset>,
        tasks: Vec<LabelTask>,
        log: Vec<Annotation>,
        simulation: bool,
    ) -> Result<Self> {
        let mut corpus = Corpus {
            simulation,
            ..Corpus::default()
        };
        for mut ds in datasets {
            ds.reindex()?;
            corpus.add_dataset(ds)?;
        }
        for task in tasks {
            corpus.dataset(&task.dataset_id)?;
            corpus.active.entry(task.task_name.clone()).or_default();
            corpus.tasks.insert(task.task_name.clone(), task);
        }
        for (i, a) in log.iter().enumerate() {
            if a.seq != i as u64 {
                return Err(Error::Invalid(format!(
                    "annotation log out of order at row {i}"
                )));
            }
            if corpus.tasks.contains_key(&a.task_name) {
                corpus
                    .active
                    .entry(a.task_name.clone())
                    .or_default()
                    .insert(a.doc_id.clone(), i);
            }
        }
        corpus.log = log;
        Ok(corpus)
    }

    /// Appends an already stamped annotation read back from a journal.
    pub(crate) fn replay(&mut self, a: Annotation) -> Result<()> {
        if a.seq != self.log.len() as u64 {
            return Err(Error::Invalid(format!(
                "journal row {} does not follow log length {}",
                a.seq,
                self.log.len()
            )));
        }
        if self.tasks.contains_key(&a.task_name) {
            self.active
                .entry(a.task_name.clone())
                .or_default()
                .insert(a.doc_id.clone(), self.log.len());
        }
        self.log.push(a);
        Ok(())
    }

    pub(crate) fn tasks_vec(&self) -> Vec<LabelTask> {
        self.tasks.values().cloned().collect()
    }
}
