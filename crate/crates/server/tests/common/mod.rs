#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Duration;

use calearn_client::Client;
use calearn_core::api::{IngestRequest, QueueNext};
use calearn_core::corpus::{Class, Dataset, Format};
use calearn_core::sim::{make_synthetic_corpus, CorpusSpec};
use calearn_core::workspace::{TaskSummary, Workspace};
use calearn_server::{Server, ServerConfig};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub const TASK: &str = "target";

pub struct Running {
    pub client: Client,
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    join: Option<JoinHandle<()>>,
}

impl Running {
    /// Stops accepting requests and waits for the final snapshot.
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(j) = self.join.take() {
            j.await.unwrap();
        }
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
    }
}

pub fn loopback() -> ServerConfig {
    ServerConfig {
        bind: SocketAddr::from(([127, 0, 0, 1], 0)),
        ..ServerConfig::default()
    }
}

pub async fn start(cfg: ServerConfig) -> Running {
    let server = Server::bind(&cfg).await.unwrap();
    launch(server)
}

pub async fn start_with(cfg: ServerConfig, ws: Workspace) -> Running {
    let server = Server::with_workspace(&cfg, ws).await.unwrap();
    launch(server)
}

fn launch(server: Server) -> Running {
    let addr = server.local_addr().unwrap();
    let (tx, rx) = oneshot::channel();
    let join = tokio::spawn(async move {
        server
            .run(async {
                let _ = rx.await;
            })
            .await
            .unwrap();
    });
    Running {
        client: Client::new(format!("http://{addr}")),
        addr,
        stop: Some(tx),
        join: Some(join),
    }
}

pub fn synthetic(n_docs: usize, prevalence: f64, seed: u64) -> Dataset {
    make_synthetic_corpus(&CorpusSpec {
        n_docs,
        prevalence,
        seed,
        task_name: TASK.into(),
        ..CorpusSpec::default()
    })
    .unwrap()
}

/// The dataset as CSV with `id`, `text` and `truth` columns.
pub fn to_csv(ds: &Dataset) -> String {
    let mut out = String::from("id,text,truth\n");
    for d in &ds.documents {
        let truth = d.ground_truth.get(TASK).map_or("", |c| c.as_str());
        out.push_str(&format!("{},{},{}\n", d.doc_id, d.text, truth));
    }
    out
}

pub fn inline_request(ds: &Dataset) -> IngestRequest {
    IngestRequest {
        path: None,
        content: Some(to_csv(ds)),
        dataset_id: Some(ds.dataset_id.clone()),
        format: Format::Csv,
        text_column: "text".into(),
        id_column: Some("id".into()),
        truth_columns: BTreeMap::from([(TASK.to_string(), "truth".to_string())]),
    }
}

pub fn truth_of(ds: &Dataset) -> BTreeMap<String, Class> {
    ds.documents
        .iter()
        .map(|d| (d.doc_id.clone(), d.ground_truth[TASK]))
        .collect()
}

/// Labels `n` documents in queue order from ground truth; stops early on completion.
pub async fn label_from_queue(client: &Client, truth: &BTreeMap<String, Class>, n: usize) -> usize {
    for done in 0..n {
        match client.next(TASK).await.unwrap() {
            QueueNext::Ready { doc_id, .. } => {
                client.annotate(TASK, &doc_id, truth[&doc_id], "oracle").await.unwrap();
            }
            QueueNext::Complete => return done,
        }
    }
    n
}

pub async fn wait_idle(client: &Client, task: &str) -> TaskSummary {
    for _ in 0..600 {
        let s = client.status(task).await.unwrap();
        if !s.training_in_progress {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("training never finished");
}
