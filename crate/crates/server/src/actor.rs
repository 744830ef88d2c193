//! Single writer: one task owns the [`Workspace`]; handlers send it closures.

use std::path::PathBuf;

use calearn_core::api::{ApiError, ErrorCode};
use calearn_core::engine::{CycleJob, CycleOutcome};
use calearn_core::workspace::Workspace;
use calearn_core::Result;
use tokio::sync::{mpsc, oneshot};

type Command = Box<dyn FnOnce(&mut Actor) + Send>;

pub const STATE_FILE: &str = "state.calv1";
pub const JOURNAL_FILE: &str = "annotations.jsonl";

pub struct Actor {
    ws: Workspace,
    state_dir: Option<PathBuf>,
    tx: mpsc::WeakUnboundedSender<Command>,
}

impl Actor {
    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn workspace_mut(&mut self) -> &mut Workspace {
        &mut self.ws
    }

    /// Writes the snapshot when the service has a state directory.
    pub fn persist(&self) {
        if let Some(dir) = &self.state_dir {
            if let Err(e) = self.ws.snapshot(&dir.join(STATE_FILE)) {
                tracing::error!(error = %e, "snapshot failed");
            }
        }
    }

    /// Trains off the writer; the outcome comes back as another command.
    pub fn launch(&mut self, job: CycleJob) {
        let Some(tx) = self.tx.upgrade() else {
            self.ws.abort_cycle(&job.task);
            return;
        };
        let task = job.task.clone();
        tracing::info!(task = %task, cycle = job.cycle_index, labels = job.labeled_count(), "cycle started");
        tokio::task::spawn_blocking(move || {
            let result = job.run();
            let _ = tx.send(Box::new(move |actor: &mut Actor| actor.finish(&task, result)));
        });
    }

    fn finish(&mut self, task: &str, result: Result<CycleOutcome>) {
        let done = result.and_then(|outcome| {
            let cycle = outcome.cycle_index;
            self.ws.finish_cycle(outcome).map(|_| cycle)
        });
        match done {
            Ok(cycle) => {
                tracing::info!(task, cycle, "cycle finished");
                self.persist();
            }
            Err(e) => {
                tracing::warn!(task, error = %e, "cycle failed");
                self.ws.abort_cycle(task);
            }
        }
    }
}

#[derive(Clone)]
pub struct Handle {
    tx: mpsc::UnboundedSender<Command>,
}

impl Handle {
    /// Starts the actor task on the current runtime.
    pub fn spawn(ws: Workspace, state_dir: Option<PathBuf>) -> Self {
        let (tx, mut rx) = mpsc::unbounded_channel::<Command>();
        let mut actor = Actor {
            ws,
            state_dir,
            tx: tx.downgrade(),
        };
        tokio::spawn(async move {
            while let Some(cmd) = rx.recv().await {
                cmd(&mut actor);
            }
        });
        Self { tx }
    }

    /// Runs `f` on the writer and returns its result.
    pub async fn call<R, F>(&self, f: F) -> std::result::Result<R, ApiError>
    where
        R: Send + 'static,
        F: FnOnce(&mut Actor) -> R + Send + 'static,
    {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(Box::new(move |actor: &mut Actor| {
                let _ = reply.send(f(actor));
            }))
            .map_err(|_| unavailable())?;
        rx.await.map_err(|_| unavailable())
    }
}

fn unavailable() -> ApiError {
    ApiError::new(ErrorCode::Busy, "engine is shutting down")
}
