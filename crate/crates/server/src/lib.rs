//! HTTP/JSON service over the labeling engine.

pub mod actor;
pub mod routes;

use std::fs;
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use calearn_core::engine::EngineConfig;
use calearn_core::workspace::Workspace;
use calearn_core::{Error, Result};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

pub use actor::Handle;
pub use routes::router;

pub const PORT_ENV: &str = "CALEARN_PORT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// Snapshot and annotation journal live here when set.
    pub state_dir: Option<PathBuf>,
    /// Built UI assets, served under `/ui`.
    pub ui_dir: Option<PathBuf>,
    /// Defaults for new tasks.
    pub engine: EngineConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            state_dir: None,
            ui_dir: None,
            engine: EngineConfig::default(),
        }
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.engine.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_toml(&text)
    }

    /// Applies `CALEARN_PORT` when set.
    pub fn with_env(mut self) -> Result<Self> {
        if let Ok(port) = std::env::var(PORT_ENV) {
            let port = port
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("{PORT_ENV}={port:?} is not a port")))?;
            self.bind.set_port(port);
        }
        Ok(self)
    }
}

/// Loads the workspace from `state_dir` (snapshot plus journal) or starts empty.
pub fn open_workspace(cfg: &ServerConfig) -> Result<Workspace> {
    let Some(dir) = &cfg.state_dir else {
        return Workspace::new(cfg.engine.clone());
    };
    fs::create_dir_all(dir)?;
    let state = dir.join(actor::STATE_FILE);
    let journal = dir.join(actor::JOURNAL_FILE);
    let mut ws = if state.exists() {
        let mut ws = Workspace::load(&state)?;
        let replayed = ws.replay_journal(&journal)?;
        tracing::info!(path = %state.display(), replayed, "state restored");
        ws
    } else {
        if journal.exists() {
            let aside = dir.join(format!("{}.orphaned", actor::JOURNAL_FILE));
            tracing::warn!(path = %journal.display(), "journal without snapshot moved aside");
            fs::rename(&journal, aside)?;
        }
        Workspace::new(cfg.engine.clone())?
    };
    ws.set_journal(Some(journal));
    Ok(ws)
}

pub struct Server {
    listener: TcpListener,
    handle: Handle,
    ui_dir: Option<PathBuf>,
}

impl Server {
    /// Binds the listener and starts the engine actor.
    pub async fn bind(cfg: &ServerConfig) -> Result<Self> {
        let ws = open_workspace(cfg)?;
        Self::with_workspace(cfg, ws).await
    }

    pub async fn with_workspace(cfg: &ServerConfig, ws: Workspace) -> Result<Self> {
        let listener = TcpListener::bind(cfg.bind).await?;
        Ok(Self {
            listener,
            handle: Handle::spawn(ws, cfg.state_dir.clone()),
            ui_dir: cfg.ui_dir.clone(),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn handle(&self) -> Handle {
        self.handle.clone()
    }

    /// Serves until `shutdown` resolves, then writes a final snapshot.
    pub async fn run<F>(self, shutdown: F) -> Result<()>
    where
        F: Future<Output = ()> + Send + 'static,
    {
        let app = router(self.handle.clone(), self.ui_dir);
        axum::serve(self.listener, app)
            .with_graceful_shutdown(shutdown)
            .await?;
        let _ = self.handle.call(|a| a.persist()).await;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_from_toml() {
        let cfg = ServerConfig::from_toml(
            r#"
bind = "0.0.0.0:9000"
state_dir = "/var/lib/calearn"

[engine]
alpha = 0.05
"#,
        )
        .unwrap();
        assert_eq!(cfg.bind.port(), 9000);
        assert_eq!(cfg.engine.alpha, 0.05);
        assert_eq!(cfg.state_dir.as_deref(), Some(Path::new("/var/lib/calearn")));
        assert!(ServerConfig::from_toml("[engine]\nalpha = 2.0").is_err());
        assert_eq!(ServerConfig::from_toml("").unwrap(), ServerConfig::default());
    }

    #[test]
    fn orphaned_journal_is_moved_aside() {
        let dir = tempfile::tempdir().unwrap();
        let journal = dir.path().join(actor::JOURNAL_FILE);
        fs::write(&journal, "{}\n").unwrap();
        let cfg = ServerConfig {
            state_dir: Some(dir.path().to_path_buf()),
            ..ServerConfig::default()
        };
        let ws = open_workspace(&cfg).unwrap();
        assert!(ws.summaries().is_empty());
        assert!(!journal.exists());
        assert!(dir.path().join("annotations.jsonl.orphaned").exists());
    }
}
