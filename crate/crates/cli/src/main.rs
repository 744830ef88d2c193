use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use calearn_client::Client;
use calearn_core::api::{CreateTaskRequest, IngestRequest};
use calearn_core::corpus::Format;
use calearn_core::sim::{render_table, simulate, ExperimentConfig};
use calearn_core::workspace::Bootstrap;
use calearn_core::Error;
use calearn_server::{Server, ServerConfig};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "calearn", version, about = "Conformal active learning for document labeling")]
struct Cli {
    /// Service address used by client commands.
    #[arg(long, global = true, env = "CALEARN_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Upload a CSV or JSONL file as a dataset.
    Ingest {
        file: PathBuf,
        /// csv or jsonl; guessed from the extension when omitted.
        #[arg(long)]
        format: Option<Format>,
        #[arg(long, default_value = "text")]
        text_col: String,
        #[arg(long)]
        id_col: Option<String>,
        /// Ground-truth column for a task, as TASK=COLUMN. Repeatable.
        #[arg(long = "truth", value_parser = parse_pair)]
        truth: Vec<(String, String)>,
        /// Defaults to the file stem.
        #[arg(long)]
        dataset_id: Option<String>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config file and CALEARN_PORT; 0 picks a free port.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        state_dir: Option<PathBuf>,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Run a labeling simulation against ground truth, in process.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// JSON report destination.
        #[arg(long)]
        out: PathBuf,
        /// Also write the plain-text results table here.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Create a labeling task.
    CreateTask {
        name: String,
        #[arg(long)]
        dataset: Option<String>,
    },
    /// List tasks with their label counts.
    Tasks,
    /// Show one task's progress.
    Status { task: String },
    /// Download a task's annotations as CSV.
    Export {
        task: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seed a task's queue with documents matching any of the terms.
    BootstrapKeywords {
        task: String,
        #[arg(long, value_delimiter = ',', required = true)]
        terms: Vec<String>,
    },
    /// Start a training cycle now.
    Retrain { task: String },
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected TASK=COLUMN, got {s:?}")),
    }
}

fn guess_format(path: &Path) -> anyhow::Result<Format> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    ext.parse()
        .with_context(|| format!("cannot tell the format of {}; pass --format", path.display()))
}

fn print_json<T: serde::Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

async fn serve(
    config: Option<PathBuf>,
    port: Option<u16>,
    state_dir: Option<PathBuf>,
    ui_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(path) => ServerConfig::load(&path)?,
        None => ServerConfig::default(),
    }
    .with_env()?;
    if let Some(port) = port {
        cfg.bind.set_port(port);
    }
    if state_dir.is_some() {
        cfg.state_dir = state_dir;
    }
    if ui_dir.is_some() {
        cfg.ui_dir = ui_dir;
    }
    let server = Server::bind(&cfg).await?;
    println!("listening on http://{}", server.local_addr()?);
    server
        .run(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    let client = Client::new(cli.server);
    match cli.command {
        Command::Ingest {
            file,
            format,
            text_col,
            id_col,
            truth,
            dataset_id,
        } => {
            let content = fs::read_to_string(&file).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::FileNotFound(file.clone()),
                _ => Error::Io(e),
            })?;
            let format = match format {
                Some(f) => f,
                None => guess_format(&file)?,
            };
            let dataset_id = match dataset_id {
                Some(id) => id,
                None => match file.file_stem().and_then(|s| s.to_str()) {
                    Some(stem) => stem.to_string(),
                    None => bail!("cannot derive a dataset id from {}; pass --dataset-id", file.display()),
                },
            };
            let req = IngestRequest {
                path: None,
                content: Some(content),
                dataset_id: Some(dataset_id),
                format,
                text_column: text_col,
                id_column: id_col,
                truth_columns: truth.into_iter().collect::<BTreeMap<_, _>>(),
            };
            print_json(&client.ingest(&req).await?)
        }
        Command::Serve {
            config,
            port,
            state_dir,
            ui_dir,
        } => serve(config, port, state_dir, ui_dir).await,
        Command::Simulate { config, out, table } => {
            let cfg = ExperimentConfig::load(&config)?;
            let output = tokio::task::spawn_blocking(move || simulate(&cfg)).await??;
            fs::write(&out, serde_json::to_vec_pretty(&output)?)
                .with_context(|| format!("writing {}", out.display()))?;
            let mut reports = vec![&output.active];
            reports.extend(output.baseline.as_ref());
            let rendered = render_table(&reports);
            if let Some(path) = table {
                fs::write(&path, &rendered).with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{rendered}");
            Ok(())
        }
        Command::CreateTask { name, dataset } => {
            let req = CreateTaskRequest {
                task_name: name,
                dataset_id: dataset,
                config: None,
            };
            print_json(&client.create_task(&req).await?)
        }
        Command::Tasks => print_json(&client.tasks().await?),
        Command::Status { task } => print_json(&client.status(&task).await?),
        Command::Export { task, out } => {
            let csv = client.export(&task).await?;
            fs::write(&out, csv).with_context(|| format!("writing {}", out.display()))?;
            Ok(())
        }
        Command::BootstrapKeywords { task, terms } => {
            print_json(&client.bootstrap(&task, &Bootstrap::Keyword { terms }).await?)
        }
        Command::Retrain { task } => print_json(&client.retrain(&task).await?),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
