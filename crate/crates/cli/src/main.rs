use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use mpi_cli::corpus::{generate_corpus, parse_records, CorruptionSpec};
use mpi_cli::eval::{evaluate, parse_results, parse_truth};
use mpi_cli::load::{a04, ids_text, interpret_ack, parse_ids, predictions, LoadRow, LoadStatus};
use mpi_cli::remote::Remote;
use mpi_cli::{clients, pipeline};
use mpi_core::matching::LinkageConfig;
use mpi_service::auth::{ClientSource, Scope};
use mpi_service::clock::SystemClock;
use mpi_service::{Service, ServiceConfig, DEFAULT_SNAPSHOT_EVERY};

#[derive(Parser)]
#[command(name = "mpi", about = "Master patient index operator tool")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Connection {
    /// Base URL of a running registry.
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    server: String,
    #[arg(long)]
    client_id: String,
    #[arg(long, env = "MPI_CLIENT_SECRET", hide_env_values = true)]
    secret: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus and its truth file.
    Gen {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        duplicate_rate: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        name_typo: Option<f64>,
        #[arg(long)]
        dob_swap: Option<f64>,
        #[arg(long)]
        missing_nic: Option<f64>,
        #[arg(long)]
        address_variation: Option<f64>,
        #[arg(long, default_value = "corpus.jsonl")]
        records: PathBuf,
        #[arg(long, default_value = "truth.tsv")]
        truth: PathBuf,
    },
    /// Register every corpus record with a running registry via HL7 A04.
    Load {
        #[command(flatten)]
        conn: Connection,
        #[arg(long, default_value = "corpus.jsonl")]
        corpus: PathBuf,
        /// Where placeholder ids are mapped to assigned PHNs.
        #[arg(long, default_value = "ids.tsv")]
        out: PathBuf,
    },
    /// Run the duplicate scan and print the review queue.
    Scan {
        #[command(flatten)]
        conn: Connection,
        /// Load output; with it, pairs are written in placeholder ids.
        #[arg(long)]
        ids: Option<PathBuf>,
        /// Results file for `mpi eval`. Requires --ids.
        #[arg(long, requires = "ids")]
        out: Option<PathBuf>,
    },
    /// Precision and recall of a results file against a truth file.
    Eval {
        #[arg(long, default_value = "results.tsv")]
        results: PathBuf,
        #[arg(long, default_value = "truth.tsv")]
        truth: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Generate, load, scan and evaluate in one process, without a server.
    Pipeline {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        duplicate_rate: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        comparator_config: Option<PathBuf>,
        #[arg(long)]
        data_dir: PathBuf,
    },
    /// Manage API clients.
    Client {
        #[command(subcommand)]
        action: ClientCmd,
    },
    /// Start the registry server.
    Serve {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        #[arg(long)]
        clients_file: PathBuf,
        #[arg(long)]
        comparator_config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SNAPSHOT_EVERY)]
        snapshot_every: u64,
    },
}

#[derive(Subcommand)]
enum ClientCmd {
    Add {
        #[arg(long)]
        clients_file: PathBuf,
        #[arg(long)]
        id: String,
        /// Comma-separated: READ, WRITE, STEWARD, ADMIN.
        #[arg(long, value_delimiter = ',')]
        scopes: Vec<Scope>,
        /// Generated and printed when omitted.
        #[arg(long, env = "MPI_NEW_CLIENT_SECRET", hide_env_values = true)]
        secret: Option<String>,
    },
    Rm {
        #[arg(long)]
        clients_file: PathBuf,
        #[arg(long)]
        id: String,
    },
}

fn linkage(path: Option<&PathBuf>) -> Result<LinkageConfig> {
    match path {
        None => Ok(LinkageConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            LinkageConfig::parse(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn read(path: &PathBuf) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn serve(data_dir: PathBuf, listen: SocketAddr, clients_file: PathBuf, comparator: Option<PathBuf>, every: u64) -> Result<()> {
    let mut config = ServiceConfig::new(&data_dir, ClientSource::File(clients_file));
    config.linkage = linkage(comparator.as_ref())?;
    config.snapshot_every = every;
    let service = Arc::new(Service::open(config, Arc::new(SystemClock))?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen).await?;
        println!("listening on {}", listener.local_addr()?);
        std::io::stdout().flush()?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        mpi_service::http::serve(service.clone(), listener, shutdown).await?;
        service.checkpoint()?;
        Ok(())
    })
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Cmd::Gen {
            n,
            duplicate_rate,
            seed,
            name_typo,
            dob_swap,
            missing_nic,
            address_variation,
            records,
            truth,
        } => {
            let mut spec = CorruptionSpec::new(duplicate_rate, seed);
            spec.name_typo = name_typo.unwrap_or(spec.name_typo);
            spec.dob_swap = dob_swap.unwrap_or(spec.dob_swap);
            spec.missing_nic = missing_nic.unwrap_or(spec.missing_nic);
            spec.address_variation = address_variation.unwrap_or(spec.address_variation);
            let corpus = generate_corpus(n, &spec)?;
            fs::write(&records, corpus.records_text())?;
            fs::write(&truth, corpus.truth_text())?;
            println!("{} records, {} duplicate pairs", corpus.records.len(), corpus.truth.len());
        }
        Cmd::Load { conn, corpus, out } => {
            let records = parse_records(&read(&corpus)?)?;
            let remote = Remote::connect(&conn.server, &conn.client_id, &conn.secret)?;
            let mut rows = Vec::with_capacity(records.len());
            for r in &records {
                let reply = remote.hl7(&a04(r, Utc::now()))?;
                let status = interpret_ack(&reply).map_err(|e| anyhow::anyhow!("{}: {e}", r.id))?;
                rows.push(LoadRow { id: r.id.clone(), status });
            }
            fs::write(&out, ids_text(&rows))?;
            let count = |f: fn(&LoadStatus) -> bool| rows.iter().filter(|r| f(&r.status)).count();
            println!(
                "registered {} duplicate {} rejected {}",
                count(|s| matches!(s, LoadStatus::Registered(_))),
                count(|s| matches!(s, LoadStatus::Duplicate { .. })),
                count(|s| matches!(s, LoadStatus::Rejected(_))),
            );
        }
        Cmd::Scan { conn, ids, out } => {
            let remote = Remote::connect(&conn.server, &conn.client_id, &conn.secret)?;
            let outcome = remote.scan()?;
            eprintln!("queued {}", outcome["items"].as_array().map_or(0, Vec::len));
            let items = remote.queue(true)?;
            for item in &items {
                println!("{}", item.export_line());
            }
            if let (Some(ids), Some(out)) = (ids, out) {
                let rows = parse_ids(&read(&ids)?).map_err(anyhow::Error::msg)?;
                let text: String = predictions(&rows, &items).iter().map(|p| p.to_line()).collect();
                fs::write(&out, text)?;
            }
        }
        Cmd::Eval { results, truth, json } => {
            let e = evaluate(&parse_results(&read(&results)?)?, &parse_truth(&read(&truth)?)?);
            if json {
                println!("{}", serde_json::to_string_pretty(&e)?);
            } else {
                println!("{e}");
            }
        }
        Cmd::Pipeline {
            n,
            duplicate_rate,
            seed,
            comparator_config,
            data_dir,
        } => {
            if data_dir.exists() && fs::read_dir(&data_dir)?.next().is_some() {
                bail!("{} is not empty", data_dir.display());
            }
            let run = pipeline::run(n, &CorruptionSpec::new(duplicate_rate, seed), linkage(comparator_config.as_ref())?, &data_dir)?;
            let mut by_label = std::collections::BTreeMap::new();
            for p in &run.predictions {
                *by_label.entry(p.label.as_str()).or_insert(0usize) += 1;
            }
            for (label, count) in by_label {
                println!("{label}\t{count}");
            }
            println!("{}", run.evaluation);
        }
        Cmd::Client { action } => match action {
            ClientCmd::Add {
                clients_file,
                id,
                scopes,
                secret,
            } => {
                let generated = secret.is_none();
                let secret = secret.unwrap_or_else(clients::generate_secret);
                clients::add(&clients_file, &id, &secret, &scopes, Utc::now())?;
                if generated {
                    println!("{secret}");
                }
            }
            ClientCmd::Rm { clients_file, id } => clients::remove(&clients_file, &id, Utc::now())?,
        },
        Cmd::Serve {
            data_dir,
            listen,
            clients_file,
            comparator_config,
            snapshot_every,
        } => serve(data_dir, listen, clients_file, comparator_config, snapshot_every)?,
    }
    Ok(())
}
