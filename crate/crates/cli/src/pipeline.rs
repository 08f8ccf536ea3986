//! gen, load, scan and eval against an in-process service, through the same
//! HL7 intake path a running server uses.

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Result};
use chrono::Utc;
use mpi_core::matching::LinkageConfig;
use mpi_core::merge::ReviewItem;
use mpi_service::auth::{ClientRecord, ClientSource, ClientTable, Scope};
use mpi_service::clock::SystemClock;
use mpi_service::intake::Encoding;
use mpi_service::{Service, ServiceConfig};

use crate::corpus::{generate_corpus, Corpus, CorruptionSpec};
use crate::eval::{evaluate, Evaluation, Prediction};
use crate::load::{a04, interpret_ack, predictions, LoadRow};

const OPERATOR: &str = "operator";
const OPERATOR_SECRET: &str = "in-process";

pub struct LinkageRun {
    pub corpus: Corpus,
    pub rows: Vec<LoadRow>,
    pub items: Vec<ReviewItem>,
    pub predictions: Vec<Prediction>,
    pub evaluation: Evaluation,
}

/// Sends every record to `service` as an A04.
pub fn load(service: &Service, bearer: &str, corpus: &Corpus) -> Result<Vec<LoadRow>> {
    corpus
        .records
        .iter()
        .map(|r| {
            let reply = service.intake(Some(bearer), a04(r, Utc::now()).as_bytes(), Encoding::Er7)?;
            let body = String::from_utf8(reply.body)?;
            let status = interpret_ack(&body).map_err(|e| anyhow!("{}: {e}", r.id))?;
            Ok(LoadRow { id: r.id.clone(), status })
        })
        .collect()
}

pub fn run(n: usize, spec: &CorruptionSpec, linkage: LinkageConfig, data_dir: &Path) -> Result<LinkageRun> {
    let corpus = generate_corpus(n, spec)?;
    let mut clients = ClientTable::default();
    clients.upsert(ClientRecord::with_secret(OPERATOR, OPERATOR_SECRET, Scope::ALL));
    let mut config = ServiceConfig::new(data_dir, ClientSource::Fixed(clients));
    config.linkage = linkage;
    let service = Service::open(config, Arc::new(SystemClock))?;
    let token = service.issue_token(OPERATOR, OPERATOR_SECRET)?.token;
    let rows = load(&service, &token, &corpus)?;
    let caller = service.authorize(Some(&token), Scope::Steward)?;
    service.scan(&caller)?;
    let items: Vec<ReviewItem> = service.read(|r| r.queue().list(false).into_iter().cloned().collect());
    let predictions = predictions(&rows, &items);
    let evaluation = evaluate(&predictions, &corpus.truth);
    Ok(LinkageRun {
        corpus,
        rows,
        items,
        predictions,
        evaluation,
    })
}
