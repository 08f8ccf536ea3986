//! The registry behind its auth boundary: one writer, many readers, every
//! accepted mutation logged, audited and flushed before it is acknowledged.

use std::path::PathBuf;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use mpi_core::hl7::{build_adt, emit_er7, MessageHeader, MessageKind};
use mpi_core::identity::{IdentifierKind, Phn};
use mpi_core::matching::LinkageConfig;
use mpi_core::registry::{Command, Outcome, Registry, RegistryError, SearchHit, SearchRequest};
use thiserror::Error;

use crate::audit::{AuditEntry, AuditLog, OUTCOME_OK};
use crate::auth::{AccessToken, AuthError, Caller, ClientSource, Scope, TokenService};
use crate::clock::Clock;
use crate::store::{CommitError, Receipt, Store, StoreError};

pub const DEFAULT_SNAPSHOT_EVERY: u64 = 500;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Rejected(#[from] RegistryError),
    #[error(transparent)]
    Storage(#[from] StoreError),
    #[error("MALFORMED_REQUEST: {0}")]
    Malformed(String),
    #[error("NOT_FOUND: {0}")]
    NotFound(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Auth(e) => e.code(),
            ServiceError::Rejected(e) => e.code(),
            ServiceError::Storage(_) => "STORAGE_FAILURE",
            ServiceError::Malformed(_) => "MALFORMED_REQUEST",
            ServiceError::NotFound(_) => "NOT_FOUND",
        }
    }
}

impl From<CommitError> for ServiceError {
    fn from(e: CommitError) -> Self {
        match e {
            CommitError::Rejected(e) => ServiceError::Rejected(e),
            CommitError::Storage(e) => ServiceError::Storage(e),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub clients: ClientSource,
    pub linkage: LinkageConfig,
    pub snapshot_every: u64,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>, clients: ClientSource) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            clients,
            linkage: LinkageConfig::default(),
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        }
    }
}

/// An ADT^A40 announcing a merge to subscribed systems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notification {
    pub merge_id: String,
    pub er7: String,
}

pub(crate) struct Inner {
    pub(crate) store: Store,
    pub(crate) audit: AuditLog,
    outbox: Vec<Notification>,
}

pub struct Service {
    tokens: TokenService,
    inner: RwLock<Inner>,
    pub(crate) clock: Arc<dyn Clock>,
}

fn notification(registry: &Registry, outcome: &Outcome) -> Option<Notification> {
    let event = outcome.merge_event()?;
    let survivor = registry.record(&event.survivor)?;
    let header = MessageHeader::from_mpi("ALL", "ALL", event.decided_at, &event.id);
    let message = build_adt(MessageKind::AdtA40, survivor, Some(&event.retired), &header).ok()?;
    Some(Notification {
        merge_id: event.id.clone(),
        er7: emit_er7(&message),
    })
}

impl Service {
    /// Opens the data directory, replays it, and backfills audit entries for
    /// logged events whose audit write was cut off by a crash.
    pub fn open(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Service, StoreError> {
        let (store, recovery) = Store::open(&config.data_dir, config.linkage.clone(), config.snapshot_every)?;
        let mut audit = AuditLog::open(&config.data_dir)?;
        let audited = audit.last_event_seq();
        let mut outbox = Vec::new();
        for (record, outcome) in &recovery.tail {
            if record.seq > audited {
                audit.append(
                    record.at,
                    &record.actor,
                    record.event_type(),
                    &outcome.subject(),
                    OUTCOME_OK,
                    Some(record.seq),
                )?;
            }
            if let Some(n) = outcome.merge_event().and_then(|_| notification(store.registry(), outcome)) {
                outbox.push(n);
            }
        }
        Ok(Service {
            tokens: TokenService::new(config.clients, clock.clone()),
            inner: RwLock::new(Inner { store, audit, outbox }),
            clock,
        })
    }

    pub fn issue_token(&self, client_id: &str, secret: &str) -> Result<AccessToken, AuthError> {
        self.tokens.issue(client_id, secret)
    }

    pub fn authorize(&self, bearer: Option<&str>, scope: Scope) -> Result<Caller, AuthError> {
        self.tokens.authorize(bearer, scope)
    }

    pub(crate) fn read_inner(&self) -> RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|p| p.into_inner())
    }

    pub(crate) fn write_inner(&self) -> RwLockWriteGuard<'_, Inner> {
        self.inner.write().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs `f` against committed state.
    pub fn read<R>(&self, f: impl FnOnce(&Registry) -> R) -> R {
        f(self.read_inner().store.registry())
    }

    pub fn execute(&self, caller: &Caller, command: Command) -> Result<Outcome, ServiceError> {
        let mut inner = self.write_inner();
        self.commit_locked(&mut inner, &caller.client_id, command, |_| None)
    }

    /// Commits under the writer lock, then writes the one audit entry for
    /// the request, whether it was accepted or refused.
    pub(crate) fn commit_locked(
        &self,
        inner: &mut Inner,
        actor: &str,
        command: Command,
        receipt: impl FnOnce(&Outcome) -> Option<Receipt>,
    ) -> Result<Outcome, ServiceError> {
        let at = self.clock.now();
        let action = command.event_type();
        let hint = command.subject_hint();
        match inner.store.commit_with(actor, at, command, receipt) {
            Ok((outcome, seq)) => {
                if let Err(e) = inner.audit.append(at, actor, action, &outcome.subject(), OUTCOME_OK, Some(seq)) {
                    // The event is durable; reopening backfills this entry.
                    tracing::error!("audit write for event {seq} failed: {e}");
                }
                if let Some(n) = notification(inner.store.registry(), &outcome) {
                    inner.outbox.push(n);
                }
                if let Err(e) = inner.store.maybe_snapshot() {
                    tracing::warn!("snapshot failed: {e}");
                }
                Ok(outcome)
            }
            Err(CommitError::Rejected(e)) => {
                inner.audit.append(at, actor, action, &hint, e.code(), None).map_err(StoreError::from)?;
                Err(ServiceError::Rejected(e))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn search(&self, caller: &Caller, request: &SearchRequest) -> Result<Vec<SearchHit>, ServiceError> {
        Ok(self.read(|r| r.search(request, caller.has(Scope::Steward)))?)
    }

    /// Looks a PHN up, following merges to the survivor.
    pub fn patient(&self, caller: &Caller, phn: &str) -> Result<SearchHit, ServiceError> {
        let parsed = Phn::parse(phn).map_err(|e| RegistryError::FormatInvalid(e.to_string()))?;
        let request = SearchRequest {
            criteria: vec![(IdentifierKind::Phn, parsed.to_string())],
            fuzzy_name: None,
        };
        self.search(caller, &request)?
            .into_iter()
            .next()
            .ok_or_else(|| ServiceError::NotFound(format!("UNKNOWN_PHN: {parsed}")))
    }

    /// Runs the blocked duplicate scan and queues every candidate pair.
    pub fn scan(&self, caller: &Caller) -> Result<Outcome, ServiceError> {
        let mut inner = self.write_inner();
        let results = inner.store.registry().scan();
        self.commit_locked(&mut inner, &caller.client_id, Command::Enqueue { results, lenient: true }, |_| None)
    }

    pub fn audit_from(&self, from_seq: u64) -> Vec<AuditEntry> {
        self.read_inner().audit.from_seq(from_seq).to_vec()
    }

    pub fn audit_len(&self) -> usize {
        self.read_inner().audit.len()
    }

    pub fn event_count(&self) -> u64 {
        self.read_inner().store.last_seq()
    }

    pub fn snapshot(&self) -> String {
        self.read(Registry::snapshot)
    }

    /// A40 notifications generated since this process opened the store.
    pub fn outbox(&self) -> Vec<Notification> {
        self.read_inner().outbox.clone()
    }

    /// Forces a snapshot of the current state.
    pub fn checkpoint(&self) -> Result<(), StoreError> {
        self.write_inner().store.write_snapshot()
    }
}
