//! Offline edits to the clients file. The server re-reads it on every
//! token request, so changes apply without a restart.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use mpi_service::auth::{ClientRecord, ClientTable, Scope};
use rand::rngs::OsRng;
use rand::RngCore;
use serde_json::json;

/// Changes are appended here, next to the clients file.
pub fn audit_path(clients_file: &Path) -> PathBuf {
    let mut name = clients_file.file_name().unwrap_or_default().to_os_string();
    name.push(".audit.log");
    clients_file.with_file_name(name)
}

fn audit(clients_file: &Path, at: DateTime<Utc>, action: &str, client_id: &str, scopes: &[Scope]) -> Result<()> {
    let scopes: Vec<&str> = scopes.iter().map(|s| s.as_str()).collect();
    let line = json!({ "at": at, "action": action, "client_id": client_id, "scopes": scopes });
    let mut f = OpenOptions::new().create(true).append(true).open(audit_path(clients_file))?;
    writeln!(f, "{line}")?;
    f.sync_data()?;
    Ok(())
}

pub fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c.is_control()) {
        bail!("client id {id:?} must be non-empty with no whitespace or control characters");
    }
    Ok(())
}

pub fn generate_secret() -> String {
    let mut bytes = [0u8; 24];
    OsRng.fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Adds or replaces a client.
pub fn add(clients_file: &Path, id: &str, secret: &str, scopes: &[Scope], at: DateTime<Utc>) -> Result<()> {
    validate_id(id)?;
    if secret.is_empty() {
        bail!("secret must not be empty");
    }
    let mut table = ClientTable::load(clients_file).with_context(|| format!("reading {}", clients_file.display()))?;
    table.upsert(ClientRecord::with_secret(id, secret, scopes.iter().copied()));
    table.save(clients_file)?;
    audit(clients_file, at, "CLIENT_ADD", id, scopes)
}

/// Removes a client. Tokens already issued stay valid until they expire.
pub fn remove(clients_file: &Path, id: &str, at: DateTime<Utc>) -> Result<()> {
    let mut table = ClientTable::load(clients_file)?;
    if !table.remove(id) {
        bail!("no client {id:?} in {}", clients_file.display());
    }
    table.save(clients_file)?;
    audit(clients_file, at, "CLIENT_RM", id, &[])
}
