//! Client credentials and opaque bearer tokens. Shares nothing with the
//! registry; handlers receive a verified [`Caller`] or nothing.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::Clock;

pub const TOKEN_TTL_SECS: i64 = 3600;
const TOKEN_BYTES: usize = 32;
const SALT_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scope {
    Read,
    Write,
    Steward,
    Admin,
}

impl Scope {
    pub const ALL: [Scope; 4] = [Scope::Read, Scope::Write, Scope::Steward, Scope::Admin];

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Read => "READ",
            Scope::Write => "WRITE",
            Scope::Steward => "STEWARD",
            Scope::Admin => "ADMIN",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scope {
    type Err = AuthError;

    fn from_str(s: &str) -> Result<Scope, AuthError> {
        Scope::ALL
            .into_iter()
            .find(|x| x.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| AuthError::ClientFile(format!("unknown scope {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("INVALID_CLIENT")]
    InvalidClient,
    #[error("MISSING_TOKEN")]
    MissingToken,
    #[error("INVALID_TOKEN")]
    InvalidToken,
    #[error("EXPIRED_TOKEN")]
    ExpiredToken,
    #[error("INSUFFICIENT_SCOPE: {0} required")]
    InsufficientScope(Scope),
    #[error("CLIENT_FILE: {0}")]
    ClientFile(String),
}

impl AuthError {
    pub fn code(&self) -> &'static str {
        match self {
            AuthError::InvalidClient => "INVALID_CLIENT",
            AuthError::MissingToken => "MISSING_TOKEN",
            AuthError::InvalidToken => "INVALID_TOKEN",
            AuthError::ExpiredToken => "EXPIRED_TOKEN",
            AuthError::InsufficientScope(_) => "INSUFFICIENT_SCOPE",
            AuthError::ClientFile(_) => "CLIENT_FILE",
        }
    }
}

fn hash_secret(salt: &[u8], secret: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(secret.as_bytes());
    h.finalize().into()
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// One registered API client. Only the salted hash of the secret is kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientRecord {
    pub client_id: String,
    salt: Vec<u8>,
    hash: Vec<u8>,
    pub scopes: BTreeSet<Scope>,
}

impl ClientRecord {
    pub fn with_secret(client_id: &str, secret: &str, scopes: impl IntoIterator<Item = Scope>) -> ClientRecord {
        let mut salt = vec![0u8; SALT_BYTES];
        OsRng.fill_bytes(&mut salt);
        let hash = hash_secret(&salt, secret).to_vec();
        ClientRecord {
            client_id: client_id.to_string(),
            salt,
            hash,
            scopes: scopes.into_iter().collect(),
        }
    }

    fn verify(&self, secret: &str) -> bool {
        constant_time_eq(&hash_secret(&self.salt, secret), &self.hash)
    }
}

/// The clients file: `client_id<TAB>salt_hex<TAB>sha256(salt||secret)_hex<TAB>SCOPE,SCOPE`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientTable {
    clients: BTreeMap<String, ClientRecord>,
}

impl ClientTable {
    pub fn parse(text: &str) -> Result<ClientTable, AuthError> {
        let mut table = ClientTable::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: &str| AuthError::ClientFile(format!("line {}: {why}", n + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad("expected 4 tab-separated columns"));
            }
            let salt = hex::decode(cols[1]).map_err(|_| bad("salt is not hex"))?;
            let hash = hex::decode(cols[2]).map_err(|_| bad("hash is not hex"))?;
            if hash.len() != 32 {
                return Err(bad("hash must be 32 bytes"));
            }
            let scopes = cols[3]
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(Scope::from_str)
                .collect::<Result<BTreeSet<_>, _>>()
                .map_err(|e| bad(&e.to_string()))?;
            let record = ClientRecord {
                client_id: cols[0].to_string(),
                salt,
                hash,
                scopes,
            };
            if table.clients.insert(record.client_id.clone(), record).is_some() {
                return Err(bad("duplicate client id"));
            }
        }
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        self.clients
            .values()
            .map(|c| {
                let scopes: Vec<&str> = c.scopes.iter().map(|s| s.as_str()).collect();
                format!("{}\t{}\t{}\t{}\n", c.client_id, hex::encode(&c.salt), hex::encode(&c.hash), scopes.join(","))
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<ClientTable, AuthError> {
        match std::fs::read_to_string(path) {
            Ok(text) => ClientTable::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ClientTable::default()),
            Err(e) => Err(AuthError::ClientFile(format!("{}: {e}", path.display()))),
        }
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<(), AuthError> {
        let tmp = path.with_extension("tmp");
        let err = |e: std::io::Error| AuthError::ClientFile(format!("{}: {e}", path.display()));
        std::fs::write(&tmp, self.to_text()).map_err(err)?;
        std::fs::rename(&tmp, path).map_err(err)
    }

    pub fn get(&self, client_id: &str) -> Option<&ClientRecord> {
        self.clients.get(client_id)
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    /// Adds or replaces a client.
    pub fn upsert(&mut self, record: ClientRecord) {
        self.clients.insert(record.client_id.clone(), record);
    }

    pub fn remove(&mut self, client_id: &str) -> bool {
        self.clients.remove(client_id).is_some()
    }
}

/// Where the token service reads clients from. A file source is re-read on
/// every token request, so `mpi client add|rm` takes effect without restart.
#[derive(Debug, Clone)]
pub enum ClientSource {
    Fixed(ClientTable),
    File(PathBuf),
}

impl ClientSource {
    fn table(&self) -> Result<ClientTable, AuthError> {
        match self {
            ClientSource::Fixed(t) => Ok(t.clone()),
            ClientSource::File(p) => ClientTable::load(p),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Serialize)]
pub struct AccessToken {
    pub token: String,
    pub client_id: String,
    pub scopes: BTreeSet<Scope>,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

impl fmt::Debug for AccessToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AccessToken")
            .field("token", &"<redacted>")
            .field("client_id", &self.client_id)
            .field("scopes", &self.scopes)
            .field("expires_at", &self.expires_at)
            .finish()
    }
}

/// The verified identity behind a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caller {
    pub client_id: String,
    pub scopes: BTreeSet<Scope>,
}

impl Caller {
    pub fn has(&self, scope: Scope) -> bool {
        self.scopes.contains(&scope)
    }
}

pub struct TokenService {
    clients: ClientSource,
    tokens: Mutex<HashMap<String, AccessToken>>,
    clock: Arc<dyn Clock>,
    // Compared against when the client id is unknown, so both failure paths
    // hash and compare the same amount.
    dummy: ClientRecord,
}

impl TokenService {
    pub fn new(clients: ClientSource, clock: Arc<dyn Clock>) -> TokenService {
        TokenService {
            clients,
            tokens: Mutex::new(HashMap::new()),
            clock,
            dummy: ClientRecord::with_secret("", "", []),
        }
    }

    pub fn issue(&self, client_id: &str, secret: &str) -> Result<AccessToken, AuthError> {
        let table = self.clients.table()?;
        let (record, known) = match table.get(client_id) {
            Some(r) => (r, true),
            None => (&self.dummy, false),
        };
        if !(record.verify(secret) & known) {
            return Err(AuthError::InvalidClient);
        }
        let mut raw = [0u8; TOKEN_BYTES];
        OsRng.fill_bytes(&mut raw);
        let issued_at = self.clock.now();
        let token = AccessToken {
            token: hex::encode(raw),
            client_id: record.client_id.clone(),
            scopes: record.scopes.clone(),
            issued_at,
            expires_at: issued_at + Duration::seconds(TOKEN_TTL_SECS),
        };
        let mut tokens = self.tokens.lock().expect("token table lock");
        // Expired tokens linger one more TTL so their callers hear EXPIRED_TOKEN.
        let horizon = issued_at - Duration::seconds(TOKEN_TTL_SECS);
        tokens.retain(|_, t| t.expires_at > horizon);
        tokens.insert(token.token.clone(), token.clone());
        Ok(token)
    }

    /// Checks a bearer value and the scope the operation needs.
    pub fn authorize(&self, bearer: Option<&str>, scope: Scope) -> Result<Caller, AuthError> {
        let bearer = bearer.filter(|b| !b.is_empty()).ok_or(AuthError::MissingToken)?;
        let tokens = self.tokens.lock().expect("token table lock");
        let token = tokens.get(bearer).ok_or(AuthError::InvalidToken)?;
        if self.clock.now() >= token.expires_at {
            return Err(AuthError::ExpiredToken);
        }
        if !token.scopes.contains(&scope) {
            return Err(AuthError::InsufficientScope(scope));
        }
        Ok(Caller {
            client_id: token.client_id.clone(),
            scopes: token.scopes.clone(),
        })
    }
}
