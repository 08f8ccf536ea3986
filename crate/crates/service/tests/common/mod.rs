#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{DateTime, TimeZone, Utc};
use http_body_util::BodyExt;
use mpi_service::auth::{ClientRecord, ClientSource, ClientTable, Scope};
use mpi_service::clock::ManualClock;
use mpi_service::http::router;
use mpi_service::{Service, ServiceConfig};
use serde_json::Value;
use tower::ServiceExt;

pub const SECRET: &str = "correct horse";

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 6, 1, 8, 0, 0).unwrap()
}

pub fn clients() -> ClientTable {
    let mut t = ClientTable::default();
    t.upsert(ClientRecord::with_secret("hims", SECRET, [Scope::Read, Scope::Write]));
    t.upsert(ClientRecord::with_secret("steward", SECRET, [Scope::Read, Scope::Steward]));
    t.upsert(ClientRecord::with_secret("admin", SECRET, [Scope::Admin]));
    t.upsert(ClientRecord::with_secret("reader", SECRET, [Scope::Read]));
    t.upsert(ClientRecord::with_secret("nobody", SECRET, []));
    t
}

pub struct Harness {
    pub service: Arc<Service>,
    pub clock: Arc<ManualClock>,
    pub app: Router,
}

pub fn open(dir: &Path, clock: Arc<ManualClock>, snapshot_every: u64) -> Harness {
    let mut config = ServiceConfig::new(dir, ClientSource::Fixed(clients()));
    config.snapshot_every = snapshot_every;
    let service = Arc::new(Service::open(config, clock.clone()).expect("service opens"));
    Harness {
        app: router(service.clone()),
        service,
        clock,
    }
}

pub fn harness(dir: &Path) -> Harness {
    open(dir, Arc::new(ManualClock::new(t0())), 50)
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.text()))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

pub async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, content_type: &str, body: Vec<u8>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    if !content_type.is_empty() {
        req = req.header("content-type", content_type);
    }
    let resp = app.clone().oneshot(req.body(Body::from(body)).unwrap()).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string());
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        body,
    }
}

pub async fn json(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Value) -> Reply {
    let bytes = if body.is_null() { Vec::new() } else { serde_json::to_vec(&body).unwrap() };
    call(app, method, uri, token, "application/json", bytes).await
}

pub async fn token(app: &Router, client: &str) -> String {
    let r = json(
        app,
        "POST",
        "/token",
        None,
        serde_json::json!({ "client_id": client, "client_secret": SECRET }),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    r.json()["access_token"].as_str().unwrap().to_string()
}

pub fn profile(family: &str, given: &str, dob: &str) -> Value {
    serde_json::json!({
        "family_name": family,
        "given_names": [given],
        "date_of_birth": dob,
        "sex": "F",
        "address_lines": ["12 Temple Road", "Kandy"],
        "anonymity_requested": false,
    })
}

pub fn nic(value: &str) -> Value {
    serde_json::json!({ "kind": "NIC", "value": value })
}

/// Registers and returns the new PHN.
pub async fn register(app: &Router, token: &str, family: &str, dob: &str, ids: Vec<Value>) -> String {
    let r = json(
        app,
        "POST",
        "/patients",
        Some(token),
        serde_json::json!({ "profile": profile(family, "Nirmala", dob), "identifiers": ids }),
    )
    .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
    r.json()["record"]["phn"].as_str().unwrap().to_string()
}

/// An ER7 ADT^A04 with the given control id and PID-3.
pub fn a04(control: &str, pid3: &str, family: &str) -> String {
    format!(
        "MSH|^~\\&|HHIMS|HOSP1|MPI|MOH|20240601080000||ADT^A04|{control}|P|2.5\rEVN|A04|20240601080000\rPID|1||{pid3}||{family}^Kamal||19850512|M|||5 Galle Road^Colombo\r"
    )
}

pub fn a08(control: &str, pid3: &str, family: &str) -> String {
    a04(control, pid3, family).replace("ADT^A04", "ADT^A08").replace("EVN|A04", "EVN|A08")
}

pub fn a40(control: &str, survivor: &str, retired: &str) -> String {
    format!(
        "MSH|^~\\&|HHIMS|HOSP1|MPI|MOH|20240601080000||ADT^A40|{control}|P|2.5\rEVN|A40|20240601080000\rPID|1||{survivor}^^^MPI^PHN||Perera^Kamal||19850512|M\rMRG|{retired}\r"
    )
}

pub fn qbp(control: &str, nic: &str) -> String {
    format!(
        "MSH|^~\\&|HHIMS|HOSP1|MPI|MOH|20240601080000||QBP^Q22|{control}|P|2.5\rQPD|Q22^Find Candidates^HL7|Q1|@PID.3^{nic}^NI\rRCP|I\r"
    )
}

pub async fn hl7(app: &Router, token: Option<&str>, message: &str) -> Reply {
    call(app, "POST", "/hl7", token, "application/hl7-v2", message.as_bytes().to_vec()).await
}

/// MSA-1 and MSA-3 of an ER7 reply.
pub fn msa(reply: &Reply) -> (String, String) {
    let text = reply.text();
    let line = text.split('\r').find(|s| s.starts_with("MSA|")).unwrap_or_else(|| panic!("no MSA in {text:?}"));
    let f: Vec<&str> = line.split('|').collect();
    (f.get(1).unwrap_or(&"").to_string(), f.get(3).unwrap_or(&"").to_string())
}
