//! A blocking client for a running registry.

use anyhow::{bail, Context, Result};
use mpi_core::merge::ReviewItem;
use reqwest::blocking::{Client, Response};
use serde::Deserialize;
use serde_json::{json, Value};

pub struct Remote {
    base: String,
    http: Client,
    token: String,
}

#[derive(Deserialize)]
struct Queue {
    items: Vec<ReviewItem>,
}

fn ok(resp: Response) -> Result<Response> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.text().unwrap_or_default();
    bail!("{status}: {body}")
}

impl Remote {
    pub fn connect(base: &str, client_id: &str, secret: &str) -> Result<Remote> {
        let base = base.trim_end_matches('/').to_string();
        let http = Client::builder().build()?;
        let resp = http
            .post(format!("{base}/token"))
            .json(&json!({ "client_id": client_id, "client_secret": secret }))
            .send()
            .with_context(|| format!("connecting to {base}"))?;
        let body: Value = ok(resp)?.json()?;
        let token = body["access_token"].as_str().context("token response lacks access_token")?.to_string();
        Ok(Remote { base, http, token })
    }

    /// Posts one ER7 message and returns the ER7 reply.
    pub fn hl7(&self, er7: &str) -> Result<String> {
        let resp = self
            .http
            .post(format!("{}/hl7", self.base))
            .bearer_auth(&self.token)
            .header("content-type", "application/hl7-v2")
            .body(er7.to_string())
            .send()?;
        Ok(ok(resp)?.text()?)
    }

    pub fn scan(&self) -> Result<Value> {
        let resp = self
            .http
            .post(format!("{}/review-queue/scan", self.base))
            .bearer_auth(&self.token)
            .send()?;
        Ok(ok(resp)?.json()?)
    }

    pub fn queue(&self, all: bool) -> Result<Vec<ReviewItem>> {
        let state = if all { "ALL" } else { "PENDING" };
        let resp = self
            .http
            .get(format!("{}/review-queue?state={state}", self.base))
            .bearer_auth(&self.token)
            .send()?;
        let q: Queue = ok(resp)?.json()?;
        Ok(q.items)
    }
}
