//! Acceptance gate. One PASS/FAIL line per criterion; exits non-zero if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command as Process, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use chrono::{Datelike, TimeZone, Utc};
use mpi_cli::corpus::{generate_corpus, CorruptionSpec};
use mpi_cli::eval::Label;
use mpi_cli::{clients, pipeline};
use mpi_core::hl7::{emit_er7, emit_xml, parse_er7, parse_er7_bytes, parse_xml};
use mpi_core::identity::{validate_phn, DemographicProfile, IdentifierKind, PatientRecord, Phn};
use mpi_core::matching::{score_pair, Decision, LinkageConfig};
use mpi_core::registry::{Command, Outcome, Registry};
use mpi_core::simulate::simulate;
use mpi_service::auth::{ClientRecord, ClientSource, ClientTable, Scope};
use mpi_service::clock::ManualClock;
use mpi_service::store::Store;
use mpi_service::{Service, ServiceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::blocking::Client;
use serde_json::{json, Value};

const LUHN_BASES: u64 = 10_000;
const LUHN_MAX_RUNTIME: Duration = Duration::from_secs(60);
const HL7_CORPUS_SIZE: usize = 50;
const FUZZ_INPUTS: usize = 10_000;
const FUZZ_SEED: u64 = 0x4d50_4931;
const LINKAGE_N: usize = 1000;
const LINKAGE_DUPLICATE_RATE: f64 = 0.1;
const LINKAGE_SEED: u64 = 42;
const RECALL_MIN: f64 = 0.90;
const PRECISION_MIN: f64 = 0.95;
const LINKAGE_MAX_RUNTIME: Duration = Duration::from_secs(120);
const BLOCKING_REGISTRY_SIZE: usize = 200;
const BLOCKING_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const MERGE_SEEDS: u64 = 100;
const MERGE_OPS: usize = 500;
const TOKEN_TTL_SECS: i64 = 3600;
const KILL_AFTER_ACKS: usize = 200;
const SECRET: &str = "acceptance secret";

type Verdict = Result<String, String>;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

// ---- PHN check digit ----------------------------------------------------

fn luhn() -> Verdict {
    let start = Instant::now();
    let mut substitutions = 0u64;
    let mut transpositions = 0u64;
    let mut undetected: BTreeSet<(u8, u8)> = BTreeSet::new();
    let mut nine_zero_caught = 0u64;
    for base in 0..LUHN_BASES {
        let phn = Phn::from_sequence(base).map_err(|e| e.to_string())?;
        let digits: Vec<u8> = phn.as_str().bytes().collect();
        check(validate_phn(phn.as_str()), || format!("{phn} fails its own check"))?;
        for pos in 0..digits.len() {
            for d in b'0'..=b'9' {
                if d != digits[pos] {
                    let mut m = digits.clone();
                    m[pos] = d;
                    substitutions += 1;
                    let s = String::from_utf8(m).unwrap();
                    check(!validate_phn(&s), || format!("substitution {s} of {phn} accepted"))?;
                }
            }
        }
        for pos in 0..digits.len() - 1 {
            let (a, b) = (digits[pos], digits[pos + 1]);
            if a == b {
                continue;
            }
            let mut m = digits.clone();
            m.swap(pos, pos + 1);
            transpositions += 1;
            let pair = (a.min(b) - b'0', a.max(b) - b'0');
            if validate_phn(std::str::from_utf8(&m).unwrap()) {
                undetected.insert(pair);
            } else if pair == (0, 9) {
                nine_zero_caught += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    check(undetected == BTreeSet::from([(0, 9)]), || format!("undetected transposition set {undetected:?}"))?;
    check(nine_zero_caught == 0, || format!("{nine_zero_caught} 0/9 swaps were caught; Luhn never catches them"))?;
    check(elapsed < LUHN_MAX_RUNTIME, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{substitutions} substitutions all rejected; {transpositions} transpositions, only {{0,9}} undetected; {elapsed:.1?}"
    ))
}

// ---- HL7 round trip and fuzz --------------------------------------------

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/corpus")
}

fn hl7_corpus() -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(corpus_dir())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "er7"))
        .collect();
    files.sort();
    Ok(files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect())
}

/// Parses and, when that succeeds, re-emits. Errors are fine; panics are not.
fn exercise(bytes: &[u8]) -> Result<(), String> {
    if let Ok(m) = parse_er7_bytes(bytes) {
        let text = emit_er7(&m);
        let again = parse_er7(&text).map_err(|e| format!("emitted ER7 does not re-parse: {e}"))?;
        check(emit_er7(&again) == text, || "emit is not a fixed point".into())?;
    }
    if let Ok(m) = parse_xml(bytes) {
        let again = parse_xml(emit_xml(&m).as_bytes()).map_err(|e| format!("emitted XML does not re-parse: {e}"))?;
        check(again == m, || "XML round trip changed the tree".into())?;
    }
    Ok(())
}

fn hl7() -> Verdict {
    let corpus = hl7_corpus()?;
    check(corpus.len() == HL7_CORPUS_SIZE, || format!("corpus has {} messages", corpus.len()))?;
    let mut kinds = BTreeSet::new();
    for (name, bytes) in &corpus {
        let text = std::str::from_utf8(bytes).map_err(|e| format!("{name}: {e}"))?;
        let m = parse_er7(text).map_err(|e| format!("{name}: {e}"))?;
        kinds.insert(format!("{:?}", m.kind().map_err(|e| format!("{name}: {e}"))?));
        check(emit_er7(&m) == text, || format!("{name}: ER7 round trip not byte-identical"))?;
        let back = parse_xml(emit_xml(&m).as_bytes()).map_err(|e| format!("{name}: {e}"))?;
        check(back == m, || format!("{name}: XML and ER7 trees differ"))?;
    }
    check(kinds.len() == 6, || format!("corpus covers {kinds:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(FUZZ_SEED);
    let header = b"MSH|^~\\&|A|B|C|D|20240101||ADT^A04|X|P|2.5\r";
    let quiet = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut crashes = Vec::new();
    let mut parsed = 0;
    for i in 0..FUZZ_INPUTS {
        let mut bytes: Vec<u8> = match i % 4 {
            0 => Vec::new(),
            1 => header.to_vec(),
            2 => b"<?xml version=\"1.0\"?><HL7Message><MSH>".to_vec(),
            _ => corpus[rng.gen_range(0..corpus.len())].1.clone(),
        };
        if i % 4 == 3 {
            for _ in 0..rng.gen_range(1..8) {
                let pos = rng.gen_range(0..=bytes.len());
                // Mostly bytes the parser cares about, so mutants get past the first check.
                const INTERESTING: &[u8] = b"|^~\\&\rMSHPIDX0A9 <>/";
                let b = if rng.gen_bool(0.7) { INTERESTING[rng.gen_range(0..INTERESTING.len())] } else { rng.gen::<u8>() };
                if pos == bytes.len() {
                    bytes.push(b);
                } else {
                    bytes[pos] = b;
                }
            }
        } else {
            let len = rng.gen_range(0..512);
            bytes.extend((0..len).map(|_| rng.gen::<u8>()));
        }
        if parse_er7_bytes(&bytes).is_ok() {
            parsed += 1;
        }
        match panic::catch_unwind(|| exercise(&bytes)) {
            Ok(Ok(())) => {}
            Ok(Err(e)) => crashes.push(format!("input {i}: {e}")),
            Err(_) => crashes.push(format!("input {i}: panic")),
        }
    }
    panic::set_hook(quiet);
    check(crashes.is_empty(), || format!("{} fuzz failures, first {}", crashes.len(), crashes[0]))?;
    Ok(format!(
        "{HL7_CORPUS_SIZE} golden messages byte-identical, XML trees equal; {FUZZ_INPUTS} fuzz inputs, 0 crashes ({parsed} parsed)"
    ))
}

// ---- Linkage quality ----------------------------------------------------

fn linkage() -> Verdict {
    let shipped = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/comparators.tsv"))
        .map_err(|e| e.to_string())?;
    let config = LinkageConfig::parse(&shipped).map_err(|e| e.to_string())?;
    check(config == LinkageConfig::default(), || "shipped comparator config differs from the default".into())?;

    let spec = CorruptionSpec::new(LINKAGE_DUPLICATE_RATE, LINKAGE_SEED);
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = pipeline::run(LINKAGE_N, &spec, config.clone(), dir.path()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let e = &run.evaluation;

    let again_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let again = pipeline::run(LINKAGE_N, &spec, config, again_dir.path()).map_err(|e| e.to_string())?;
    check(again.predictions == run.predictions && again.evaluation == *e, || {
        "second identical run gave different results".into()
    })?;

    let intake = run.predictions.iter().filter(|p| p.label == Label::DuplicateIdentifier).count();
    let scanned = run.predictions.iter().filter(|p| p.label == Label::Match).count();
    let summary = format!(
        "n={LINKAGE_N} rate={LINKAGE_DUPLICATE_RATE} seed={LINKAGE_SEED}: {e}; {intake} found at intake by identifier, {scanned} MATCH from scan, {} POSSIBLE left for review; missed {:?}; {elapsed:.1?}",
        run.predictions.iter().filter(|p| p.label == Label::Possible).count(),
        e.missed
    );
    check(e.recall >= RECALL_MIN, || format!("recall below {RECALL_MIN}: {summary}"))?;
    check(e.precision >= PRECISION_MIN && !e.precision_undefined, || format!("precision below {PRECISION_MIN}: {summary}"))?;
    check(elapsed < LINKAGE_MAX_RUNTIME, || format!("too slow: {summary}"))?;
    Ok(summary)
}

// ---- Blocking soundness -------------------------------------------------

/// American Soundex over the ASCII letters of the name.
fn oracle_soundex(name: &str) -> Option<String> {
    let code = |c: char| match c {
        'B' | 'F' | 'P' | 'V' => Some('1'),
        'C' | 'G' | 'J' | 'K' | 'Q' | 'S' | 'X' | 'Z' => Some('2'),
        'D' | 'T' => Some('3'),
        'L' => Some('4'),
        'M' | 'N' => Some('5'),
        'R' => Some('6'),
        _ => None,
    };
    let letters: Vec<char> = name.chars().filter(char::is_ascii_alphabetic).map(|c| c.to_ascii_uppercase()).collect();
    let first = *letters.first()?;
    let mut out = vec![first];
    let mut prev = code(first);
    for &c in &letters[1..] {
        let d = code(c);
        if d.is_some() && d != prev {
            out.push(d.unwrap());
        }
        if c != 'H' && c != 'W' {
            prev = d;
        }
    }
    out.resize(4, '0');
    Some(out.into_iter().take(4).collect())
}

fn oracle_keys(p: &DemographicProfile, nic: Option<&str>) -> BTreeSet<String> {
    let mut keys = BTreeSet::new();
    if let Some(nic) = nic {
        keys.insert(format!("nic:{nic}"));
    }
    if let Some(s) = oracle_soundex(&p.family_name) {
        keys.insert(format!("sx:{s}:{}", p.date_of_birth.year()));
    }
    keys.insert(format!("dob:{}", p.date_of_birth));
    keys
}

fn blocking() -> Verdict {
    let mut compared = 0;
    let mut blocked_pairs = 0;
    let mut missed_truth = Vec::new();
    let mut scored_outside = 0;
    for seed in BLOCKING_SEEDS {
        let n = (1..BLOCKING_REGISTRY_SIZE)
            .rev()
            .find(|n| n + (*n as f64 * LINKAGE_DUPLICATE_RATE).ceil() as usize == BLOCKING_REGISTRY_SIZE)
            .expect("some base count yields the registry size");
        let corpus = generate_corpus(n, &CorruptionSpec::new(LINKAGE_DUPLICATE_RATE, seed)).map_err(|e| e.to_string())?;
        let config = LinkageConfig::default();
        let mut reg = Registry::new(config.clone());
        let mut phn_of = BTreeMap::new();
        let at = Utc.with_ymd_and_hms(2024, 6, 1, 8, 0, 0).unwrap();
        for r in &corpus.records {
            let stripped = r.identifiers.iter().filter(|i| i.kind != IdentifierKind::Nic);
            // Keep NIC collisions in the registry so the NIC block is exercised.
            let ids = if reg.records().values().any(|x| r.nic().is_some_and(|n| x.identifiers.contains(n))) {
                stripped.cloned().collect()
            } else {
                r.identifiers.clone()
            };
            let cmd = Command::Register {
                profile: r.profile.clone(),
                identifiers: ids,
                guardian_reason: None,
            };
            match reg.apply("acceptance", at, cmd) {
                Ok(Outcome::Registered { record }) => {
                    phn_of.insert(r.id.clone(), record.phn);
                }
                other => return Err(format!("seed {seed}: {} not registered: {other:?}", r.id)),
            }
        }
        check(reg.records().len() == BLOCKING_REGISTRY_SIZE, || format!("registry of {}", reg.records().len()))?;

        let records: Vec<_> = reg.records().values().collect();
        let keys: Vec<BTreeSet<String>> = records
            .iter()
            .map(|r| {
                let nic = r.identifiers.iter().find(|i| i.kind == IdentifierKind::Nic);
                oracle_keys(&r.profile, nic.map(|i| i.value.as_str()))
            })
            .collect();
        let mut oracle = Vec::new();
        for i in 0..records.len() {
            for j in i + 1..records.len() {
                compared += 1;
                let r = score_pair(&config.comparators, records[i], records[j], &config.thresholds).map_err(|e| e.to_string())?;
                if keys[i].is_disjoint(&keys[j]) {
                    if r.decision != Decision::NonMatch {
                        scored_outside += 1;
                    }
                    continue;
                }
                blocked_pairs += 1;
                if r.decision != Decision::NonMatch {
                    oracle.push((r.ordered_pair(), r.total.to_bits(), r.decision));
                }
            }
        }
        let mut scan: Vec<_> = reg.scan().into_iter().map(|r| (r.ordered_pair(), r.total.to_bits(), r.decision)).collect();
        oracle.sort();
        scan.sort();
        check(scan == oracle, || format!("seed {seed}: scan {} results, exhaustive {}", scan.len(), oracle.len()))?;

        for (a, b) in &corpus.truth {
            let (ra, rb) = (&reg.records()[&phn_of[a]], &reg.records()[&phn_of[b]]);
            let nic = |r: &PatientRecord| {
                r.identifiers.iter().find(|i| i.kind == IdentifierKind::Nic).map(|i| i.value.clone())
            };
            if oracle_keys(&ra.profile, nic(ra).as_deref()).is_disjoint(&oracle_keys(&rb.profile, nic(rb).as_deref())) {
                missed_truth.push(format!("seed {seed}: {a}/{b}"));
            }
        }
    }
    Ok(format!(
        "{} registries of {BLOCKING_REGISTRY_SIZE}: scan equals exhaustive scoring over {blocked_pairs} blocked of {compared} pairs; {scored_outside} unblocked pairs would have scored above NON_MATCH; ground-truth pairs missed by blocking: {} {:?}",
        BLOCKING_SEEDS.len(),
        missed_truth.len(),
        missed_truth
    ))
}

// ---- Merge properties ---------------------------------------------------

fn merges() -> Verdict {
    let start = Instant::now();
    let (mut merges, mut unmerges, mut searched, mut longest) = (0, 0, 0, 0);
    for seed in 0..MERGE_SEEDS {
        let report = simulate(seed, MERGE_OPS);
        check(report.ok(), || format!("seed {seed}: {:?}", report.violations))?;
        check(report.attempted == MERGE_OPS, || format!("seed {seed}: {} ops", report.attempted))?;
        merges += report.merges;
        unmerges += report.unmerges;
        searched += report.retired_searched;
        longest = longest.max(report.longest_chain);
    }
    check(merges > 0 && unmerges > 0, || "workload never merged or unmerged".into())?;
    Ok(format!(
        "{MERGE_SEEDS} seeds x {MERGE_OPS} ops: {merges} merges, {unmerges} unmerges, longest chain {longest}, {searched} retired-PHN searches reached survivors; replay byte-identical; {:.1?}",
        start.elapsed()
    ))
}

// ---- Service contract ---------------------------------------------------

struct InProcess {
    base: String,
    service: Arc<Service>,
    clock: Arc<ManualClock>,
    _dir: tempfile::TempDir,
}

fn client_table() -> ClientTable {
    let mut t = ClientTable::default();
    t.upsert(ClientRecord::with_secret("hims", SECRET, [Scope::Read, Scope::Write]));
    t.upsert(ClientRecord::with_secret("steward", SECRET, [Scope::Read, Scope::Steward]));
    t.upsert(ClientRecord::with_secret("admin", SECRET, [Scope::Admin]));
    t.upsert(ClientRecord::with_secret("nobody", SECRET, []));
    t
}

/// The real HTTP stack on a loopback port, with a clock the test controls.
fn in_process(start: chrono::DateTime<Utc>) -> Result<InProcess, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let clock = Arc::new(ManualClock::new(start));
    let service = Arc::new(
        Service::open(ServiceConfig::new(dir.path(), ClientSource::Fixed(client_table())), clock.clone())
            .map_err(|e| e.to_string())?,
    );
    let (tx, rx) = std::sync::mpsc::channel();
    let svc = service.clone();
    thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            mpi_service::http::serve(svc, listener, std::future::pending()).await.unwrap();
        });
    });
    let addr = rx.recv_timeout(Duration::from_secs(10)).map_err(|e| e.to_string())?;
    Ok(InProcess {
        base: format!("http://{addr}"),
        service,
        clock,
        _dir: dir,
    })
}

struct Http {
    base: String,
    client: Client,
}

impl Http {
    fn new(base: &str) -> Http {
        Http {
            base: base.to_string(),
            client: Client::builder().timeout(Duration::from_secs(10)).build().unwrap(),
        }
    }

    fn token(&self, id: &str) -> Result<String, String> {
        let r = self
            .client
            .post(format!("{}/token", self.base))
            .json(&json!({ "client_id": id, "client_secret": SECRET }))
            .send()
            .map_err(|e| e.to_string())?;
        let v: Value = r.json().map_err(|e| e.to_string())?;
        v["access_token"].as_str().map(str::to_string).ok_or(format!("no token for {id}: {v}"))
    }

    fn send(&self, method: &str, path: &str, token: Option<&str>, body: &Value) -> Result<(u16, Value), String> {
        let mut req = self.client.request(method.parse().unwrap(), format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if !body.is_null() {
            req = req.json(body);
        }
        let r = req.send().map_err(|e| e.to_string())?;
        let status = r.status().as_u16();
        let text = r.text().map_err(|e| e.to_string())?;
        Ok((status, serde_json::from_str(&text).unwrap_or(Value::String(text))))
    }

    fn hl7(&self, token: Option<&str>, msg: &str) -> Result<Vec<u8>, String> {
        let mut req = self.client.post(format!("{}/hl7", self.base)).header("content-type", "application/hl7-v2");
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let r = req.body(msg.to_string()).send().map_err(|e| e.to_string())?;
        Ok(r.bytes().map_err(|e| e.to_string())?.to_vec())
    }
}

fn profile(family: &str, dob: &str) -> Value {
    json!({ "family_name": family, "given_names": ["Nimal"], "date_of_birth": dob, "sex": "M", "address_lines": ["3 Lake Road", "Kandy"] })
}

fn a04(control: &str, nic: &str) -> String {
    format!(
        "MSH|^~\\&|HHIMS|HOSP1|MPI|MOH|20240601080000||ADT^A04|{control}|P|2.5\rEVN|A04|20240601080000\rPID|1||{nic}^^^DRP^NI||Perera^Kamal||19850512|M\r"
    )
}

fn msa1(reply: &[u8]) -> String {
    let text = String::from_utf8_lossy(reply);
    text.split('\r')
        .find(|s| s.starts_with("MSA|"))
        .and_then(|s| s.split('|').nth(1))
        .unwrap_or("")
        .to_string()
}

fn token_rejection(h: &InProcess) -> Result<usize, String> {
    let http = Http::new(&h.base);
    let hims = http.token("hims")?;
    let (s, a) = http.send("POST", "/patients", Some(&hims), &json!({ "profile": profile("Silva", "1980-02-02") }))?;
    check(s == 201, || format!("setup register {s}"))?;
    let (_, b) = http.send("POST", "/patients", Some(&hims), &json!({ "profile": profile("Dias", "1979-03-03") }))?;
    let (a, b) = (a["record"]["phn"].as_str().unwrap().to_string(), b["record"]["phn"].as_str().unwrap().to_string());
    let endpoints: Vec<(&str, String, Value, &str)> = vec![
        ("POST", "/patients".into(), json!({ "profile": profile("Dias", "1990-01-01") }), "WRITE"),
        ("GET", format!("/patients/{a}"), Value::Null, "READ"),
        ("PUT", format!("/patients/{a}"), json!({ "changes": { "family_name": "Fonseka" }, "expected_version": 1 }), "WRITE"),
        ("POST", "/patients/search".into(), json!({ "criteria": [{ "kind": "PHN", "value": a }] }), "READ"),
        ("POST", format!("/patients/{a}/deceased"), json!({ "deceased_on": "2024-05-01" }), "WRITE"),
        ("POST", format!("/patients/{a}/guardian"), json!({ "guardian": b, "reason": "MINOR" }), "WRITE"),
        ("GET", "/review-queue".into(), Value::Null, "STEWARD"),
        ("POST", "/review-queue/scan".into(), Value::Null, "STEWARD"),
        ("POST", "/review-queue/RV00000001/decision".into(), json!({ "decision": "APPROVE", "survivor": a }), "STEWARD"),
        ("POST", "/merges".into(), json!({ "survivor": a, "retired": b }), "STEWARD"),
        ("POST", "/merges/MG00000001/unmerge".into(), Value::Null, "STEWARD"),
        ("POST", "/admin/purge".into(), Value::Null, "ADMIN"),
        ("GET", "/audit?from_seq=1".into(), Value::Null, "ADMIN"),
    ];
    let lacking = |scope: &str| match scope {
        "READ" => "nobody",
        "WRITE" => "steward",
        _ => "hims",
    };
    let mut tokens: BTreeMap<&str, String> = BTreeMap::new();
    for id in ["hims", "steward", "admin", "nobody"] {
        tokens.insert(id, http.token(id)?);
    }
    let before = (h.service.snapshot(), h.service.event_count(), h.service.audit_len());
    let mut checked = 0;
    let expect = |got: (u16, Value), status: u16, code: &str, what: &str| -> Result<(), String> {
        check(got.0 == status && got.1["error"] == code, || format!("{what}: {} {}", got.0, got.1))
    };
    for (method, path, body, scope) in &endpoints {
        let what = |case: &str| format!("{method} {path} {case}");
        expect(http.send(method, path, None, body)?, 401, "MISSING_TOKEN", &what("missing"))?;
        expect(http.send(method, path, Some("not-a-token"), body)?, 401, "INVALID_TOKEN", &what("garbage"))?;
        expect(http.send(method, path, Some(&tokens[lacking(scope)]), body)?, 403, "INSUFFICIENT_SCOPE", &what("wrong scope"))?;
        checked += 3;
    }
    for (token, case) in [(None, "missing"), (Some("not-a-token"), "garbage"), (Some(tokens["steward"].as_str()), "wrong scope")] {
        let code = msa1(&http.hl7(token, &a04("AUTH1", "801231234V"))?);
        check(code == "AR", || format!("/hl7 {case}: MSA-1 {code}"))?;
        checked += 1;
    }
    h.clock.advance(chrono::Duration::seconds(TOKEN_TTL_SECS));
    for (method, path, body, scope) in &endpoints {
        let holder = match *scope {
            "READ" | "WRITE" => "hims",
            "STEWARD" => "steward",
            _ => "admin",
        };
        expect(http.send(method, path, Some(&tokens[holder]), body)?, 401, "EXPIRED_TOKEN", &format!("{method} {path} expired"))?;
        checked += 1;
    }
    let code = msa1(&http.hl7(Some(&tokens["hims"]), &a04("AUTH2", "801231234V"))?);
    check(code == "AR", || format!("/hl7 expired: MSA-1 {code}"))?;
    checked += 1;
    let after = (h.service.snapshot(), h.service.event_count(), h.service.audit_len());
    check(before == after, || "a refused request changed state or the audit log".into())?;
    Ok(checked)
}

fn idempotent_intake(h: &InProcess) -> Result<(), String> {
    let http = Http::new(&h.base);
    let hims = http.token("hims")?;
    let first = http.hl7(Some(&hims), &a04("IDEM-1", "812341234V"))?;
    check(msa1(&first) == "AA", || format!("first A04 not accepted: {}", String::from_utf8_lossy(&first)))?;
    let state = (h.service.snapshot(), h.service.event_count());
    h.clock.advance(chrono::Duration::seconds(30));
    let second = http.hl7(Some(&hims), &a04("IDEM-1", "812341234V"))?;
    check(first == second, || "replayed ACK differs".into())?;
    check(state == (h.service.snapshot(), h.service.event_count()), || "replay changed state".into())
}

fn purge_boundary(h: &InProcess) -> Result<(), String> {
    let http = Http::new(&h.base);
    let hims = http.token("hims")?;
    let register = |family: &str, died: &str| -> Result<String, String> {
        let (_, r) = http.send("POST", "/patients", Some(&hims), &json!({ "profile": profile(family, "1930-01-01") }))?;
        let phn = r["record"]["phn"].as_str().ok_or(format!("register: {r}"))?.to_string();
        let (s, r) = http.send("POST", &format!("/patients/{phn}/deceased"), Some(&hims), &json!({ "deceased_on": died }))?;
        check(s == 200, || format!("deceased: {s} {r}"))?;
        Ok(phn)
    };
    let plain = register("Gunasekara", "2019-03-15")?;
    let leap = register("Kulatunga", "2020-02-29")?;
    let purge_at = |at: chrono::DateTime<Utc>| -> Result<Vec<String>, String> {
        h.clock.set(at);
        let admin = http.token("admin")?;
        let (s, r) = http.send("POST", "/admin/purge", Some(&admin), &Value::Null)?;
        check(s == 200, || format!("purge {s} {r}"))?;
        Ok(r["purged"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect())
    };
    let t = |y, m, d, hh, mm, ss| Utc.with_ymd_and_hms(y, m, d, hh, mm, ss).unwrap();
    check(purge_at(t(2024, 3, 14, 23, 59, 59))?.is_empty(), || "purged a day early".into())?;
    check(purge_at(t(2024, 3, 15, 0, 0, 0))? == vec![plain.clone()], || "not purged on the boundary".into())?;
    check(purge_at(t(2025, 2, 27, 23, 59, 59))?.is_empty(), || "leap-day death purged early".into())?;
    check(purge_at(t(2025, 2, 28, 0, 0, 0))? == vec![leap.clone()], || "leap-day death not purged on 2025-02-28".into())?;
    let (s, _) = http.send("GET", &format!("/patients/{plain}"), Some(&http.token("hims")?), &Value::Null)?;
    check(s == 404, || format!("purged record still served: {s}"))
}

fn spawn_server(data_dir: &Path, clients_file: &Path) -> Result<(Child, String), String> {
    let mut child = Process::new(env!("CARGO_BIN_EXE_mpi"))
        .args(["serve", "--listen", "127.0.0.1:0", "--snapshot-every", "25", "--data-dir"])
        .arg(data_dir)
        .arg("--clients-file")
        .arg(clients_file)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).map_err(|e| e.to_string())?;
    let addr = line.trim().strip_prefix("listening on ").ok_or(format!("unexpected server output {line:?}"))?;
    Ok((child, format!("http://{addr}")))
}

/// Registers from several threads, SIGKILLs the server mid-stream, restarts
/// it on the same directory and looks every acknowledged PHN up.
fn kill_and_replay() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let clients_file = dir.path().join("clients.tsv");
    let now = Utc::now();
    clients::add(&clients_file, "hims", SECRET, &[Scope::Read, Scope::Write], now).map_err(|e| e.to_string())?;
    clients::add(&clients_file, "admin", SECRET, &[Scope::Admin], now).map_err(|e| e.to_string())?;
    let (mut server, base) = spawn_server(&data, &clients_file)?;

    let acked: Arc<Mutex<Vec<(String, String)>>> = Arc::default();
    let workers: Vec<_> = (0..4)
        .map(|w| {
            let (acked, base) = (acked.clone(), base.clone());
            thread::spawn(move || -> Result<(), String> {
                let http = Http::new(&base);
                let token = http.token("hims")?;
                // Runs until the kill breaks the connection.
                for i in 0.. {
                    let nic = format!("{:09}V", 700_000_000 + w * 100_000 + i);
                    let body = json!({ "profile": profile("Herath", "1975-07-07"), "identifiers": [{ "kind": "NIC", "value": nic }] });
                    match http.send("POST", "/patients", Some(&token), &body) {
                        Ok((201, r)) => acked.lock().unwrap().push((r["record"]["phn"].as_str().unwrap().to_string(), nic.to_uppercase())),
                        Ok((s, r)) => return Err(format!("unexpected {s} {r}")),
                        Err(_) => return Ok(()),
                    }
                }
                Ok(())
            })
        })
        .collect();
    let deadline = Instant::now() + Duration::from_secs(60);
    while acked.lock().unwrap().len() < KILL_AFTER_ACKS {
        check(Instant::now() < deadline, || "server too slow to reach the kill point".into())?;
        thread::sleep(Duration::from_millis(5));
    }
    server.kill().map_err(|e| e.to_string())?;
    server.wait().map_err(|e| e.to_string())?;
    for w in workers {
        w.join().map_err(|_| "worker panicked".to_string())??;
    }
    let acked = acked.lock().unwrap().clone();

    let (mut server, base) = spawn_server(&data, &clients_file)?;
    let result: Result<usize, String> = (|| {
        let http = Http::new(&base);
        let token = http.token("hims")?;
        for (phn, nic) in &acked {
            let (s, r) = http.send("GET", &format!("/patients/{phn}"), Some(&token), &Value::Null)?;
            check(s == 200, || format!("acked {phn} lost after kill: {s}"))?;
            let ids = r["record"]["identifiers"].as_array().cloned().unwrap_or_default();
            check(ids.iter().any(|i| i["value"] == nic.as_str()), || format!("{phn} came back without {nic}"))?;
        }
        let distinct: BTreeSet<_> = acked.iter().map(|(p, _)| p).collect();
        check(distinct.len() == acked.len(), || "a PHN was acknowledged twice".into())?;
        let admin = http.token("admin")?;
        let (_, audit) = http.send("GET", "/audit", Some(&admin), &Value::Null)?;
        let entries = audit["entries"].as_array().cloned().unwrap_or_default();
        let seqs: Vec<u64> = entries.iter().filter_map(|e| e["event_seq"].as_u64()).collect();
        check(seqs == (1..=seqs.len() as u64).collect::<Vec<_>>(), || "audit does not cover the event log".into())?;
        check(seqs.len() >= acked.len(), || format!("{} audited events for {} acks", seqs.len(), acked.len()))?;
        Ok(seqs.len())
    })();
    let _ = server.kill();
    let _ = server.wait();
    let events = result?;
    let scratch = Store::replay_from_scratch(&data, LinkageConfig::default()).map_err(|e| e.to_string())?;
    // Every event in this run is a registration.
    check(scratch.records().len() == events, || "full replay disagrees with the snapshot tail".into())?;
    Ok(format!("{} acked before SIGKILL, all present after restart ({events} events durable)", acked.len()))
}

fn service() -> Verdict {
    let t = |y, m, d| Utc.with_ymd_and_hms(y, m, d, 8, 0, 0).unwrap();
    let h = in_process(t(2024, 6, 1))?;
    let checked = token_rejection(&h)?;
    idempotent_intake(&h)?;
    purge_boundary(&in_process(t(2024, 3, 1))?)?;
    let killed = kill_and_replay()?;
    Ok(format!(
        "{checked} refusals over 13 endpoints and /hl7 (missing, garbage, wrong scope, expired at +{TOKEN_TTL_SECS}s) with state untouched; duplicate MSH-10 replays byte-identical ACK; purge exact at 2024-03-15 and 2025-02-28; {killed}"
    ))
}

fn main() {
    // `cargo test` passes harness flags such as --nocapture; a name filter
    // that matches nothing here skips the gate.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let criteria: [(&str, fn() -> Verdict); 6] = [
        ("PHN check digit", luhn),
        ("HL7 round trip and fuzz", hl7),
        ("Linkage quality", linkage),
        ("Blocking soundness", blocking),
        ("Merge properties", merges),
        ("Service contract", service),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let verdict = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
