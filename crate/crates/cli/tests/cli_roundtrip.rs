use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use mpi_cli::corpus::CorruptionSpec;
use mpi_cli::eval::{evaluate, parse_results, parse_truth};
use mpi_cli::pipeline;
use mpi_core::matching::LinkageConfig;

fn mpi(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_mpi")).args(args).output().unwrap();
    assert!(out.status.success(), "mpi {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(data: &Path, clients: &Path, comparators: &Path) -> (Server, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_mpi"))
        .args(["serve", "--listen", "127.0.0.1:0", "--data-dir", path(data), "--clients-file", path(clients)])
        .args(["--comparator-config", path(comparators)])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("{line:?}")).to_string();
    (Server(child), format!("http://{addr}"))
}

#[test]
fn gen_load_scan_eval_against_a_live_server() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let clients = d.join("clients.tsv");
    let comparators = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/comparators.tsv");

    let printed = mpi(&["client", "add", "--clients-file", path(&clients), "--id", "loader", "--scopes", "READ,WRITE,STEWARD"]);
    let secret = String::from_utf8(printed.stdout).unwrap().trim().to_string();
    assert_eq!(secret.len(), 48);
    mpi(&["client", "add", "--clients-file", path(&clients), "--id", "temp", "--scopes", "READ", "--secret", "x"]);
    mpi(&["client", "rm", "--clients-file", path(&clients), "--id", "temp"]);
    let bad = Command::new(env!("CARGO_BIN_EXE_mpi"))
        .args(["client", "add", "--clients-file", path(&clients), "--id", "x", "--scopes", "ROOT"])
        .output()
        .unwrap();
    assert!(!bad.status.success());

    let (records, truth) = (d.join("corpus.jsonl"), d.join("truth.tsv"));
    mpi(&["gen", "--n", "300", "--duplicate-rate", "0.1", "--seed", "7", "--records", path(&records), "--truth", path(&truth)]);
    let first = std::fs::read(&records).unwrap();
    mpi(&["gen", "--n", "300", "--duplicate-rate", "0.1", "--seed", "7", "--records", path(&records), "--truth", path(&truth)]);
    assert_eq!(std::fs::read(&records).unwrap(), first);
    assert_eq!(String::from_utf8(first).unwrap().lines().count(), 330);

    let (server, base) = serve(&d.join("data"), &clients, &comparators);
    let conn = ["--server", base.as_str(), "--client-id", "loader", "--secret", secret.as_str()];
    let ids = d.join("ids.tsv");
    let loaded = mpi(&[&["load", "--corpus", path(&records), "--out", path(&ids)][..], &conn[..]].concat());
    assert!(String::from_utf8_lossy(&loaded.stdout).contains("registered"));
    let ids_text = std::fs::read_to_string(&ids).unwrap();
    assert_eq!(ids_text.lines().count(), 330);
    // Loading again replays the stored ACKs: same PHNs, nothing new.
    mpi(&[&["load", "--corpus", path(&records), "--out", path(&d.join("ids2.tsv"))][..], &conn[..]].concat());
    assert_eq!(std::fs::read_to_string(d.join("ids2.tsv")).unwrap(), ids_text);

    let results = d.join("results.tsv");
    let scanned = mpi(&[&["scan", "--ids", path(&ids), "--out", path(&results)][..], &conn[..]].concat());
    let queue = String::from_utf8(scanned.stdout).unwrap();
    assert!(queue.lines().all(|l| l.starts_with("RV") && l.split('\t').count() == 4), "{queue}");

    let eval = mpi(&["eval", "--results", path(&results), "--truth", path(&truth), "--json"]);
    let live: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    drop(server);

    // The same corpus through the in-process pipeline scores identically.
    let run = pipeline::run(300, &CorruptionSpec::new(0.1, 7), LinkageConfig::default(), &d.join("inproc")).unwrap();
    assert_eq!(live, serde_json::to_value(&run.evaluation).unwrap());
    let from_files = evaluate(
        &parse_results(&std::fs::read_to_string(&results).unwrap()).unwrap(),
        &parse_truth(&std::fs::read_to_string(&truth).unwrap()).unwrap(),
    );
    assert_eq!(from_files, run.evaluation);
    assert!(run.evaluation.recall > 0.9, "{}", run.evaluation);

    let text = String::from_utf8(mpi(&["eval", "--results", path(&results), "--truth", path(&truth)]).stdout).unwrap();
    assert!(text.starts_with("precision "), "{text}");
    let audit = std::fs::read_to_string(d.join("clients.tsv.audit.log")).unwrap();
    assert_eq!(audit.lines().count(), 3);
}

#[test]
fn eval_rejects_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    let (r, t) = (dir.path().join("r.tsv"), dir.path().join("t.tsv"));
    std::fs::write(&r, "P1\tP2\tSOMETIMES\n").unwrap();
    std::fs::write(&t, "P1\tP2\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mpi"))
        .args(["eval", "--results", path(&r), "--truth", path(&t)])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("MALFORMED_INPUT"));
}
