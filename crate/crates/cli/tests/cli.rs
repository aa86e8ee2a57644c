//! Binary-level tests: command wiring, file formats, exit codes, and the
//! cross-process reservation contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_relatape")
}

fn run(store: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .arg("--store")
        .arg(store)
        .args(args)
        .env_remove("RELATAPE_STORE")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        stdout(out),
        stderr(out)
    );
}

fn store_dir() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    (dir, store)
}

#[test]
fn init_is_idempotent_and_creates_layout() {
    let (_guard, store) = store_dir();
    assert_ok(&run(&store, &["init"]));
    assert!(store.join("manifest").exists());
    assert!(store.join("tables").is_dir());
    assert!(store.join("objects").is_dir());
    let before = std::fs::read(store.join("manifest")).unwrap();
    assert_ok(&run(&store, &["init"]));
    assert_eq!(std::fs::read(store.join("manifest")).unwrap(), before);
}

#[test]
fn init_on_unwritable_location_reports_storage_failure() {
    let out = run(Path::new("/proc/definitely/not/writable"), &["init"]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn declare_loads_fixture_directory_in_dependency_order() {
    let (_guard, store) = store_dir();
    assert_ok(&run(&store, &["init"]));

    // write the fixture schema and declare it file by file
    let schema_dir = store.parent().unwrap().join("lcms");
    relatape_cli::fixture::write_schema_dir(&schema_dir).unwrap();
    let out = run(&store, &["declare", schema_dir.to_str().unwrap()]);
    assert_ok(&out);
    assert!(stdout(&out).contains("9 tables declared"), "{}", stdout(&out));

    // re-declare: no-op, still succeeds
    assert_ok(&run(&store, &["declare", schema_dir.to_str().unwrap()]));

    // lint over the declared fixture: clean
    let out = run(&store, &["lint"]);
    assert_ok(&out);
    assert!(stdout(&out).contains("no diagnostics"));
}

#[test]
fn declare_reports_cycles_with_both_names() {
    let (_guard, store) = store_dir();
    assert_ok(&run(&store, &["init"]));
    let dir = store.parent().unwrap().join("cyclic");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("Alpha.manual.djt"), "-> Beta\na_id : int64\n---\n").unwrap();
    std::fs::write(dir.join("Beta.manual.djt"), "-> Alpha\nb_id : int64\n---\n").unwrap();
    let out = run(&store, &["declare", dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("alpha") && msg.contains("beta"), "{msg}");
}

#[test]
fn insert_from_rows_file_with_payload_reference() {
    let (_guard, store) = store_dir();
    assert_ok(&run(&store, &["init"]));
    let dir = store.parent().unwrap().join("defs");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("Trace.manual.djt"), "trace_id : int64\n---\nwave : <f64_array>\nnote = null : varchar(32)\n").unwrap();
    assert_ok(&run(&store, &["declare", dir.to_str().unwrap(), "--schema", "lab"]));

    // payload file: three little-endian f64s
    let data_dir = store.parent().unwrap().join("data");
    std::fs::create_dir_all(&data_dir).unwrap();
    let mut payload = Vec::new();
    for x in [1.0f64, 2.0, 3.0] {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(data_dir.join("wave.bin"), &payload).unwrap();
    let rows = r#"{"trace_id": 1, "wave": {"$file": "wave.bin", "$codec": "f64_array"}, "note": "from file"}
{"trace_id": 2, "wave": [4.0, 5.0]}
{"trace_id": 3, "wave": [4.0, 5.0], "note": null}
"#;
    std::fs::write(data_dir.join("rows.jsonl"), rows).unwrap();

    let out = run(&store, &["insert", "trace", data_dir.join("rows.jsonl").to_str().unwrap()]);
    assert_ok(&out);
    assert!(stdout(&out).contains("3 inserted"), "{}", stdout(&out));

    // duplicate identical rows: no-op count 0 inserted
    let out = run(&store, &["insert", "trace", data_dir.join("rows.jsonl").to_str().unwrap()]);
    assert_ok(&out);
    assert!(stdout(&out).contains("0 inserted, 3 no-op"), "{}", stdout(&out));

    // rows 2 and 3 share content: deduplicated
    let query = run(&store, &["query", "trace | restrict trace_id=1"]);
    assert_ok(&query);
    assert!(stdout(&query).contains("\"$object\""), "{}", stdout(&query));
}

#[test]
fn insert_fk_violation_names_row_index() {
    let (_guard, store) = store_dir();
    assert_ok(&run(&store, &["init"]));
    let dir = store.parent().unwrap().join("defs");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("Parent.manual.djt"), "p_id : int64\n---\n").unwrap();
    std::fs::write(dir.join("Child.manual.djt"), "-> Parent\nc_id : int64\n---\n").unwrap();
    assert_ok(&run(&store, &["declare", dir.to_str().unwrap(), "--schema", "lab"]));

    let rows_file = store.parent().unwrap().join("rows.jsonl");
    std::fs::write(&rows_file, "{\"p_id\": 7, \"c_id\": 1}\n").unwrap();
    let out = run(&store, &["insert", "child", rows_file.to_str().unwrap()]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("row 0"), "{}", stderr(&out));
}

#[test]
fn demo_populate_query_status_delete_gc_flow() {
    let (_guard, store) = store_dir();
    let out = run(&store, &["demo", "--workers", "2"]);
    assert_ok(&out);

    // populate again: idempotent
    let out = run(&store, &["--format-json", "populate", "spectrum"]);
    assert_ok(&out);
    assert_eq!(stdout(&out).trim(), r#"{"failed":0,"skipped":0,"succeeded":0}"#);

    // unregistered make
    let out = run(&store, &["populate", "sample"]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("not auto-populated"), "{}", stderr(&out));

    // query with an aggregate
    let out = run(&store, &["query", "instrument_session | aggr acquisition__scan count->n"]);
    assert_ok(&out);
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.contains("\"n\":3")), "{text}");

    // status in json
    let out = run(&store, &["--format-json", "status", "peak_detection"]);
    assert_ok(&out);
    let parsed: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(parsed["done"], 6);
    assert_eq!(parsed["pending"], 0);

    // lineage of an inherited attribute
    let out = run(&store, &["lineage", "peak_detection.sample_id"]);
    assert_ok(&out);
    assert_eq!(stdout(&out).trim(), "lcms.sample.sample_id");

    // cascade delete one sample; counts are printed per table
    let out = run(&store, &["delete", "sample", "sample_id=s1"]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("lcms.sample: 1 rows"), "{text}");
    assert!(text.contains("lcms.instrument_session: 2 rows"), "{text}");
    assert!(text.contains("lcms.acquisition__scan: 6 rows"), "{text}");

    // gc removes the spectra of the deleted sample
    let out = run(&store, &["--format-json", "gc"]);
    assert_ok(&out);
    let parsed: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert!(parsed["deleted"].as_u64().unwrap() > 0, "{parsed}");
}

#[test]
fn semantic_mismatch_exits_2_with_origins() {
    let (_guard, store) = store_dir();
    assert_ok(&run(&store, &["init"]));
    let dir = store.parent().unwrap().join("adv");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("Left.manual.djt"), "id : int64\n---\n").unwrap();
    std::fs::write(dir.join("Right.manual.djt"), "id : int64\n---\n").unwrap();
    assert_ok(&run(&store, &["declare", dir.to_str().unwrap(), "--schema", "adv"]));

    let out = run(&store, &["query", "left | join right"]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let msg = stderr(&out);
    assert!(msg.contains("adv.left.id") && msg.contains("adv.right.id"), "{msg}");
}

#[test]
fn concurrent_cli_invocations_share_one_store() {
    let (_guard, store) = store_dir();
    // prepare the fixture schema and base data, but nothing populated
    assert_ok(&run(&store, &["init"]));
    let schema_dir = store.parent().unwrap().join("lcms");
    relatape_cli::fixture::write_schema_dir(&schema_dir).unwrap();
    assert_ok(&run(&store, &["declare", schema_dir.to_str().unwrap()]));
    // insert base rows through the library (same files on disk)
    {
        let db = relatape::storage::Database::open(&store, &store.join("objects")).unwrap();
        relatape_cli::fixture::insert_base_data(&db).unwrap();
    }

    // two separate processes populate the same table concurrently
    let mut children: Vec<std::process::Child> = (0..2)
        .map(|i| {
            Command::new(bin())
                .arg("--store")
                .arg(&store)
                .args(["--worker-id", &format!("proc{i}"), "populate", "acquisition"])
                .stdout(std::process::Stdio::piped())
                .spawn()
                .unwrap()
        })
        .collect();
    let mut succeeded = 0;
    for child in children.drain(..) {
        let out = child.wait_with_output().unwrap();
        assert!(out.status.success());
        let text = String::from_utf8_lossy(&out.stdout).to_string();
        let n: usize = text
            .split("succeeded ")
            .nth(1)
            .and_then(|s| s.split(',').next())
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0);
        succeeded += n;
    }
    assert_eq!(succeeded, 3, "each key computed exactly once across processes");

    let out = run(&store, &["query", "acquisition"]);
    assert_ok(&out);
    assert_eq!(stdout(&out).lines().count(), 3);
}

#[test]
fn diagram_is_deterministic_and_filters_schemas() {
    let (_guard, store) = store_dir();
    assert_ok(&run(&store, &["demo"]));
    let a = stdout(&run(&store, &["diagram"]));
    let b = stdout(&run(&store, &["diagram"]));
    assert_eq!(a, b);
    let out = run(&store, &["diagram", "--schema", "nope"]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(1));
}
