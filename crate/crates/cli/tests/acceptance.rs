//! The acceptance suite: one test per criterion, each printing a PASS line
//! (run with `cargo test --test acceptance -- --nocapture` to see them).
//! Thresholds and tolerances are pinned in code.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use relatape::dsl::{parse_definition, DefinitionSource};
use relatape::storage::{Database, FaultPoint};
use relatape::value::Value;
use relatape::{
    AlgebraError, KeyRecord, MakeOutput, Predicate, RowMap, RunOutcome, Tier,
};
use relatape_cli::fixture;
use relatape_testkit::gen::{base_tables, compile, gen_schema, ExprGen};
use relatape_testkit::{oracle_fingerprints, result_fingerprints, NthFault, ProbChaos};

fn declare(db: &mut Database, schema: &str, name: &str, tier: Tier, master: Option<&str>, text: &str) {
    let def = parse_definition(&DefinitionSource {
        text: text.to_string(),
        schema_name: schema.into(),
        table_name: name.into(),
        tier,
        master: master.map(String::from),
    })
    .unwrap();
    db.declare_table(def).unwrap();
}

fn row(pairs: &[(&str, Value)]) -> RowMap {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn payload_objects(db: &Database) -> Vec<String> {
    db.object_store()
        .list("")
        .unwrap()
        .into_iter()
        .filter(|p| !p.ends_with(".meta.json"))
        .collect()
}

/// Full-scan oracle: every object path referenced by any tuple.
fn referenced_paths(db: &Database) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for t in db.registry().tables() {
        let result = db.evaluate(&db.table(&t.id.to_string()).unwrap()).unwrap();
        for row in &result.rows {
            for v in row {
                if let Value::Object(o) = v {
                    out.insert(o.address.path.clone());
                }
            }
        }
    }
    out
}

/// Full-scan foreign-key integrity: every child row's parent exists.
fn assert_no_dangling_fks(db: &Database) {
    for t in db.registry().tables() {
        let rows = db.evaluate(&db.table(&t.id.to_string()).unwrap()).unwrap();
        for fk in &t.fks {
            let parent_rows = db.evaluate(&db.table(&fk.parent.to_string()).unwrap()).unwrap();
            let parent_keys: BTreeSet<String> = parent_rows
                .rows
                .iter()
                .map(|r| {
                    fk.map
                        .iter()
                        .map(|(_, pa)| {
                            format!("{:?};", parent_rows.value2(&parent_rows.heading, r, pa))
                        })
                        .collect()
                })
                .collect();
            for r in &rows.rows {
                let key: String = fk
                    .map
                    .iter()
                    .map(|(ca, _)| format!("{:?};", rows.value2(&rows.heading, r, ca)))
                    .collect();
                assert!(
                    parent_keys.contains(&key),
                    "row of {} dangles: no {} parent {key}",
                    t.id,
                    fk.parent
                );
            }
        }
    }
}

trait Value2 {
    fn value2<'a>(&self, heading: &relatape::Heading, row: &'a [Value], attr: &str) -> &'a Value;
}

impl Value2 for relatape::ResultSet {
    fn value2<'a>(&self, heading: &relatape::Heading, row: &'a [Value], attr: &str) -> &'a Value {
        &row[heading.index_of(attr).unwrap()]
    }
}

// -- 1 & 2: oracle equivalence and closure ------------------------------------------

#[test]
fn criterion_01_algebra_oracle_equivalence() {
    let started = Instant::now();
    let target = 10_000usize;
    let mut evaluated = 0usize;
    let mut seed = 0u64;
    while evaluated < target {
        let schema = gen_schema(seed, 6, 8);
        let tables = base_tables(&schema);
        let mut gen = ExprGen::new(&schema, seed.wrapping_mul(0x9e3779b97f4a7c15));
        let mut attempts = 0;
        while attempts < 600 && evaluated < target {
            attempts += 1;
            let spec = gen.gen_expr(3);
            let expr = match compile(&schema.db, &spec) {
                Ok(e) => e,
                Err(_) => continue,
            };
            let engine = result_fingerprints(&schema.db.evaluate(&expr).unwrap());
            let oracle =
                oracle_fingerprints(&relatape_testkit::oracle::eval(&tables, &spec).rows);
            assert_eq!(engine, oracle, "row set diverges for {spec:?} (seed {seed})");
            evaluated += 1;
        }
        seed += 1;
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(60),
        "10,000 expressions took {elapsed:?}, budget is 60s"
    );
    println!(
        "ACCEPTANCE 01 algebra-oracle-equivalence: PASS ({evaluated} expressions in {elapsed:?})"
    );
}

#[test]
fn criterion_02_closure_suite() {
    let mut checked = 0usize;
    for seed in 0..40u64 {
        let schema = gen_schema(seed, 6, 8);
        let mut gen = ExprGen::new(&schema, seed + 1000);
        let mut attempts = 0;
        while attempts < 300 {
            attempts += 1;
            let spec = gen.gen_expr(3);
            let expr = match compile(&schema.db, &spec) {
                Ok(e) => e,
                Err(_) => continue,
            };
            let heading = expr.heading();
            let names = heading.names();
            let unique: BTreeSet<_> = names.iter().collect();
            assert_eq!(unique.len(), names.len(), "duplicate names in heading");
            assert!(!heading.pk_names().is_empty(), "empty primary key");
            // restrict/project/aggregate/union keep the left key; join
            // follows the documented collapse rule. The generator computes
            // the expected key independently.
            let mut expected = gen.pk_of(&spec);
            expected.sort();
            let mut actual: Vec<String> =
                heading.pk_names().iter().map(|s| s.to_string()).collect();
            actual.sort();
            assert_eq!(actual, expected, "primary-key rule violated for {spec:?}");
            checked += 1;
        }
    }
    assert!(checked >= 5_000, "only {checked} cases generated");
    println!("ACCEPTANCE 02 closure-suite: PASS ({checked} cases, 100% conforming)");
}

// -- 3: semantic matching, exhaustive over fixture + adversarial ---------------------

#[test]
fn criterion_03_semantic_matching_exhaustive() {
    let mut db = relatape_cli::demo_in_memory(1).unwrap();
    // adversarial homonyms
    declare(&mut db, "adv", "ta", Tier::Manual, None, "id : int64\n---\nts : datetime\nv : float64\n");
    declare(&mut db, "adv", "tb", Tier::Manual, None, "id : int64\n---\nts : datetime\n");
    declare(&mut db, "adv", "tc", Tier::Manual, None, "-> Ta\n---\nts : datetime\n");
    declare(&mut db, "adv", "td", Tier::Manual, None, "-> Ta\nextra : int64\n---\nv : float64\n");

    let lineage = db.lineage_graph().clone();
    let ids: Vec<String> = db.registry().tables().iter().map(|t| t.id.to_string()).collect();
    let mut pairs = 0usize;
    let mut rejected = 0usize;
    for x in &ids {
        for y in &ids {
            let ex = db.table(x).unwrap();
            let ey = db.table(y).unwrap();
            let tx = db.registry().resolve_name(x).unwrap().id.clone();
            let ty = db.registry().resolve_name(y).unwrap().id.clone();

            // expected: all namesake pairs must share an ancestor
            let mut disjoint_namesakes = Vec::new();
            for a in ex.heading().names() {
                if ey.heading().index_of(a).is_some() {
                    let ox = lineage.origins_of(&tx, a).unwrap();
                    let oy = lineage.origins_of(&ty, a).unwrap();
                    if ox.is_disjoint(oy) {
                        disjoint_namesakes.push(a.to_string());
                    }
                }
            }

            for attempt in [ex.join(&ey), ex.restrict_rel(&ey, false).map(|e| e), ex.aggregate(&ey, &[])] {
                pairs += 1;
                match attempt {
                    Ok(_) => {
                        assert!(
                            disjoint_namesakes.is_empty(),
                            "{x} ⋈ {y} constructed despite disjoint namesakes {disjoint_namesakes:?}"
                        );
                    }
                    Err(AlgebraError::Semantic(
                        relatape::lineage::LineageError::SemanticMismatch { attribute, .. },
                    )) => {
                        rejected += 1;
                        assert!(
                            disjoint_namesakes.contains(&attribute),
                            "{x} ⋈ {y} rejected on {attribute}, but expected {disjoint_namesakes:?}"
                        );
                    }
                    Err(other) => panic!("{x} ⋈ {y}: unexpected error {other}"),
                }
            }
        }
    }
    assert!(rejected > 0, "adversarial schema never triggered a mismatch");
    println!(
        "ACCEPTANCE 03 semantic-matching: PASS ({pairs} operator applications over {} tables, {rejected} correctly rejected)",
        ids.len()
    );
}

// -- 4: storage integrity under chaos --------------------------------------------------

fn chaos_db() -> Database {
    let mut db = Database::in_memory();
    declare(&mut db, "lab", "subject", Tier::Manual, None, "subject_id : int64\n---\n");
    declare(&mut db, "lab", "session", Tier::Manual, None, "-> Subject\nsession_id : int64\n---\n");
    declare(
        &mut db,
        "lab",
        "scan",
        Tier::Manual,
        None,
        "-> Session\nscan_id : int64\n---\nraw = null : <f64_array>\nlocal = null : <f64_array@schema>\n",
    );
    declare(
        &mut db,
        "lab",
        "scan__peak",
        Tier::Part,
        Some("scan"),
        "-> Scan\npeak_id : int64\n---\n",
    );
    db
}

#[test]
fn criterion_04_storage_integrity_under_chaos() {
    let started = Instant::now();
    let sequences = 1_000usize;
    for seq in 0..sequences as u64 {
        let db = chaos_db();
        let mut rng = ChaCha8Rng::seed_from_u64(seq);
        db.insert("subject", vec![row(&[("subject_id", Value::Int(1))])]).unwrap();
        db.insert(
            "session",
            vec![
                row(&[("subject_id", Value::Int(1)), ("session_id", Value::Int(1))]),
                row(&[("subject_id", Value::Int(1)), ("session_id", Value::Int(2))]),
            ],
        )
        .unwrap();

        db.set_chaos_hook(Some(Arc::new(ProbChaos::new(seq.wrapping_add(77), 0.1))));
        for step in 0..12 {
            match rng.gen_range(0..5) {
                0 | 1 => {
                    // duplicate content across rows exercises deduplication
                    let data: Vec<f64> =
                        (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..4) as f64).collect();
                    let master = row(&[
                        ("subject_id", Value::Int(1)),
                        ("session_id", Value::Int(rng.gen_range(1..3))),
                        ("scan_id", Value::Int(step)),
                        ("raw", Value::F64Array { shape: vec![data.len()], data: data.clone() }),
                        ("local", Value::F64Array { shape: vec![data.len()], data }),
                    ]);
                    let parts: Vec<RowMap> = (0..rng.gen_range(0..3))
                        .map(|p| {
                            row(&[
                                ("subject_id", Value::Int(1)),
                                ("session_id", master["session_id"].clone()),
                                ("scan_id", Value::Int(step)),
                                ("peak_id", Value::Int(p)),
                            ])
                        })
                        .collect();
                    let _ = db.insert_group("scan", vec![master], vec![("scan__peak".into(), parts)]);
                }
                2 => {
                    let _ = db.delete(
                        "scan",
                        &Predicate::key(&[("scan_id", Value::Int(rng.gen_range(0..12)))]),
                    );
                }
                3 => {
                    let _ = db.delete(
                        "session",
                        &Predicate::key(&[("session_id", Value::Int(rng.gen_range(1..3)))]),
                    );
                }
                _ => {
                    let _ = db.gc();
                }
            }
        }
        db.set_chaos_hook(None);

        // oracle: no dangling references, no dangling foreign keys
        let referenced = referenced_paths(&db);
        for path in &referenced {
            assert!(
                db.object_store().exists(path).unwrap(),
                "seq {seq}: dangling object reference {path}"
            );
        }
        assert_no_dangling_fks(&db);

        // after gc, the stored set equals the referenced set exactly
        db.gc().unwrap();
        let existing: BTreeSet<String> = payload_objects(&db).into_iter().collect();
        assert_eq!(existing, referenced, "seq {seq}: orphans or lost objects after gc");
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(120),
        "1,000 chaos sequences took {elapsed:?}, budget is 120s"
    );
    println!(
        "ACCEPTANCE 04 storage-integrity-under-chaos: PASS ({sequences} sequences in {elapsed:?})"
    );
}

// -- 5: deduplication ---------------------------------------------------------------------

#[test]
fn criterion_05_deduplication() {
    let db = chaos_db();
    db.insert("subject", vec![row(&[("subject_id", Value::Int(1))])]).unwrap();
    db.insert(
        "session",
        vec![row(&[("subject_id", Value::Int(1)), ("session_id", Value::Int(1))])],
    )
    .unwrap();
    let shared = vec![2.5f64, 7.25, -1.0];
    let rows: Vec<RowMap> = (0..50)
        .map(|i| {
            row(&[
                ("subject_id", Value::Int(1)),
                ("session_id", Value::Int(1)),
                ("scan_id", Value::Int(i)),
                ("raw", Value::F64Array { shape: vec![3], data: shared.clone() }),
            ])
        })
        .collect();
    db.insert("scan", rows).unwrap();
    assert_eq!(payload_objects(&db).len(), 1, "50 identical payloads → 1 object");

    // delete 49: object survives gc
    for i in 0..49 {
        db.delete("scan", &Predicate::key(&[("scan_id", Value::Int(i))])).unwrap();
    }
    let report = db.gc().unwrap();
    assert_eq!(report.deleted, 0);
    assert_eq!(payload_objects(&db).len(), 1);

    // delete the last: gc removes it
    db.delete("scan", &Predicate::key(&[("scan_id", Value::Int(49))])).unwrap();
    let report = db.gc().unwrap();
    assert_eq!(report.deleted, 1);
    assert!(payload_objects(&db).is_empty());
    println!("ACCEPTANCE 05 deduplication: PASS");
}

// -- 6: reservation exclusivity and exactly-once -------------------------------------------

#[test]
fn criterion_06_reservation_exactly_once() {
    let mut db = Database::in_memory();
    declare(&mut db, "lab", "item", Tier::Manual, None, "item_id : int64\n---\n");
    declare(&mut db, "lab", "result", Tier::Computed, None, "-> Item\n---\nvalue : float64\n");
    let items: Vec<RowMap> = (0..200).map(|i| row(&[("item_id", Value::Int(i))])).collect();
    db.insert("item", items).unwrap();

    db.register_make(
        "result",
        relatape::populate::make_fn(|key: &KeyRecord, _ctx| {
            // random delay; the output stays a pure function of the key
            let jitter = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .subsec_nanos() as u64
                % 2_000;
            std::thread::sleep(Duration::from_micros(jitter));
            let id = match key["item_id"] {
                Value::Int(i) => i,
                _ => unreachable!(),
            };
            let mut master: RowMap = key.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            master.insert("value".into(), Value::Float(id as f64 * 0.5));
            Ok(MakeOutput { master, parts: vec![] })
        }),
    )
    .unwrap();

    // per-key write counter through the commit observer
    let writes: Arc<Mutex<BTreeMap<Vec<u8>, usize>>> = Arc::default();
    {
        let writes = writes.clone();
        db.set_commit_observer(Some(Arc::new(move |table, keys| {
            if table.table == "result" {
                let mut map = writes.lock().unwrap();
                for k in keys {
                    *map.entry(k.clone()).or_insert(0) += 1;
                }
            }
        })));
    }

    let total_succeeded = AtomicUsize::new(0);
    let total_crashed = AtomicUsize::new(0);
    let mut rounds = 0;
    loop {
        rounds += 1;
        assert!(rounds <= 50, "did not converge");
        std::thread::scope(|s| {
            for w in 0..8u64 {
                let db = &db;
                let total_succeeded = &total_succeeded;
                let total_crashed = &total_crashed;
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(w * 1000 + rounds);
                    let keys = db.pending_keys("result").unwrap();
                    for key in keys {
                        if !db.reserve("result", &key, &format!("w{w}")).unwrap() {
                            continue;
                        }
                        if rng.gen_bool(0.05) {
                            // simulated crash after reservation: abandon it
                            total_crashed.fetch_add(1, Ordering::SeqCst);
                            continue;
                        }
                        match db.run_make("result", &key, &format!("w{w}")).unwrap() {
                            RunOutcome::Inserted => {
                                total_succeeded.fetch_add(1, Ordering::SeqCst);
                            }
                            RunOutcome::AlreadyPresent | RunOutcome::Failed => {}
                        }
                    }
                });
            }
        });
        let done = db.job_status("result").unwrap().done;
        if done == 200 {
            break;
        }
        // operator clears stale reservations between rounds
        db.clear_stale("result", Duration::ZERO).unwrap();
    }

    assert_eq!(total_succeeded.load(Ordering::SeqCst), 200, "exactly 200 successful makes");
    let result_rows = db.evaluate(&db.table("result").unwrap()).unwrap();
    assert_eq!(result_rows.len(), 200);
    let writes = writes.lock().unwrap();
    assert_eq!(writes.len(), 200);
    assert!(writes.values().all(|c| *c == 1), "a key was written more than once");
    println!(
        "ACCEPTANCE 06 reservation-exactly-once: PASS (200 keys, 8 workers, {} injected crashes, {} rounds)",
        total_crashed.load(Ordering::SeqCst),
        rounds
    );
}

// -- 7: idempotence --------------------------------------------------------------------------

#[test]
fn criterion_07_idempotence() {
    let mut db = relatape_cli::demo_in_memory(1).unwrap();

    // declare twice
    let before = db.snapshot_bytes().unwrap();
    fixture::declare_schema(&mut db).unwrap();
    assert_eq!(db.snapshot_bytes().unwrap(), before, "re-declare changed the store");

    // insert twice
    let report_rows = fixture::insert_base_data(&db);
    assert!(report_rows.is_ok());
    assert_eq!(db.snapshot_bytes().unwrap(), before, "re-insert changed the store");

    // populate twice
    for table in ["acquisition", "spectrum", "peak_detection"] {
        let report = db.populate(&format!("lcms.{table}"), "again", None).unwrap();
        assert_eq!(
            (report.succeeded, report.failed, report.skipped),
            (0, 0, 0),
            "re-populate of {table} found work"
        );
    }
    assert_eq!(db.snapshot_bytes().unwrap(), before, "re-populate changed the store");

    // gc twice
    let g1 = db.gc().unwrap();
    assert_eq!(g1.deleted, 0, "fixture run left garbage");
    let mid = db.snapshot_bytes().unwrap();
    let g2 = db.gc().unwrap();
    assert_eq!(g2.deleted, 0);
    assert_eq!(db.snapshot_bytes().unwrap(), mid);
    println!("ACCEPTANCE 07 idempotence: PASS (declare/insert/populate/gc all report zero changes)");
}

// -- 8: determinism ----------------------------------------------------------------------------

#[test]
fn criterion_08_determinism() {
    // two independent full runs: byte-identical snapshots and diagrams
    let a = relatape_cli::demo_in_memory(1).unwrap();
    let b = relatape_cli::demo_in_memory(1).unwrap();
    assert_eq!(
        a.snapshot_bytes().unwrap(),
        b.snapshot_bytes().unwrap(),
        "independent runs diverge"
    );
    let dot = |db: &Database| {
        relatape::diagram::emit_dot(db.registry(), &relatape::diagram::DiagramOptions::default())
            .unwrap()
    };
    assert_eq!(dot(&a), dot(&b));

    // 4 workers match 1 worker, on durable stores
    let d1 = tempfile::tempdir().unwrap();
    let d4 = tempfile::tempdir().unwrap();
    let mut db1 = Database::open(&d1.path().join("s"), &d1.path().join("o")).unwrap();
    let mut db4 = Database::open(&d4.path().join("s"), &d4.path().join("o")).unwrap();
    fixture::run_demo(&mut db1, 1, "w").unwrap();
    fixture::run_demo(&mut db4, 4, "w").unwrap();
    assert_eq!(
        db1.snapshot_bytes().unwrap(),
        db4.snapshot_bytes().unwrap(),
        "worker count changed the result"
    );
    println!("ACCEPTANCE 08 determinism: PASS (independent runs and 1-vs-4 workers byte-identical)");
}

// -- 9: master-part atomicity under fault injection ----------------------------------------------

#[test]
fn criterion_09_master_part_atomicity() {
    let db = chaos_db();
    db.insert("subject", vec![row(&[("subject_id", Value::Int(1))])]).unwrap();
    db.insert(
        "session",
        vec![row(&[("subject_id", Value::Int(1)), ("session_id", Value::Int(1))])],
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let trials = 500usize;
    for trial in 0..trials as i64 {
        // one object per trial, three tuple writes (master + two parts)
        let (point, n) = match rng.gen_range(0..3) {
            0 => (FaultPoint::ObjectPut, 1),
            1 => (FaultPoint::TupleWrite, rng.gen_range(1..=3)),
            _ => (FaultPoint::PreCommit, 1),
        };
        db.set_chaos_hook(Some(Arc::new(NthFault::new(point, n))));

        let data = vec![trial as f64, 1.0];
        let master = row(&[
            ("subject_id", Value::Int(1)),
            ("session_id", Value::Int(1)),
            ("scan_id", Value::Int(trial)),
            ("raw", Value::F64Array { shape: vec![2], data }),
        ]);
        let parts: Vec<RowMap> = (0..2)
            .map(|p| {
                row(&[
                    ("subject_id", Value::Int(1)),
                    ("session_id", Value::Int(1)),
                    ("scan_id", Value::Int(trial)),
                    ("peak_id", Value::Int(p)),
                ])
            })
            .collect();
        let result = db.insert_group("scan", vec![master], vec![("scan__peak".into(), parts)]);
        db.set_chaos_hook(None);
        assert!(result.is_err(), "trial {trial}: fault did not fire");

        // never a master without parts nor parts without a master
        let masters = db
            .evaluate(
                &db.table("scan")
                    .unwrap()
                    .restrict(Predicate::key(&[("scan_id", Value::Int(trial))]), false)
                    .unwrap(),
            )
            .unwrap();
        let parts = db
            .evaluate(
                &db.table("scan__peak")
                    .unwrap()
                    .restrict(Predicate::key(&[("scan_id", Value::Int(trial))]), false)
                    .unwrap(),
            )
            .unwrap();
        assert_eq!(masters.len(), 0, "trial {trial}: master leaked");
        assert_eq!(parts.len(), 0, "trial {trial}: parts leaked");
    }
    // and a clean insert still works afterwards
    let master = row(&[
        ("subject_id", Value::Int(1)),
        ("session_id", Value::Int(1)),
        ("scan_id", Value::Int(9999)),
    ]);
    let part = row(&[
        ("subject_id", Value::Int(1)),
        ("session_id", Value::Int(1)),
        ("scan_id", Value::Int(9999)),
        ("peak_id", Value::Int(0)),
    ]);
    db.insert_group("scan", vec![master], vec![("scan__peak".into(), vec![part])]).unwrap();
    println!("ACCEPTANCE 09 master-part-atomicity: PASS ({trials} injected trials, zero partial groups)");
}

// -- 10: codec round-trip and laziness ------------------------------------------------------------

#[test]
fn criterion_10_codec_round_trip_and_laziness() {
    // SHA-256 standard vector
    assert_eq!(
        hex::encode_upper_lower(relatape::address::sha256(b"abc")),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );

    // round-trip over generated arrays up to 1e5 elements
    let codecs = relatape::CodecRegistry::bundled();
    let codec = codecs.resolve("f64_array", 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sizes = [1usize, 2, 17, 1_000, 100_000];
    for (i, n) in sizes.iter().enumerate() {
        let data: Vec<f64> = (0..*n).map(|_| rng.gen_range(-1e6..1e6)).collect();
        let shape = if i % 2 == 0 && n % 2 == 0 { vec![n / 2, 2] } else { vec![*n] };
        let v = Value::F64Array { shape, data };
        let (payload, meta) = codec.encode(&v).unwrap();
        assert_eq!(payload.len(), n * 8);
        assert_eq!(codec.decode(&payload, &meta).unwrap(), v);
    }

    // blob round-trips too
    let blob = codecs.resolve("blob", 1).unwrap();
    for n in [1usize, 64, 100_000] {
        let data: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
        let v = Value::Bytes(data);
        let (payload, meta) = blob.encode(&v).unwrap();
        assert_eq!(blob.decode(&payload, &meta).unwrap(), v);
    }

    // laziness: zero reads for metadata, exactly one on materialize
    let db = chaos_db();
    db.insert("subject", vec![row(&[("subject_id", Value::Int(1))])]).unwrap();
    db.insert(
        "session",
        vec![row(&[("subject_id", Value::Int(1)), ("session_id", Value::Int(1))])],
    )
    .unwrap();
    let big: Vec<f64> = (0..100_000).map(|i| i as f64 * 0.5).collect();
    db.insert(
        "scan",
        vec![row(&[
            ("subject_id", Value::Int(1)),
            ("session_id", Value::Int(1)),
            ("scan_id", Value::Int(1)),
            ("raw", Value::F64Array { shape: vec![big.len()], data: big.clone() }),
        ])],
    )
    .unwrap();

    let result = db.evaluate(&db.table("scan").unwrap()).unwrap();
    let stored = result.value(0, "raw").unwrap().clone();
    let lazy = db.lazy_ref(&stored).unwrap();
    assert_eq!(db.object_store().read_count(), 0);
    assert_eq!(lazy.shape(), Some(vec![100_000]));
    lazy.describe();
    assert_eq!(db.object_store().read_count(), 0, "metadata access did I/O");
    let value = lazy.materialize().unwrap();
    assert_eq!(db.object_store().read_count(), 1);
    match &*value {
        Value::F64Array { data, .. } => assert_eq!(data, &big),
        other => panic!("unexpected {other:?}"),
    }
    lazy.materialize().unwrap();
    assert_eq!(db.object_store().read_count(), 1, "second materialize must hit the cache");
    println!("ACCEPTANCE 10 codec-round-trip-and-laziness: PASS");
}

// hex helper: the workspace's hex crate lives in the core library
mod hex {
    pub fn encode_upper_lower(bytes: [u8; 32]) -> String {
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }
}
