//! End-to-end storage behavior: unified transactional insert/delete over
//! tuples and objects, cascades, deduplication, garbage collection, and
//! lazy references.

use std::sync::Arc;

use relatape::address::AddressScheme;
use relatape::dsl::{parse_definition, DefinitionSource};
use relatape::storage::{Database, FaultPoint, SchemaPathContext};
use relatape::value::Value;
use relatape::{Predicate, RowMap, StorageError, Tier};
use relatape_testkit::NthFault;

fn declare(db: &mut Database, name: &str, tier: Tier, master: Option<&str>, text: &str) {
    let def = parse_definition(&DefinitionSource {
        text: text.to_string(),
        schema_name: "lab".into(),
        table_name: name.into(),
        tier,
        master: master.map(String::from),
    })
    .unwrap();
    db.declare_table(def).unwrap();
}

fn lab_db() -> Database {
    let mut db = Database::in_memory();
    declare(&mut db, "subject", Tier::Manual, None, "subject_id : varchar(16)\n---\nspecies : varchar(32)\n");
    declare(&mut db, "session", Tier::Manual, None, "-> Subject\nsession_id : int64\n---\n");
    declare(&mut db, "scan", Tier::Manual, None, "-> Session\nscan_id : int64\n---\nraw = null : <f64_array>\n");
    db
}

fn row(pairs: &[(&str, Value)]) -> RowMap {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn subject(id: &str) -> RowMap {
    row(&[("subject_id", Value::str(id)), ("species", Value::str("mouse"))])
}

fn session(s: &str, n: i64) -> RowMap {
    row(&[("subject_id", Value::str(s)), ("session_id", Value::Int(n))])
}

fn scan(s: &str, n: i64, k: i64, data: Vec<f64>) -> RowMap {
    row(&[
        ("subject_id", Value::str(s)),
        ("session_id", Value::Int(n)),
        ("scan_id", Value::Int(k)),
        ("raw", Value::F64Array { shape: vec![data.len()], data }),
    ])
}

fn payload_objects(db: &Database) -> Vec<String> {
    db.object_store()
        .list("")
        .unwrap()
        .into_iter()
        .filter(|p| !p.ends_with(".meta.json"))
        .collect()
}

#[test]
fn insert_makes_row_visible() {
    let db = lab_db();
    let report = db.insert("subject", vec![subject("s1")]).unwrap();
    assert_eq!(report.inserted, 1);
    let rows = db.evaluate(&db.table("subject").unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
}

#[test]
fn fk_violation_leaves_nothing() {
    let db = lab_db();
    let err = db.insert("session", vec![session("s9", 1)]).unwrap_err();
    assert!(matches!(err, StorageError::FkViolation { row_index: 0, .. }), "{err}");
    assert_eq!(db.evaluate(&db.table("session").unwrap()).unwrap().len(), 0);
    assert!(payload_objects(&db).is_empty());
}

#[test]
fn duplicate_identical_insert_is_noop_conflicting_errors() {
    let db = lab_db();
    db.insert("subject", vec![subject("s1")]).unwrap();
    let before = db.snapshot_bytes().unwrap();
    let report = db.insert("subject", vec![subject("s1")]).unwrap();
    assert_eq!(report.inserted, 0);
    assert_eq!(report.noop, 1);
    assert_eq!(db.snapshot_bytes().unwrap(), before);

    let conflicting = row(&[("subject_id", Value::str("s1")), ("species", Value::str("rat"))]);
    let err = db.insert("subject", vec![conflicting]).unwrap_err();
    assert!(matches!(err, StorageError::DuplicatePrimaryKey { .. }), "{err}");
}

#[test]
fn fault_at_commit_removes_objects_and_rows() {
    let db = lab_db();
    db.insert("subject", vec![subject("s1")]).unwrap();
    db.insert("session", vec![session("s1", 1)]).unwrap();

    db.set_chaos_hook(Some(Arc::new(NthFault::new(FaultPoint::PreCommit, 1))));
    let err = db.insert("scan", vec![scan("s1", 1, 1, vec![1.0, 2.0, 3.0])]).unwrap_err();
    assert!(matches!(err, StorageError::Failure { .. }));
    db.set_chaos_hook(None);

    assert_eq!(db.evaluate(&db.table("scan").unwrap()).unwrap().len(), 0);
    assert!(payload_objects(&db).is_empty(), "objects must be removed on rollback");

    // transaction log ends in rolled_back with the written object listed
    let log = db.txn_log();
    let last = log.last().unwrap();
    assert_eq!(format!("{:?}", last.phase), "RolledBack");
    assert_eq!(last.object_paths.len(), 1);
}

#[test]
fn fault_between_tuple_writes_keeps_master_part_atomic() {
    let mut db = lab_db();
    declare(
        &mut db,
        "scan__peak",
        Tier::Part,
        Some("scan"),
        "-> Scan\npeak_id : int64\n---\nmz : float64\n",
    );
    db.insert("subject", vec![subject("s1")]).unwrap();
    db.insert("session", vec![session("s1", 1)]).unwrap();

    db.set_chaos_hook(Some(Arc::new(NthFault::new(FaultPoint::TupleWrite, 2))));
    let master = scan("s1", 1, 1, vec![5.0, 1.0]);
    let part = row(&[
        ("subject_id", Value::str("s1")),
        ("session_id", Value::Int(1)),
        ("scan_id", Value::Int(1)),
        ("peak_id", Value::Int(0)),
        ("mz", Value::Float(5.0)),
    ]);
    let err = db
        .insert_group("scan", vec![master], vec![("scan__peak".into(), vec![part])])
        .unwrap_err();
    assert!(matches!(err, StorageError::Failure { .. }));
    db.set_chaos_hook(None);

    assert_eq!(db.evaluate(&db.table("scan").unwrap()).unwrap().len(), 0);
    assert_eq!(db.evaluate(&db.table("scan__peak").unwrap()).unwrap().len(), 0);
    assert!(payload_objects(&db).is_empty());
}

#[test]
fn delete_cascades_through_dependents() {
    let db = lab_db();
    db.insert("subject", vec![subject("s1"), subject("s2")]).unwrap();
    db.insert("session", vec![session("s1", 1), session("s1", 2), session("s2", 1)]).unwrap();
    let mut scans = Vec::new();
    for sess in [1, 2] {
        for k in [1, 2, 3] {
            scans.push(scan("s1", sess, k, vec![k as f64]));
        }
    }
    scans.push(scan("s2", 1, 1, vec![9.0]));
    db.insert("scan", scans).unwrap();

    let report = db
        .delete("subject", &Predicate::key(&[("subject_id", Value::str("s1"))]))
        .unwrap();
    assert_eq!(report.rows_removed["lab.subject"], 1);
    assert_eq!(report.rows_removed["lab.session"], 2);
    assert_eq!(report.rows_removed["lab.scan"], 6);

    // no dangling children anywhere
    assert_eq!(db.evaluate(&db.table("session").unwrap()).unwrap().len(), 1);
    assert_eq!(db.evaluate(&db.table("scan").unwrap()).unwrap().len(), 1);

    // empty restriction: all-zero report
    let report = db
        .delete("subject", &Predicate::key(&[("subject_id", Value::str("nope"))]))
        .unwrap();
    assert_eq!(report.total_rows(), 0);
}

#[test]
fn delete_master_removes_parts_and_rejects_direct_part_delete() {
    let mut db = lab_db();
    declare(
        &mut db,
        "scan__peak",
        Tier::Part,
        Some("scan"),
        "-> Scan\npeak_id : int64\n---\n",
    );
    db.insert("subject", vec![subject("s1")]).unwrap();
    db.insert("session", vec![session("s1", 1)]).unwrap();
    let master = scan("s1", 1, 1, vec![1.0]);
    let parts: Vec<RowMap> = (0..2)
        .map(|i| {
            row(&[
                ("subject_id", Value::str("s1")),
                ("session_id", Value::Int(1)),
                ("scan_id", Value::Int(1)),
                ("peak_id", Value::Int(i)),
            ])
        })
        .collect();
    db.insert_group("scan", vec![master], vec![("scan__peak".into(), parts)]).unwrap();

    let err = db.delete("scan__peak", &Predicate::new()).unwrap_err();
    assert!(matches!(err, StorageError::InvalidOperation { .. }));

    let report = db.delete("scan", &Predicate::new()).unwrap();
    assert_eq!(report.rows_removed["lab.scan"], 1);
    assert_eq!(report.rows_removed["lab.scan__peak"], 2);
}

#[test]
fn dedup_and_gc_respect_references() {
    let db = lab_db();
    db.insert("subject", vec![subject("s1")]).unwrap();
    db.insert("session", vec![session("s1", 1)]).unwrap();
    // two rows sharing identical codec content: one hash-addressed object
    db.insert(
        "scan",
        vec![scan("s1", 1, 1, vec![1.0, 2.0]), scan("s1", 1, 2, vec![1.0, 2.0])],
    )
    .unwrap();
    assert_eq!(payload_objects(&db).len(), 1);

    // delete one referencing row: object survives gc
    db.delete("scan", &Predicate::key(&[("scan_id", Value::Int(1))])).unwrap();
    let report = db.gc().unwrap();
    assert_eq!(report.deleted, 0);
    assert_eq!(report.referenced, 1);
    assert_eq!(payload_objects(&db).len(), 1);

    // delete the last reference: gc removes it
    db.delete("scan", &Predicate::key(&[("scan_id", Value::Int(2))])).unwrap();
    let report = db.gc().unwrap();
    assert_eq!(report.deleted, 1);
    assert!(payload_objects(&db).is_empty());

    // idempotent: immediate re-run deletes nothing
    let report = db.gc().unwrap();
    assert_eq!(report.deleted, 0);
    assert_eq!(report.scanned, 0);
}

#[test]
fn schema_addressed_objects_are_deleted_eagerly() {
    let mut db = lab_db();
    declare(
        &mut db,
        "recording",
        Tier::Manual,
        None,
        "-> Session\n---\nraw : <f64_array@schema>\n",
    );
    db.insert("subject", vec![subject("s1")]).unwrap();
    db.insert("session", vec![session("s1", 3)]).unwrap();
    db.insert(
        "recording",
        vec![row(&[
            ("subject_id", Value::str("s1")),
            ("session_id", Value::Int(3)),
            ("raw", Value::F64Array { shape: vec![2], data: vec![1.0, 2.0] }),
        ])],
    )
    .unwrap();

    let objs = payload_objects(&db);
    assert_eq!(objs, vec!["schema/lab/recording/subject_id=s1/session_id=3/raw.arr"]);

    db.delete("recording", &Predicate::new()).unwrap();
    assert!(payload_objects(&db).is_empty(), "schema-addressed object removed eagerly");
}

#[test]
fn put_object_paths_match_contract() {
    let db = lab_db();
    let addr = db.put_object(AddressScheme::Hash, b"abc", None).unwrap();
    assert_eq!(
        addr.path,
        "hash/ba/ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
    // identical content twice: same address, one object
    let again = db.put_object(AddressScheme::Hash, b"abc", None).unwrap();
    assert_eq!(addr, again);
    assert_eq!(payload_objects(&db).len(), 1);

    let pk = vec![
        ("subject_id".to_string(), Value::str("s1")),
        ("session_id".to_string(), Value::Int(3)),
    ];
    let addr = db
        .put_object(
            AddressScheme::Schema,
            b"nwb-bytes",
            Some(&SchemaPathContext {
                schema: "lab",
                table: "recording",
                pk: &pk,
                attr: "raw",
                ext: "nwb",
            }),
        )
        .unwrap();
    assert_eq!(addr.path, "schema/lab/recording/subject_id=s1/session_id=3/raw.nwb");

    assert!(db.put_object(AddressScheme::Hash, b"", None).is_err());
}

#[test]
fn lazy_refs_read_nothing_until_materialize() {
    let db = lab_db();
    db.insert("subject", vec![subject("s1")]).unwrap();
    db.insert("session", vec![session("s1", 1)]).unwrap();
    db.insert("scan", vec![scan("s1", 1, 1, vec![1.0, 2.0, 3.0])]).unwrap();

    let result = db.evaluate(&db.table("scan").unwrap()).unwrap();
    let stored = result.value(0, "raw").unwrap().clone();
    let lazy = db.lazy_ref(&stored).unwrap();

    assert_eq!(db.object_store().read_count(), 0);
    assert_eq!(lazy.shape(), Some(vec![3]));
    let desc = lazy.describe();
    assert_eq!(desc.get("elements").and_then(|v| v.as_u64()), Some(3));
    assert_eq!(db.object_store().read_count(), 0, "metadata access performs no I/O");

    let value = lazy.materialize().unwrap();
    assert_eq!(
        *value,
        Value::F64Array { shape: vec![3], data: vec![1.0, 2.0, 3.0] }
    );
    assert_eq!(db.object_store().read_count(), 1);
    lazy.materialize().unwrap();
    assert_eq!(db.object_store().read_count(), 1, "materialize caches");
}

#[test]
fn corrupt_payload_is_detected() {
    let db = lab_db();
    db.insert("subject", vec![subject("s1")]).unwrap();
    db.insert("session", vec![session("s1", 1)]).unwrap();
    db.insert("scan", vec![scan("s1", 1, 1, vec![1.0, 2.0, 3.0])]).unwrap();

    let result = db.evaluate(&db.table("scan").unwrap()).unwrap();
    let stored = result.value(0, "raw").unwrap().clone();
    let path = match &stored {
        Value::Object(o) => o.address.path.clone(),
        _ => unreachable!(),
    };
    // flip one byte
    let mut payload = db.object_store().get_object(&path).unwrap();
    payload[0] ^= 0xFF;
    db.object_store().put(&path, &payload).unwrap();

    let lazy = db.lazy_ref(&stored).unwrap();
    let err = lazy.materialize().unwrap_err();
    assert!(err.to_string().contains("corrupt payload"), "{err}");
}

#[test]
fn snapshot_is_stable_under_reopen() {
    let store_dir = tempfile::tempdir().unwrap();
    let obj_dir = tempfile::tempdir().unwrap();
    let snapshot = {
        let mut db = Database::open(store_dir.path(), obj_dir.path()).unwrap();
        declare(&mut db, "subject", Tier::Manual, None, "subject_id : varchar(16)\n---\nspecies : varchar(32)\n");
        declare(&mut db, "session", Tier::Manual, None, "-> Subject\nsession_id : int64\n---\n");
        db.insert("subject", vec![subject("s1")]).unwrap();
        db.insert("session", vec![session("s1", 1)]).unwrap();
        db.snapshot_bytes().unwrap()
    };
    let db = Database::open(store_dir.path(), obj_dir.path()).unwrap();
    assert_eq!(db.snapshot_bytes().unwrap(), snapshot);
    assert_eq!(db.evaluate(&db.table("session").unwrap()).unwrap().len(), 1);

    // declared schema survives: re-declaring identically is still a no-op
    let mut db = db;
    declare(&mut db, "subject", Tier::Manual, None, "subject_id : varchar(16)\n---\nspecies : varchar(32)\n");
    assert_eq!(db.snapshot_bytes().unwrap(), snapshot);
}

#[test]
fn no_dangles_no_orphans_after_random_chaos() {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use relatape_testkit::ProbChaos;

    for seed in 0..30u64 {
        let db = lab_db();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        db.insert("subject", vec![subject("s1")]).unwrap();
        db.insert("session", vec![session("s1", 1), session("s1", 2)]).unwrap();

        db.set_chaos_hook(Some(Arc::new(ProbChaos::new(seed, 0.1))));
        for step in 0..30 {
            match rng.gen_range(0..4) {
                0 | 1 => {
                    let data: Vec<f64> = (0..rng.gen_range(1..4)).map(|x| x as f64).collect();
                    let _ = db.insert(
                        "scan",
                        vec![scan("s1", rng.gen_range(1..3), step, data)],
                    );
                }
                2 => {
                    let _ = db.delete(
                        "scan",
                        &Predicate::key(&[("scan_id", Value::Int(rng.gen_range(0..30)))]),
                    );
                }
                _ => {
                    let _ = db.gc();
                }
            }
        }
        db.set_chaos_hook(None);

        // Oracle: full scan of tuples vs objects.
        let mut referenced = std::collections::BTreeSet::new();
        for table in ["subject", "session", "scan"] {
            let rows = db.evaluate(&db.table(table).unwrap()).unwrap();
            for (i, _) in rows.rows.iter().enumerate() {
                for attr in rows.heading.names() {
                    if let Some(Value::Object(o)) = rows.value(i, attr) {
                        referenced.insert(o.address.path.clone());
                        assert!(
                            db.object_store().exists(&o.address.path).unwrap(),
                            "dangling reference {}",
                            o.address.path
                        );
                    }
                }
            }
        }
        db.gc().unwrap();
        let live: std::collections::BTreeSet<String> =
            payload_objects(&db).into_iter().collect();
        assert_eq!(live, referenced, "post-gc objects must equal referenced set");
    }
}

#[test]
fn observers_never_see_a_partial_master_part_group() {
    let mut db = lab_db();
    declare(
        &mut db,
        "scan__peak",
        Tier::Part,
        Some("scan"),
        "-> Scan\npeak_id : int64\n---\n",
    );
    db.insert("subject", vec![subject("s1")]).unwrap();
    db.insert("session", vec![session("s1", 1)]).unwrap();

    let db = std::sync::Arc::new(db);
    let stop = std::sync::Arc::new(std::sync::atomic::AtomicBool::new(false));

    let writer = {
        let db = db.clone();
        let stop = stop.clone();
        std::thread::spawn(move || {
            for k in 0..200i64 {
                let master = scan("s1", 1, k, vec![k as f64, 1.0]);
                let parts: Vec<RowMap> = (0..3)
                    .map(|p| {
                        row(&[
                            ("subject_id", Value::str("s1")),
                            ("session_id", Value::Int(1)),
                            ("scan_id", Value::Int(k)),
                            ("peak_id", Value::Int(p)),
                        ])
                    })
                    .collect();
                db.insert_group("scan", vec![master], vec![("scan__peak".into(), parts)])
                    .unwrap();
            }
            stop.store(true, std::sync::atomic::Ordering::SeqCst);
        })
    };

    let mut observations = 0usize;
    while !stop.load(std::sync::atomic::Ordering::SeqCst) {
        let masters = db.evaluate(&db.table("scan").unwrap()).unwrap();
        let parts = db.evaluate(&db.table("scan__peak").unwrap()).unwrap();
        // every master observed must already have its 3 parts, and every
        // part must have its master
        let master_keys: std::collections::BTreeSet<i64> = masters
            .rows
            .iter()
            .map(|r| match &r[masters.heading.index_of("scan_id").unwrap()] {
                Value::Int(i) => *i,
                _ => unreachable!(),
            })
            .collect();
        let mut part_counts: BTreeMap<i64, usize> = BTreeMap::new();
        for r in &parts.rows {
            if let Value::Int(i) = &r[parts.heading.index_of("scan_id").unwrap()] {
                *part_counts.entry(*i).or_insert(0) += 1;
            }
        }
        for k in &master_keys {
            assert_eq!(part_counts.get(k), Some(&3), "master {k} visible without its parts");
        }
        for k in part_counts.keys() {
            assert!(master_keys.contains(k), "parts of {k} visible without their master");
        }
        observations += 1;
    }
    writer.join().unwrap();
    assert!(observations > 0);
}

#[test]
fn jobs_prefix_is_reserved() {
    let mut db = Database::in_memory();
    let def = parse_definition(&DefinitionSource {
        text: "x : int64\n---\n".into(),
        schema_name: "lab".into(),
        table_name: "jobs__sneaky".into(),
        tier: Tier::Manual,
        master: None,
    })
    .unwrap();
    assert!(db.declare_table(def).is_err());
}

#[test]
fn cross_instance_visibility_through_files() {
    // Two Database instances over the same root simulate two processes.
    let store_dir = tempfile::tempdir().unwrap();
    let obj_dir = tempfile::tempdir().unwrap();
    let mut a = Database::open(store_dir.path(), obj_dir.path()).unwrap();
    declare(&mut a, "subject", Tier::Manual, None, "subject_id : varchar(16)\n---\n");
    let b = Database::open(store_dir.path(), obj_dir.path()).unwrap();

    a.insert("subject", vec![row(&[("subject_id", Value::str("s1"))])]).unwrap();
    assert_eq!(b.evaluate(&b.table("subject").unwrap()).unwrap().len(), 1);

    b.insert("subject", vec![row(&[("subject_id", Value::str("s2"))])]).unwrap();
    assert_eq!(a.evaluate(&a.table("subject").unwrap()).unwrap().len(), 2);
}

#[test]
fn union_conflicting_duplicate_detected() {
    // c1 and c2 share cid lineage (c2 inherits c1's key) and both carry a
    // dashed reference to a, so their headings are union-compatible; the
    // same cid can still point at different a rows.
    let mut db = Database::in_memory();
    declare(&mut db, "a", Tier::Manual, None, "ka : int64\n---\n");
    declare(&mut db, "c1", Tier::Manual, None, "cid : int64\n---\n-> A\n");
    declare(&mut db, "c2", Tier::Manual, None, "-> C1\n---\n-> A\n");
    db.insert("a", vec![row(&[("ka", Value::Int(1))]), row(&[("ka", Value::Int(2))])]).unwrap();
    db.insert("c1", vec![row(&[("cid", Value::Int(1)), ("ka", Value::Int(1))])]).unwrap();
    db.insert("c2", vec![row(&[("cid", Value::Int(1)), ("ka", Value::Int(2))])]).unwrap();

    let expr = db.table("c1").unwrap().union(&db.table("c2").unwrap()).unwrap();
    let err = db.evaluate(&expr).unwrap_err();
    assert!(err.to_string().contains("conflicting duplicate"), "{err}");

    // identical duplicate rows collapse to one
    db.insert("c1", vec![row(&[("cid", Value::Int(2)), ("ka", Value::Int(2))])]).unwrap();
    db.insert("c2", vec![row(&[("cid", Value::Int(2)), ("ka", Value::Int(2))])]).unwrap();
    let only_2 = db
        .table("c1")
        .unwrap()
        .restrict(Predicate::key(&[("cid", Value::Int(2))]), false)
        .unwrap()
        .union(
            &db.table("c2")
                .unwrap()
                .restrict(Predicate::key(&[("cid", Value::Int(2))]), false)
                .unwrap(),
        )
        .unwrap();
    assert_eq!(db.evaluate(&only_2).unwrap().len(), 1);
}
