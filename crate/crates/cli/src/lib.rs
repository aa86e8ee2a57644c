//! Command implementations for the `relatape` binary, plus the bundled
//! LC-MS demonstration pipeline. Exit codes are a stable contract:
//! 0 success, 1 operational error, 2 semantic mismatch, 3 storage failure.

pub mod fixture;
pub mod query;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use relatape::diagram::{emit_dot, DiagramOptions};
use relatape::dsl::{parse_definition, DefinitionSource};
use relatape::lineage::LineageError;
use relatape::storage::Database;
use relatape::types::json_to_value;
use relatape::value::{canonical_json_string, value_to_json};
use relatape::{
    AlgebraError, CmpOp, KeyRecord, ModelError, PopulateError, PopulateReport, Predicate,
    ResultSet, RowMap, StorageError, TableDef, Tier,
};

/// Where a pipeline lives on disk.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub store_root: PathBuf,
    pub object_root: PathBuf,
    pub worker_id: String,
}

impl PipelineConfig {
    /// Resolves paths and worker identity from flags and environment.
    /// `RELATAPE_STORE` and `RELATAPE_WORKER_ID` act as defaults.
    pub fn resolve(store: Option<PathBuf>, objects: Option<PathBuf>, worker: Option<String>) -> Result<PipelineConfig> {
        let store_root = store
            .or_else(|| std::env::var_os("RELATAPE_STORE").map(PathBuf::from))
            .ok_or_else(|| anyhow!("no store given: pass --store or set RELATAPE_STORE"))?;
        let object_root = objects.unwrap_or_else(|| store_root.join("objects"));
        let worker_id = worker
            .or_else(|| std::env::var("RELATAPE_WORKER_ID").ok())
            .unwrap_or_else(relatape::default_worker_id);
        Ok(PipelineConfig { store_root, object_root, worker_id })
    }

    pub fn open(&self) -> Result<Database> {
        let db = Database::open(&self.store_root, &self.object_root)?;
        fixture::register_makes(&db);
        Ok(db)
    }
}

/// Exit code classification for the process-level contract.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    fn algebra_code(e: &AlgebraError) -> i32 {
        match e {
            AlgebraError::Semantic(LineageError::SemanticMismatch { .. }) => 2,
            AlgebraError::Storage { .. } => 3,
            _ => 1,
        }
    }
    fn storage_code(e: &StorageError) -> i32 {
        match e {
            StorageError::Failure { .. } => 3,
            StorageError::Algebra(a) => algebra_code(a),
            _ => 1,
        }
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<AlgebraError>() {
            return algebra_code(e);
        }
        if let Some(e) = cause.downcast_ref::<StorageError>() {
            return storage_code(e);
        }
        if let Some(e) = cause.downcast_ref::<PopulateError>() {
            return match e {
                PopulateError::Storage(s) => storage_code(s),
                PopulateError::Algebra(a) => algebra_code(a),
                PopulateError::NotAutoPopulated { .. } => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<LineageError>() {
            return match e {
                LineageError::SemanticMismatch { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

// -- init -----------------------------------------------------------------------

/// Creates the store roots and an empty registry manifest. Idempotent.
pub fn cmd_init(config: &PipelineConfig) -> Result<String> {
    let db = Database::open(&config.store_root, &config.object_root)?;
    drop(db);
    let manifest = config.store_root.join("manifest");
    if !manifest.exists() {
        std::fs::write(&manifest, b"").context("writing empty manifest")?;
    }
    Ok(format!(
        "initialized store at {} (objects at {})",
        config.store_root.display(),
        config.object_root.display()
    ))
}

// -- declare ----------------------------------------------------------------------

/// Parses `<TableName>[.<PartName>].<tier>.djt`.
pub fn parse_djt_filename(filename: &str) -> Option<(String, Tier, Option<String>)> {
    let stem = filename.strip_suffix(".djt")?;
    let parts: Vec<&str> = stem.split('.').collect();
    match parts.as_slice() {
        [name, tier] => {
            let tier = Tier::parse(tier)?;
            if tier == Tier::Part {
                return None; // a part needs a master segment
            }
            Some((relatape::dsl::camel_to_snake(name), tier, None))
        }
        [master, part, tier] if Tier::parse(tier) == Some(Tier::Part) => {
            let master = relatape::dsl::camel_to_snake(master);
            let part = relatape::dsl::camel_to_snake(part);
            Some((format!("{master}__{part}"), Tier::Part, Some(master)))
        }
        _ => None,
    }
}

/// Loads a directory of `.djt` files and declares them in dependency
/// order (two passes: filenames first, then bodies).
pub fn cmd_declare(db: &mut Database, dir: &Path, schema: Option<&str>) -> Result<String> {
    let schema_name = match schema {
        Some(s) => s.to_string(),
        None => dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .ok_or_else(|| anyhow!("cannot derive a schema name from {}", dir.display()))?,
    };

    let mut files: Vec<String> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().to_string())
        .filter(|n| n.ends_with(".djt"))
        .collect();
    files.sort();

    // pass one: names
    let mut defs: BTreeMap<String, TableDef> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for file in &files {
        let (table, tier, master) = parse_djt_filename(file)
            .ok_or_else(|| anyhow!("bad definition filename {file}: want Name.tier.djt"))?;
        let text = std::fs::read_to_string(dir.join(file))?;
        let def = parse_definition(&DefinitionSource {
            text,
            schema_name: schema_name.clone(),
            table_name: table.clone(),
            tier,
            master,
        })
        .map_err(|e| anyhow!("{file}: {e}"))?;
        if defs.insert(table.clone(), def).is_some() {
            bail!("table {table} defined twice in {}", dir.display());
        }
        order.push(table);
    }

    // pass two: bodies give the dependency order
    let sorted = topo_sort_defs(&defs, &order)?;
    let mut declared = 0;
    for name in sorted {
        db.declare_table(defs[&name].clone())
            .with_context(|| format!("declaring {name}"))?;
        declared += 1;
    }
    Ok(format!("{declared} tables declared into schema {schema_name}"))
}

fn topo_sort_defs(defs: &BTreeMap<String, TableDef>, order: &[String]) -> Result<Vec<String>> {
    let mut remaining: Vec<String> = order.to_vec();
    let mut done: Vec<String> = Vec::new();
    let placed = |done: &[String], def: &TableDef| {
        def.foreign_keys.iter().all(|fk| {
            fk.parent.schema.is_some()
                || !defs.contains_key(&fk.parent.table)
                || done.contains(&fk.parent.table)
        })
    };
    while !remaining.is_empty() {
        let before = remaining.len();
        remaining.retain(|name| {
            if placed(&done, &defs[name]) {
                done.push(name.clone());
                false
            } else {
                true
            }
        });
        if remaining.len() == before {
            let a = remaining[0].clone();
            let b = defs[&a]
                .foreign_keys
                .iter()
                .find(|fk| remaining.contains(&fk.parent.table))
                .map(|fk| fk.parent.table.clone())
                .unwrap_or_else(|| remaining.last().unwrap().clone());
            return Err(ModelError::CycleError { a, b }.into());
        }
    }
    Ok(done)
}

// -- insert ------------------------------------------------------------------------

/// Reads canonical JSON lines into row maps. Codec attributes may be given
/// inline (`{"$array": ...}`, arrays, base64 strings) or as
/// `{"$file": path, "$codec": id}` referencing a payload file relative to
/// the rows file.
pub fn read_rows_file(db: &Database, table: &str, path: &Path) -> Result<Vec<RowMap>> {
    let t = db.registry().resolve_name(table).map_err(StorageError::Model)?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: serde_json::Value = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: bad json", path.display(), lineno + 1))?;
        let obj = parsed
            .as_object()
            .ok_or_else(|| anyhow!("{}:{}: row is not an object", path.display(), lineno + 1))?;
        let mut row = RowMap::new();
        for (name, j) in obj {
            let attr = t
                .attr(name)
                .ok_or_else(|| anyhow!("{}:{}: unknown attribute {name}", path.display(), lineno + 1))?;
            let value = if let Some(fileref) = j.get("$file").and_then(|v| v.as_str()) {
                let codec_id = j
                    .get("$codec")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| anyhow!("$file reference needs a $codec"))?;
                let payload = std::fs::read(base.join(fileref))
                    .with_context(|| format!("reading payload {fileref}"))?;
                let codec = db.codecs().resolve_latest(codec_id)?;
                codec.value_from_payload(&payload)?
            } else {
                json_to_value(&attr.type_spec, j).map_err(|e| {
                    anyhow!("{}:{}: attribute {name}: {e}", path.display(), lineno + 1)
                })?
            };
            row.insert(name.clone(), value);
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn cmd_insert(db: &Database, table: &str, file: &Path) -> Result<String> {
    let rows = read_rows_file(db, table, file)?;
    let report = db.insert(table, rows)?;
    Ok(format!("{} inserted, {} no-op", report.inserted, report.noop))
}

// -- populate -----------------------------------------------------------------------

/// Runs populate with N in-process workers and merges the reports.
pub fn populate_parallel(
    db: &Database,
    table: &str,
    worker_base: &str,
    workers: usize,
    limit: Option<usize>,
) -> Result<PopulateReport> {
    if workers <= 1 {
        return Ok(db.populate(table, worker_base, limit)?);
    }
    let mut merged = PopulateReport::default();
    let results: Vec<Result<PopulateReport, PopulateError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let worker_id = format!("{worker_base}:{w}");
                s.spawn(move || db.populate(table, &worker_id, limit))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
    });
    for r in results {
        let r = r?;
        merged.succeeded += r.succeeded;
        merged.failed += r.failed;
        merged.skipped += r.skipped;
    }
    Ok(merged)
}

pub fn cmd_populate(
    db: &Database,
    table: &str,
    worker_base: &str,
    workers: usize,
    limit: Option<usize>,
    json: bool,
) -> Result<String> {
    let report = populate_parallel(db, table, worker_base, workers, limit)?;
    if json {
        Ok(canonical_json_string(&serde_json::json!({
            "succeeded": report.succeeded,
            "failed": report.failed,
            "skipped": report.skipped,
        })))
    } else {
        Ok(format!(
            "succeeded {}, failed {}, skipped {}",
            report.succeeded, report.failed, report.skipped
        ))
    }
}

// -- query --------------------------------------------------------------------------

pub fn render_rows(result: &ResultSet) -> String {
    let names = result.heading.names();
    let mut out = String::new();
    for row in &result.rows {
        let mut map = serde_json::Map::new();
        for (name, value) in names.iter().zip(row) {
            map.insert(name.to_string(), value_to_json(value));
        }
        out.push_str(&canonical_json_string(&serde_json::Value::Object(map)));
        out.push('\n');
    }
    out
}

pub fn cmd_query(db: &Database, pipeline: &str, json: bool) -> Result<String> {
    let expr = query::parse_pipeline(db, pipeline)?;
    let result = db.evaluate(&expr)?;
    if json {
        let heading: Vec<serde_json::Value> = result
            .heading
            .attrs
            .iter()
            .map(|a| {
                serde_json::json!({
                    "name": a.name,
                    "type": a.type_spec.render(),
                    "in_key": a.in_pk,
                })
            })
            .collect();
        let rows: Vec<serde_json::Value> = result
            .rows
            .iter()
            .map(|row| {
                let mut map = serde_json::Map::new();
                for (a, v) in result.heading.attrs.iter().zip(row) {
                    map.insert(a.name.clone(), value_to_json(v));
                }
                serde_json::Value::Object(map)
            })
            .collect();
        Ok(canonical_json_string(&serde_json::json!({"heading": heading, "rows": rows})))
    } else {
        Ok(render_rows(&result))
    }
}

// -- delete / gc ----------------------------------------------------------------------

/// Builds a typed predicate from `attr=value` arguments.
pub fn parse_restriction(db: &Database, table: &str, args: &[String]) -> Result<Predicate> {
    let expr = db.table(table)?;
    let mut pred = Predicate::new();
    for arg in args {
        let (attr, value) = arg
            .split_once('=')
            .ok_or_else(|| anyhow!("restrictions are attr=value, got {arg:?}"))?;
        let spec = expr
            .heading()
            .attr(attr.trim())
            .map(|a| a.type_spec.clone())
            .ok_or_else(|| anyhow!("unknown attribute {attr}"))?;
        pred = pred.and_cmp(attr.trim(), CmpOp::Eq, query::parse_literal(&spec, value)?);
    }
    Ok(pred)
}

pub fn cmd_delete(db: &Database, table: &str, args: &[String], json: bool) -> Result<String> {
    let pred = parse_restriction(db, table, args)?;
    let report = db.delete(table, &pred)?;
    if json {
        Ok(canonical_json_string(&serde_json::json!({
            "rows_removed": report.rows_removed,
            "objects_released": report.objects_released,
        })))
    } else {
        let mut out = String::new();
        for (table, count) in &report.rows_removed {
            out.push_str(&format!("{table}: {count} rows\n"));
        }
        out.push_str(&format!("objects released: {}", report.objects_released));
        Ok(out)
    }
}

pub fn cmd_gc(db: &Database, json: bool) -> Result<String> {
    let report = db.gc()?;
    if json {
        Ok(canonical_json_string(&serde_json::json!({
            "scanned": report.scanned,
            "referenced": report.referenced,
            "deleted": report.deleted,
        })))
    } else {
        Ok(format!(
            "scanned {}, referenced {}, deleted {}",
            report.scanned, report.referenced, report.deleted
        ))
    }
}

// -- status / errors ---------------------------------------------------------------------

pub fn cmd_status(db: &Database, table: &str, json: bool) -> Result<String> {
    let status = db.job_status(table)?;
    if json {
        let records: Vec<serde_json::Value> = status
            .records
            .iter()
            .map(|r| {
                serde_json::json!({
                    "key_hash": r.key_hash,
                    "key": r.key.iter().map(|(k, v)| (k.clone(), value_to_json(v))).collect::<serde_json::Map<_,_>>(),
                    "status": match r.status { relatape::JobStatus::Reserved => "reserved", relatape::JobStatus::Error => "error" },
                    "worker_id": r.worker_id,
                    "reserved_at": relatape::value::format_datetime(r.reserved_at),
                    "error_message": r.error_message,
                })
            })
            .collect();
        Ok(canonical_json_string(&serde_json::json!({
            "pending": status.pending,
            "reserved": status.reserved,
            "error": status.error,
            "done": status.done,
            "records": records,
        })))
    } else {
        let mut out = format!(
            "pending {}, reserved {}, error {}, done {}\n",
            status.pending, status.reserved, status.error, status.done
        );
        for r in &status.records {
            out.push_str(&format!(
                "{} {} worker={} key={}",
                r.key_hash,
                match r.status {
                    relatape::JobStatus::Reserved => "reserved",
                    relatape::JobStatus::Error => "error",
                },
                r.worker_id,
                crate::render_key(&r.key),
            ));
            if let Some(m) = &r.error_message {
                out.push_str(&format!(" error={m}"));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn render_key(key: &KeyRecord) -> String {
    let pairs: Vec<String> = key.iter().map(|(k, v)| format!("{k}={v}")).collect();
    pairs.join(",")
}

pub fn cmd_clear_errors(
    db: &Database,
    table: &str,
    args: &[String],
    stale_after: Option<f64>,
) -> Result<String> {
    let restriction = if args.is_empty() {
        None
    } else {
        let expr = db.table(table)?;
        let mut key = KeyRecord::new();
        for arg in args {
            let (attr, value) = arg
                .split_once('=')
                .ok_or_else(|| anyhow!("restrictions are attr=value, got {arg:?}"))?;
            let spec = expr
                .heading()
                .attr(attr.trim())
                .map(|a| a.type_spec.clone())
                .ok_or_else(|| anyhow!("unknown attribute {attr}"))?;
            key.insert(attr.trim().to_string(), query::parse_literal(&spec, value)?);
        }
        Some(key)
    };
    let errors = db.clear_errors(table, restriction.as_ref())?;
    let mut out = format!("{errors} error records cleared");
    if let Some(secs) = stale_after {
        let stale = db.clear_stale(table, std::time::Duration::from_secs_f64(secs))?;
        out.push_str(&format!(", {stale} stale reservations cleared"));
    }
    Ok(out)
}

// -- diagram / lineage / lint -----------------------------------------------------------

pub fn cmd_diagram(db: &Database, schema: Option<String>, show_attrs: bool) -> Result<String> {
    Ok(emit_dot(db.registry(), &DiagramOptions { schema, show_attrs })?)
}

pub fn cmd_lineage(db: &Database, target: &str) -> Result<String> {
    let (table, attr) = target
        .rsplit_once('.')
        .ok_or_else(|| anyhow!("lineage target is table.attribute, got {target:?}"))?;
    let expr = db.table(table)?;
    let heading_attr = expr
        .heading()
        .attr(attr)
        .ok_or_else(|| LineageError::UnknownAttribute { name: target.to_string() })?;
    let mut out = String::new();
    for origin in &heading_attr.origins {
        out.push_str(&format!("{origin}\n"));
    }
    Ok(out)
}

pub fn cmd_lint(db: &Database) -> Result<String> {
    let diags = relatape::lint_workflow_normalization(db.registry());
    if diags.is_empty() {
        return Ok("no diagnostics".into());
    }
    Ok(diags.iter().map(|d| format!("{d}\n")).collect())
}

pub fn cmd_snapshot(db: &Database) -> Result<String> {
    Ok(String::from_utf8_lossy(&db.snapshot_bytes()?).to_string())
}

// -- demo ---------------------------------------------------------------------------------

pub fn cmd_demo(config: &PipelineConfig, workers: usize, emit_schema: Option<&Path>) -> Result<String> {
    if let Some(dir) = emit_schema {
        fixture::write_schema_dir(dir)?;
    }
    let mut db = Database::open(&config.store_root, &config.object_root)?;
    let summary = fixture::run_demo(&mut db, workers, &config.worker_id)?;
    let mut out = String::new();
    out.push_str(&format!(
        "acquisition: succeeded {}, failed {}, skipped {}\n",
        summary.acquisition.succeeded, summary.acquisition.failed, summary.acquisition.skipped
    ));
    out.push_str(&format!(
        "spectrum:    succeeded {}, failed {}, skipped {}\n",
        summary.spectrum.succeeded, summary.spectrum.failed, summary.spectrum.skipped
    ));
    out.push_str(&format!(
        "peaks:       succeeded {}, failed {}, skipped {}\n",
        summary.peaks.succeeded, summary.peaks.failed, summary.peaks.skipped
    ));
    let peaks = cmd_query(&db, "peak_detection | aggr peak_detection__peak count->peaks_found", false)?;
    out.push_str(&peaks);
    Ok(out)
}

/// Convenience used by tests: a fully populated in-memory fixture.
pub fn demo_in_memory(workers: usize) -> Result<Database> {
    let mut db = Database::in_memory();
    fixture::run_demo(&mut db, workers, "test")?;
    Ok(db)
}
