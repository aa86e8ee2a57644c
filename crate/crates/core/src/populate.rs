//! Deterministic derivation of Imported/Computed tables.
//!
//! Pending work is derived from schema state: the join of the target's
//! identity-inheriting parents' key projections, minus keys already present
//! in the target, minus keys with active job records. Workers claim a key
//! by an optimistic unique insert into the target's job table; a conflict
//! means another worker holds it. The make callback runs outside any
//! storage transaction; its results are inserted atomically together with
//! the deletion of the job record, after re-verifying the key is still
//! absent. Success therefore leaves no job record: the target row itself
//! signals completion. Errors persist in the job table until cleared.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::algebra::{AlgebraError, QueryExpr, ResultSet};
use crate::model::{RegisteredTable, TableId};
use crate::storage::{
    job_table_name, Database, InsertOptions, StorageError,
};
use crate::types::{hash_key, json_to_value, LazyRef, TypeError};
use crate::value::{sort_key, value_to_json, Row, Value};

#[derive(Debug, Error)]
pub enum PopulateError {
    #[error("table {table} is not auto-populated: {reason}")]
    NotAutoPopulated { table: String, reason: String },
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// The key of one pending computation: the target's inherited primary-key
/// attributes.
pub type KeyRecord = BTreeMap<String, Value>;

/// What a make callback returns: one master row plus rows for each part
/// table. Part rows may omit the master's key attributes; they are filled
/// in from the master row.
#[derive(Debug, Default)]
pub struct MakeOutput {
    pub master: crate::storage::RowMap,
    pub parts: Vec<(String, Vec<crate::storage::RowMap>)>,
}

/// A captured make failure, recorded in the job table.
#[derive(Debug)]
pub struct MakeError {
    pub message: String,
    pub stack: Option<String>,
}

impl MakeError {
    pub fn new(message: impl Into<String>) -> MakeError {
        MakeError { message: message.into(), stack: None }
    }
}

impl<E: std::error::Error> From<E> for MakeError {
    fn from(e: E) -> MakeError {
        MakeError { message: e.to_string(), stack: Some(format!("{e:?}")) }
    }
}

/// Derivation callback for an Imported/Computed table. Must be pure with
/// respect to the store given the key, and must return the key's attributes
/// unmodified in the master row.
pub trait Make: Send + Sync {
    fn make(&self, key: &KeyRecord, ctx: &MakeContext<'_>) -> Result<MakeOutput, MakeError>;
}

impl<F> Make for F
where
    F: Fn(&KeyRecord, &MakeContext<'_>) -> Result<MakeOutput, MakeError> + Send + Sync,
{
    fn make(&self, key: &KeyRecord, ctx: &MakeContext<'_>) -> Result<MakeOutput, MakeError> {
        self(key, ctx)
    }
}

/// Read-only query context handed to make callbacks, limited to the
/// target's ancestors in the dependency DAG.
pub struct MakeContext<'a> {
    db: &'a Database,
    target: TableId,
    ancestors: BTreeSet<TableId>,
}

impl MakeContext<'_> {
    /// Query expression over an upstream table. Reading a table that is not
    /// an ancestor of the target is an error: dependencies must be declared.
    pub fn table(&self, name: &str) -> Result<QueryExpr, MakeError> {
        let id = self
            .db
            .registry()
            .resolve_name(name)
            .map_err(|e| MakeError::new(e.to_string()))?
            .id
            .clone();
        if !self.ancestors.contains(&id) {
            return Err(MakeError::new(format!(
                "table {id} is not an ancestor of {}; declare the dependency",
                self.target
            )));
        }
        self.db.table(name).map_err(|e| MakeError::new(e.to_string()))
    }

    pub fn fetch(&self, expr: &QueryExpr) -> Result<ResultSet, MakeError> {
        self.db.evaluate(expr).map_err(|e| MakeError::new(e.to_string()))
    }

    /// Lazy reference for a stored codec value from a fetched row.
    pub fn lazy(&self, value: &Value) -> Result<LazyRef, MakeError> {
        self.db.lazy_ref(value).map_err(|e: TypeError| MakeError::new(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobStatus {
    Reserved,
    Error,
}

impl JobStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            JobStatus::Reserved => "reserved",
            JobStatus::Error => "error",
        }
    }
}

/// One coordination row of a job table.
#[derive(Debug, Clone)]
pub struct JobRecord {
    pub table_name: String,
    pub key_hash: String,
    pub key: KeyRecord,
    pub status: JobStatus,
    pub worker_id: String,
    /// Microseconds since the epoch.
    pub reserved_at: i64,
    pub error_message: Option<String>,
    pub error_stack: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PopulateReport {
    pub succeeded: usize,
    pub failed: usize,
    /// Keys another worker claimed first (or completed concurrently).
    pub skipped: usize,
}

#[derive(Debug)]
pub struct JobStatusReport {
    pub records: Vec<JobRecord>,
    pub pending: usize,
    pub reserved: usize,
    pub error: usize,
    /// Rows already present in the target.
    pub done: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Inserted,
    Failed,
    /// The key was already present at insert time (a stale duplicate
    /// reservation); nothing was written.
    AlreadyPresent,
}

/// `<hostname>:<pid>`, the default worker identity.
pub fn default_worker_id() -> String {
    let host = std::fs::read_to_string("/proc/sys/kernel/hostname")
        .ok()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .or_else(|| std::env::var("HOSTNAME").ok())
        .unwrap_or_else(|| "host".to_string());
    format!("{host}:{}", std::process::id())
}

fn now_micros() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as i64)
        .unwrap_or(0)
}

impl Database {
    /// Tables a make callback may read: the target's ancestors plus their
    /// part tables (a master and its parts form one entity unit).
    fn readable_ancestors(&self, target: &TableId) -> BTreeSet<TableId> {
        let mut out: BTreeSet<TableId> =
            self.registry().ancestors_of(target).into_iter().collect();
        for ancestor in out.clone() {
            for child in self.registry().children_of(&ancestor) {
                let is_part_of_ancestor = child.def.tier == crate::model::Tier::Part
                    && child.def.master.as_deref() == Some(ancestor.table.as_str());
                if is_part_of_ancestor {
                    out.insert(child.id.clone());
                }
            }
        }
        out
    }

    fn auto_target(&self, table: &str) -> Result<(RegisteredTable, TableId), PopulateError> {
        let t = self.registry().resolve_name(table).map_err(StorageError::Model)?;
        if !t.def.tier.is_auto_populated() {
            return Err(PopulateError::NotAutoPopulated {
                table: t.id.to_string(),
                reason: format!("tier is {}", t.def.tier),
            });
        }
        Ok((t.clone(), TableId::new(&t.id.schema, &job_table_name(&t.id.table))))
    }

    /// The target's inherited primary-key attribute names, in key order.
    fn inherited_key_attrs(target: &RegisteredTable) -> Vec<String> {
        target
            .attrs
            .iter()
            .filter(|a| a.in_pk && !a.declared_here)
            .map(|a| a.name.clone())
            .collect()
    }

    fn job_key_hash(
        target: &RegisteredTable,
        key: &KeyRecord,
    ) -> Result<String, PopulateError> {
        let attrs = Self::inherited_key_attrs(target);
        let mut pairs: Vec<(&str, &Value)> = Vec::with_capacity(attrs.len());
        for name in &attrs {
            let v = key.get(name).ok_or_else(|| PopulateError::Storage(StorageError::Failure {
                detail: format!("key record missing attribute {name}"),
            }))?;
            pairs.push((name, v));
        }
        Ok(hex::encode(hash_key(&pairs)))
    }

    /// The query defining this table's key source: the join of its
    /// identity-inheriting parents' key projections.
    pub fn key_source(&self, table: &str) -> Result<QueryExpr, PopulateError> {
        let (target, _) = self.auto_target(table)?;
        let solid: Vec<_> = target.fks.iter().filter(|fk| fk.into_primary_key).collect();
        if solid.is_empty() {
            return Err(PopulateError::NotAutoPopulated {
                table: target.id.to_string(),
                reason: "no identity-inheriting foreign key to derive keys from".into(),
            });
        }
        let mut expr: Option<QueryExpr> = None;
        for fk in solid {
            let parent = self.table(&fk.parent.to_string())?;
            let renames: Vec<(&str, &str)> = fk
                .map
                .iter()
                .filter(|(child, parent_attr)| child != parent_attr)
                .map(|(child, parent_attr)| (child.as_str(), parent_attr.as_str()))
                .collect();
            let keys_only = parent.project(&[], &renames, &[])?;
            expr = Some(match expr {
                None => keys_only,
                Some(e) => e.join(&keys_only)?,
            });
        }
        Ok(expr.unwrap())
    }

    /// Keys that still need computing: the key source minus existing target
    /// rows minus keys with active job records. Sorted and deterministic.
    pub fn pending_keys(&self, table: &str) -> Result<Vec<KeyRecord>, PopulateError> {
        let (target, job_id) = self.auto_target(table)?;
        let source = self.key_source(table)?;
        let target_expr = self.table(&target.id.to_string())?;
        let fresh = source.restrict_rel(&target_expr, true)?;
        let result = self.evaluate(&fresh)?;

        let recorded: BTreeSet<String> = {
            let guard = self.store().read_guard().map_err(PopulateError::Storage)?;
            let meta = guard.meta(&job_id).ok_or_else(|| {
                PopulateError::Storage(StorageError::UnknownTable { name: job_id.to_string() })
            })?;
            let hash_idx = meta.attr_index("key_hash").unwrap();
            guard
                .scan(&job_id)
                .map_err(PopulateError::Storage)?
                .into_iter()
                .filter_map(|r| match &r[hash_idx] {
                    Value::Str(s) => Some(s.clone()),
                    _ => None,
                })
                .collect()
        };

        let names = result.heading.names();
        let mut keys = Vec::new();
        for row in &result.rows {
            let key: KeyRecord = names
                .iter()
                .map(|n| n.to_string())
                .zip(row.iter().cloned())
                .collect();
            let hash = Self::job_key_hash(&target, &key)?;
            if !recorded.contains(&hash) {
                keys.push(key);
            }
        }

        let order = Self::inherited_key_attrs(&target);
        keys.sort_by_key(|k| {
            let vals: Vec<Value> = order.iter().map(|n| k[n].clone()).collect();
            sort_key(&vals)
        });
        Ok(keys)
    }

    /// Claims a key via optimistic unique insert into the job table. True
    /// iff this worker now holds the reservation; never blocks.
    pub fn reserve(
        &self,
        table: &str,
        key: &KeyRecord,
        worker_id: &str,
    ) -> Result<bool, PopulateError> {
        let (target, job_id) = self.auto_target(table)?;
        let hash = Self::job_key_hash(&target, key)?;
        let row = self.job_row(
            &job_id,
            &hash,
            key,
            JobStatus::Reserved,
            worker_id,
            None,
            None,
        )?;
        Ok(self.store().atomic_insert_unique(&job_id, row)?)
    }

    fn job_row(
        &self,
        job_id: &TableId,
        hash: &str,
        key: &KeyRecord,
        status: JobStatus,
        worker_id: &str,
        error_message: Option<&str>,
        error_stack: Option<&str>,
    ) -> Result<Row, PopulateError> {
        let mut key_json = serde_json::Map::new();
        for (k, v) in key {
            key_json.insert(k.clone(), value_to_json(v));
        }
        let clip = |s: &str| -> Value {
            Value::Str(s.chars().take(65535).collect())
        };
        let guard = self.store().read_guard().map_err(PopulateError::Storage)?;
        let meta = guard.meta(job_id).ok_or_else(|| {
            PopulateError::Storage(StorageError::UnknownTable { name: job_id.to_string() })
        })?;
        let mut row = Vec::with_capacity(meta.attrs.len());
        for attr in &meta.attrs {
            row.push(match attr.name.as_str() {
                "key_hash" => Value::Str(hash.to_string()),
                "key" => Value::Json(serde_json::Value::Object(key_json.clone())),
                "status" => Value::Str(status.as_str().to_string()),
                "worker_id" => clip(worker_id),
                "reserved_at" => Value::DateTime(now_micros()),
                "error_message" => error_message.map(clip).unwrap_or(Value::Null),
                "error_stack" => error_stack.map(clip).unwrap_or(Value::Null),
                other => {
                    return Err(PopulateError::Storage(StorageError::Failure {
                        detail: format!("unexpected job table attribute {other}"),
                    }))
                }
            });
        }
        Ok(row)
    }

    /// Executes the make callback for a reserved key and inserts its output
    /// atomically, deleting the job record in the same transaction. The
    /// callback runs outside any storage transaction. A callback error is
    /// captured into the job record, not propagated.
    pub fn run_make(
        &self,
        table: &str,
        key: &KeyRecord,
        worker_id: &str,
    ) -> Result<RunOutcome, PopulateError> {
        let (target, job_id) = self.auto_target(table)?;
        let make = self.make_for(&target.id).ok_or_else(|| PopulateError::NotAutoPopulated {
            table: target.id.to_string(),
            reason: "no make callback registered".into(),
        })?;
        let hash = Self::job_key_hash(&target, key)?;

        let ctx = MakeContext {
            db: self,
            target: target.id.clone(),
            ancestors: self.readable_ancestors(&target.id),
        };
        let result = catch_unwind(AssertUnwindSafe(|| make.make(key, &ctx)));

        let output = match result {
            Ok(Ok(output)) => output,
            Ok(Err(e)) => {
                self.record_error(&job_id, &hash, worker_id, &e.message, e.stack.as_deref())?;
                return Ok(RunOutcome::Failed);
            }
            Err(panic) => {
                let message = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "make panicked".to_string());
                self.record_error(&job_id, &hash, worker_id, &message, None)?;
                return Ok(RunOutcome::Failed);
            }
        };

        // The master row must carry the key unmodified.
        for (name, expected) in key {
            let spec = target.attr(name).map(|a| a.type_spec.clone());
            let got = output.master.get(name).and_then(|v| {
                spec.as_ref().and_then(|s| s.conform(v).ok())
            });
            if got.as_ref() != Some(expected) {
                self.record_error(
                    &job_id,
                    &hash,
                    worker_id,
                    &format!("make did not return key attribute {name} unmodified"),
                    None,
                )?;
                return Ok(RunOutcome::Failed);
            }
        }

        let mut batch = vec![(target.id.clone(), vec![output.master.clone()])];
        for (part_name, rows) in &output.parts {
            let part = self
                .registry()
                .resolve_name(part_name)
                .map_err(StorageError::Model)?;
            if part.def.master.as_deref() != Some(target.id.table.as_str()) {
                return Err(PopulateError::Storage(StorageError::InvalidOperation {
                    detail: format!("{} is not a part of {}", part.id, target.id),
                }));
            }
            let filled: Vec<_> = rows
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    for a in target.primary_key() {
                        if !r.contains_key(&a.name) {
                            if let Some(v) = output.master.get(&a.name) {
                                r.insert(a.name.clone(), v.clone());
                            }
                        }
                    }
                    r
                })
                .collect();
            batch.push((part.id.clone(), filled));
        }

        let key_pairs: Vec<(String, Value)> = Self::inherited_key_attrs(&target)
            .into_iter()
            .map(|n| {
                let v = key[&n].clone();
                (n, v)
            })
            .collect();
        let job_key = sort_key(&[Value::Str(hash.clone())]);
        let outcome = self.exec_insert(
            batch,
            InsertOptions {
                verify_absent: Some((target.id.clone(), key_pairs)),
                complete_job: Some((job_id, job_key)),
            },
        )?;
        Ok(if outcome.already_present { RunOutcome::AlreadyPresent } else { RunOutcome::Inserted })
    }

    fn record_error(
        &self,
        job_id: &TableId,
        hash: &str,
        worker_id: &str,
        message: &str,
        stack: Option<&str>,
    ) -> Result<(), PopulateError> {
        let key_bytes = sort_key(&[Value::Str(hash.to_string())]);
        let mut txn = self.store().begin().map_err(PopulateError::Storage)?;
        let meta = txn.meta(job_id).map_err(PopulateError::Storage)?;
        let existing = txn.get(job_id, &key_bytes).map_err(PopulateError::Storage)?;
        let Some(row) = existing else {
            // Our reservation was cleared as stale; leave no record.
            txn.rollback();
            return Ok(());
        };
        let widx = meta.attr_index("worker_id").unwrap();
        let sidx = meta.attr_index("status").unwrap();
        if row[widx] != Value::str(worker_id) || row[sidx] != Value::str("reserved") {
            txn.rollback();
            return Ok(());
        }
        let clip = |s: &str| Value::Str(s.chars().take(65535).collect::<String>());
        let mut updated = row.clone();
        updated[sidx] = Value::str(JobStatus::Error.as_str());
        updated[meta.attr_index("error_message").unwrap()] = clip(message);
        updated[meta.attr_index("error_stack").unwrap()] =
            stack.map(clip).unwrap_or(Value::Null);
        txn.put_row(job_id, updated).map_err(PopulateError::Storage)?;
        txn.commit().map_err(PopulateError::Storage)?;
        Ok(())
    }

    /// Computes every pending key, reserving each before running its make.
    /// Re-running immediately after a full success reports zero work.
    pub fn populate(
        &self,
        table: &str,
        worker_id: &str,
        limit: Option<usize>,
    ) -> Result<PopulateReport, PopulateError> {
        let (target, _) = self.auto_target(table)?;
        if self.make_for(&target.id).is_none() {
            return Err(PopulateError::NotAutoPopulated {
                table: target.id.to_string(),
                reason: "no make callback registered".into(),
            });
        }
        let mut keys = self.pending_keys(table)?;
        if let Some(limit) = limit {
            keys.truncate(limit);
        }
        let mut report = PopulateReport::default();
        for key in keys {
            if !self.reserve(table, &key, worker_id)? {
                report.skipped += 1;
                continue;
            }
            match self.run_make(table, &key, worker_id)? {
                RunOutcome::Inserted => report.succeeded += 1,
                RunOutcome::Failed => report.failed += 1,
                RunOutcome::AlreadyPresent => report.skipped += 1,
            }
        }
        Ok(report)
    }

    /// Read-only snapshot of the job table plus progress counts.
    pub fn job_status(&self, table: &str) -> Result<JobStatusReport, PopulateError> {
        let (target, job_id) = self.auto_target(table)?;
        let key_specs: Vec<(String, crate::types::TypeSpec)> = target
            .attrs
            .iter()
            .filter(|a| a.in_pk)
            .map(|a| (a.name.clone(), a.type_spec.clone()))
            .collect();

        let (rows, meta, done) = {
            let guard = self.store().read_guard().map_err(PopulateError::Storage)?;
            let meta = guard.meta(&job_id).ok_or_else(|| {
                PopulateError::Storage(StorageError::UnknownTable { name: job_id.to_string() })
            })?;
            let rows = guard.scan(&job_id).map_err(PopulateError::Storage)?;
            let done = guard.row_count(&target.id);
            (rows, meta, done)
        };

        let idx = |n: &str| meta.attr_index(n).unwrap();
        let mut records = Vec::with_capacity(rows.len());
        for row in rows {
            let key_json = match &row[idx("key")] {
                Value::Json(serde_json::Value::Object(m)) => m.clone(),
                _ => Default::default(),
            };
            let mut key = KeyRecord::new();
            for (name, spec) in &key_specs {
                if let Some(j) = key_json.get(name) {
                    if let Ok(v) = json_to_value(spec, j) {
                        key.insert(name.clone(), v);
                    }
                }
            }
            let as_str = |v: &Value| match v {
                Value::Str(s) => Some(s.clone()),
                _ => None,
            };
            records.push(JobRecord {
                table_name: target.id.to_string(),
                key_hash: as_str(&row[idx("key_hash")]).unwrap_or_default(),
                key,
                status: match &row[idx("status")] {
                    Value::Str(s) if s == "error" => JobStatus::Error,
                    _ => JobStatus::Reserved,
                },
                worker_id: as_str(&row[idx("worker_id")]).unwrap_or_default(),
                reserved_at: match &row[idx("reserved_at")] {
                    Value::DateTime(us) => *us,
                    _ => 0,
                },
                error_message: as_str(&row[idx("error_message")]),
                error_stack: as_str(&row[idx("error_stack")]),
            });
        }

        let reserved = records.iter().filter(|r| r.status == JobStatus::Reserved).count();
        let error = records.iter().filter(|r| r.status == JobStatus::Error).count();
        let pending = self.pending_keys(table)?.len();
        Ok(JobStatusReport { records, pending, reserved, error, done })
    }

    /// Deletes matching error records, making their keys pending again.
    /// With a restriction, only records whose key matches every given
    /// attribute are cleared.
    pub fn clear_errors(
        &self,
        table: &str,
        restriction: Option<&KeyRecord>,
    ) -> Result<usize, PopulateError> {
        self.clear_job_records(table, JobStatus::Error, restriction, None)
    }

    /// Deletes reservations older than `stale_after` (abandoned by crashed
    /// workers), making their keys pending again.
    pub fn clear_stale(
        &self,
        table: &str,
        stale_after: Duration,
    ) -> Result<usize, PopulateError> {
        self.clear_job_records(table, JobStatus::Reserved, None, Some(stale_after))
    }

    fn clear_job_records(
        &self,
        table: &str,
        status: JobStatus,
        restriction: Option<&KeyRecord>,
        older_than: Option<Duration>,
    ) -> Result<usize, PopulateError> {
        let (target, job_id) = self.auto_target(table)?;
        let cutoff = older_than.map(|d| now_micros() - d.as_micros() as i64);
        let mut txn = self.store().begin().map_err(PopulateError::Storage)?;
        let meta = txn.meta(&job_id).map_err(PopulateError::Storage)?;
        let sidx = meta.attr_index("status").unwrap();
        let kidx = meta.attr_index("key").unwrap();
        let tidx = meta.attr_index("reserved_at").unwrap();
        let mut victims = Vec::new();
        for row in txn.scan(&job_id).map_err(PopulateError::Storage)? {
            if row[sidx] != Value::str(status.as_str()) {
                continue;
            }
            if let Some(cutoff) = cutoff {
                match &row[tidx] {
                    Value::DateTime(us) if *us <= cutoff => {}
                    _ => continue,
                }
            }
            if let Some(restriction) = restriction {
                let key_json = match &row[kidx] {
                    Value::Json(serde_json::Value::Object(m)) => m.clone(),
                    _ => Default::default(),
                };
                let matches = restriction.iter().all(|(name, want)| {
                    target
                        .attr(name)
                        .and_then(|a| key_json.get(name).map(|j| (a, j)))
                        .and_then(|(a, j)| json_to_value(&a.type_spec, j).ok())
                        .map_or(false, |got| got == *want)
                });
                if !matches {
                    continue;
                }
            }
            victims.push(meta.pk_key(&row));
        }
        let mut cleared = 0;
        for key in victims {
            if txn.delete_key(&job_id, &key).map_err(PopulateError::Storage)? {
                cleared += 1;
            }
        }
        txn.commit().map_err(PopulateError::Storage)?;
        Ok(cleared)
    }
}

/// Arc-able helper so closures can be registered without a struct.
pub fn make_fn<F>(f: F) -> Arc<dyn Make>
where
    F: Fn(&KeyRecord, &MakeContext<'_>) -> Result<MakeOutput, MakeError> + Send + Sync + 'static,
{
    Arc::new(f)
}
