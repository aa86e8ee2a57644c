//! A self-contained relational workflow engine: tables represent workflow
//! steps, rows represent artifacts, and foreign keys prescribe execution
//! order. Schema, large-object storage, a five-operator query algebra and
//! distributed job coordination share one transactional framework.
//!
//! The crate is organized along those lines:
//!
//! * [`model`] — tables, tiers, foreign keys, the schema registry and its
//!   dependency DAG, workflow-normalization lints.
//! * [`dsl`] — the textual table-definition language.
//! * [`types`] — core scalar types, pluggable codecs, lazy references.
//! * [`storage`] — the object-augmented store: relational tuples plus
//!   hash/schema-addressed objects with transactions and gc.
//! * [`lineage`] — attribute provenance and semantic matching.
//! * [`algebra`] — query construction and evaluation.
//! * [`populate`] — job coordination and make execution.
//! * [`diagram`] — DOT emission.

pub mod address;
pub mod algebra;
pub mod diagram;
pub mod dsl;
pub mod lineage;
pub mod model;
pub mod populate;
pub mod storage;
pub mod types;
pub mod value;

pub use algebra::{
    AggFunc, AggSpec, AlgebraError, BinOp, CmpOp, Heading, Predicate, QueryExpr, ResultSet,
    ScalarExpr,
};
pub use lineage::{resolve_join_attrs, semantically_compatible, LineageGraph, Origin, OriginSet};
pub use model::{
    lint_workflow_normalization, Attribute, AttrDefault, Diagnostic, ForeignKey, ModelError,
    SchemaRegistry, TableDef, TableId, Tier,
};
pub use populate::{
    default_worker_id, JobRecord, JobStatus, KeyRecord, Make, MakeContext, MakeError, MakeOutput,
    PopulateError, PopulateReport, RunOutcome,
};
pub use storage::{
    Database, DeleteReport, GcReport, InsertReport, RowMap, StorageError,
};
pub use types::{Codec, CodecRegistry, CoreType, LazyRef, TypeError, TypeSpec};
pub use value::Value;
