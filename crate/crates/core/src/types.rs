//! The three-layer type architecture: core scalar types, codec types with
//! pluggable serialization, and lazy references to stored objects.
//!
//! Core types always encode inline in the tuple; codec types always encode
//! to object-store payloads. Both encodings are deterministic: equal values
//! produce identical bytes, which is what makes hash-addressed deduplication
//! and job-key hashing work.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::address::{sha256, ObjectAddress};
use crate::value::{
    canonical_bytes_into, normalize_float, parse_datetime, parse_uuid, MetaMap, StoredObject,
    Value,
};

#[derive(Debug, Error)]
pub enum TypeError {
    #[error("type mismatch: expected {expected}, got {got}")]
    TypeMismatch { expected: String, got: String },
    #[error("unknown codec {codec_id} v{version}")]
    UnknownCodec { codec_id: String, version: u32 },
    #[error("codec {codec_id} v{version} already registered with different behavior")]
    DuplicateCodec { codec_id: String, version: u32 },
    #[error("corrupt payload at {path}: {detail}")]
    CorruptPayload { path: String, detail: String },
    #[error("object read failed at {path}: {detail}")]
    ObjectIo { path: String, detail: String },
}

fn mismatch(expected: impl Into<String>, got: impl Into<String>) -> TypeError {
    TypeError::TypeMismatch { expected: expected.into(), got: got.into() }
}

// -- type specs ----------------------------------------------------------------

/// Portable scalar types with consistent semantics everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoreType {
    Int64,
    Float64,
    Varchar(u32),
    DateTime,
    Uuid,
    Json,
    Bool,
    Bytes,
}

/// Where a codec-typed value's bytes live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreHint {
    /// In the tuple itself. Used by core types only.
    Inline,
    HashAddressed,
    SchemaAddressed,
}

/// A declared attribute type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TypeSpec {
    Core(CoreType),
    /// A raw backend type token, accepted verbatim and flagged by lint.
    Native(String),
    Codec { codec_id: String, store_hint: StoreHint },
}

impl TypeSpec {
    pub fn varchar(n: u32) -> TypeSpec {
        TypeSpec::Core(CoreType::Varchar(n))
    }

    pub fn is_codec(&self) -> bool {
        matches!(self, TypeSpec::Codec { .. })
    }

    pub fn store_hint(&self) -> StoreHint {
        match self {
            TypeSpec::Codec { store_hint, .. } => *store_hint,
            _ => StoreHint::Inline,
        }
    }

    /// Parses a type token: a core type name, `<codec_id[@hash|@schema]>`,
    /// or any other token as a native type.
    pub fn parse(token: &str) -> Result<TypeSpec, String> {
        let t = token.trim();
        if t.is_empty() {
            return Err("empty type token".into());
        }
        if let Some(inner) = t.strip_prefix('<').and_then(|s| s.strip_suffix('>')) {
            let (id, hint) = match inner.split_once('@') {
                None => (inner, StoreHint::HashAddressed),
                Some((id, "hash")) => (id, StoreHint::HashAddressed),
                Some((id, "schema")) => (id, StoreHint::SchemaAddressed),
                Some((_, other)) => {
                    return Err(format!("unknown store hint {other:?} (want hash or schema)"))
                }
            };
            if !is_identifier(id) {
                return Err(format!("bad codec id {id:?}"));
            }
            return Ok(TypeSpec::Codec { codec_id: id.to_string(), store_hint: hint });
        }
        if let Some(rest) = t.strip_prefix("varchar(") {
            let n = rest
                .strip_suffix(')')
                .and_then(|d| d.parse::<u32>().ok())
                .ok_or_else(|| format!("bad varchar length in {t:?}"))?;
            return Ok(TypeSpec::Core(CoreType::Varchar(n)));
        }
        Ok(match t {
            "int64" => TypeSpec::Core(CoreType::Int64),
            "float64" => TypeSpec::Core(CoreType::Float64),
            "datetime" => TypeSpec::Core(CoreType::DateTime),
            "uuid" => TypeSpec::Core(CoreType::Uuid),
            "json" => TypeSpec::Core(CoreType::Json),
            "bool" => TypeSpec::Core(CoreType::Bool),
            "bytes" => TypeSpec::Core(CoreType::Bytes),
            other => {
                if other.contains(['#', ':', '<', '>']) || other.contains(char::is_whitespace) {
                    return Err(format!("bad type token {other:?}"));
                }
                TypeSpec::Native(other.to_string())
            }
        })
    }

    pub fn render(&self) -> String {
        match self {
            TypeSpec::Core(CoreType::Int64) => "int64".into(),
            TypeSpec::Core(CoreType::Float64) => "float64".into(),
            TypeSpec::Core(CoreType::Varchar(n)) => format!("varchar({n})"),
            TypeSpec::Core(CoreType::DateTime) => "datetime".into(),
            TypeSpec::Core(CoreType::Uuid) => "uuid".into(),
            TypeSpec::Core(CoreType::Json) => "json".into(),
            TypeSpec::Core(CoreType::Bool) => "bool".into(),
            TypeSpec::Core(CoreType::Bytes) => "bytes".into(),
            TypeSpec::Native(t) => t.clone(),
            TypeSpec::Codec { codec_id, store_hint } => match store_hint {
                StoreHint::SchemaAddressed => format!("<{codec_id}@schema>"),
                _ => format!("<{codec_id}>"),
            },
        }
    }

    /// Checks `value` against this type and returns its canonical form.
    /// Ints are accepted for float64 attributes; datetimes and uuids also
    /// accept their string renderings.
    pub fn conform(&self, value: &Value) -> Result<Value, TypeError> {
        match self {
            TypeSpec::Core(core) => conform_core(*core, value),
            TypeSpec::Native(_) => match value {
                Value::Int(_) | Value::Float(_) | Value::Str(_) | Value::Bool(_) => {
                    Ok(value.clone())
                }
                other => Err(mismatch("native scalar", other.kind())),
            },
            TypeSpec::Codec { .. } => match value {
                // Codec values are conformed by the codec at encode time; an
                // already-stored reference is also acceptable as-is.
                Value::Object(_) | Value::F64Array { .. } | Value::Bytes(_) => Ok(value.clone()),
                other => Err(mismatch("codec value", other.kind())),
            },
        }
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    s.len() <= 64 && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn conform_core(core: CoreType, value: &Value) -> Result<Value, TypeError> {
    match (core, value) {
        (CoreType::Int64, Value::Int(i)) => Ok(Value::Int(*i)),
        (CoreType::Float64, Value::Float(f)) => Ok(Value::Float(
            normalize_float(*f).map_err(|e| mismatch("finite float64", e))?,
        )),
        (CoreType::Float64, Value::Int(i)) => Ok(Value::Float(*i as f64)),
        (CoreType::Varchar(n), Value::Str(s)) => {
            let chars = s.chars().count();
            if chars > n as usize {
                return Err(mismatch(format!("varchar({n})"), format!("string of length {chars}")));
            }
            if s.contains('\u{0}') {
                return Err(mismatch(format!("varchar({n})"), "string with NUL"));
            }
            Ok(Value::Str(s.clone()))
        }
        (CoreType::DateTime, Value::DateTime(us)) => Ok(Value::DateTime(*us)),
        (CoreType::DateTime, Value::Str(s)) => {
            Ok(Value::DateTime(parse_datetime(s).map_err(|e| mismatch("datetime", e))?))
        }
        (CoreType::Uuid, Value::Uuid(u)) => Ok(Value::Uuid(*u)),
        (CoreType::Uuid, Value::Str(s)) => {
            Ok(Value::Uuid(parse_uuid(s).map_err(|e| mismatch("uuid", e))?))
        }
        (CoreType::Json, Value::Json(j)) => Ok(Value::Json(j.clone())),
        (CoreType::Bool, Value::Bool(b)) => Ok(Value::Bool(*b)),
        (CoreType::Bytes, Value::Bytes(b)) => Ok(Value::Bytes(b.clone())),
        (core, got) => Err(mismatch(TypeSpec::Core(core).render(), got.kind())),
    }
}

// -- codecs ---------------------------------------------------------------------

/// Programmable serialization for domain values. `decode(encode(v))` must
/// structurally equal `v`, and `describe` must work from metadata alone.
pub trait Codec: Send + Sync {
    fn codec_id(&self) -> &str;
    fn version(&self) -> u32;
    /// File extension used for schema-addressed paths.
    fn extension(&self) -> &str;
    fn encode(&self, value: &Value) -> Result<(Vec<u8>, MetaMap), TypeError>;
    fn decode(&self, payload: &[u8], metadata: &MetaMap) -> Result<Value, TypeError>;
    fn describe(&self, metadata: &MetaMap) -> MetaMap;
    /// Values the registry encodes to fingerprint this codec's behavior.
    fn fingerprint_probes(&self) -> Vec<Value>;
    /// Builds a value from bare payload bytes (used when loading row files
    /// that reference payloads on disk). Optional.
    fn value_from_payload(&self, _payload: &[u8]) -> Result<Value, TypeError> {
        Err(TypeError::TypeMismatch {
            expected: "codec with payload-file support".into(),
            got: self.codec_id().to_string(),
        })
    }
}

/// Write-once-at-startup codec registry; immutable and shareable afterwards.
#[derive(Default)]
pub struct CodecRegistry {
    codecs: BTreeMap<(String, u32), (Arc<dyn Codec>, [u8; 32])>,
}

impl CodecRegistry {
    pub fn new() -> CodecRegistry {
        CodecRegistry::default()
    }

    /// A registry with the bundled reference codecs (`f64_array`, `blob`).
    pub fn bundled() -> CodecRegistry {
        let mut r = CodecRegistry::new();
        r.register(Arc::new(F64ArrayCodec)).expect("bundled codec registration");
        r.register(Arc::new(BlobCodec)).expect("bundled codec registration");
        r
    }

    /// Registers a codec. Re-registering a behaviorally identical codec is a
    /// no-op; a same-id-and-version codec with a different behavior
    /// fingerprint is rejected.
    pub fn register(&mut self, codec: Arc<dyn Codec>) -> Result<(), TypeError> {
        let key = (codec.codec_id().to_string(), codec.version());
        let fp = fingerprint(codec.as_ref())?;
        if let Some((_, existing_fp)) = self.codecs.get(&key) {
            if *existing_fp == fp {
                return Ok(());
            }
            return Err(TypeError::DuplicateCodec { codec_id: key.0, version: key.1 });
        }
        self.codecs.insert(key, (codec, fp));
        Ok(())
    }

    pub fn resolve(&self, codec_id: &str, version: u32) -> Result<Arc<dyn Codec>, TypeError> {
        self.codecs
            .get(&(codec_id.to_string(), version))
            .map(|(c, _)| Arc::clone(c))
            .ok_or_else(|| TypeError::UnknownCodec { codec_id: codec_id.to_string(), version })
    }

    /// Latest registered version of a codec id.
    pub fn resolve_latest(&self, codec_id: &str) -> Result<Arc<dyn Codec>, TypeError> {
        self.codecs
            .range((codec_id.to_string(), 0)..=(codec_id.to_string(), u32::MAX))
            .next_back()
            .map(|(_, (c, _))| Arc::clone(c))
            .ok_or_else(|| TypeError::UnknownCodec { codec_id: codec_id.to_string(), version: 0 })
    }
}

fn fingerprint(codec: &dyn Codec) -> Result<[u8; 32], TypeError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(codec.extension().as_bytes());
    for probe in codec.fingerprint_probes() {
        canonical_bytes_into(&probe, &mut buf);
        let (payload, meta) = codec.encode(&probe)?;
        buf.extend_from_slice(&payload);
        buf.extend_from_slice(
            crate::value::canonical_json_string(&serde_json::Value::Object(meta)).as_bytes(),
        );
    }
    Ok(sha256(&buf))
}

// -- encode / decode --------------------------------------------------------------

/// Result of encoding a value for storage.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredForm {
    /// Core and native scalars: stored in the tuple as-is.
    Inline(Value),
    /// Codec values: payload bytes for the object store plus metadata for
    /// the tuple and sidecar.
    Payload { payload: Vec<u8>, metadata: MetaMap, extension: String },
}

/// Encodes `value` under `spec`. Core types validate and canonicalize;
/// codec types run the codec and attach codec id, version and size to the
/// metadata. Deterministic: equal values yield identical bytes.
pub fn encode_value(
    spec: &TypeSpec,
    value: &Value,
    codecs: &CodecRegistry,
) -> Result<StoredForm, TypeError> {
    match spec {
        TypeSpec::Core(_) | TypeSpec::Native(_) => Ok(StoredForm::Inline(spec.conform(value)?)),
        TypeSpec::Codec { codec_id, .. } => {
            if let Value::Object(_) = value {
                // Already encoded; reinserting a fetched row keeps the ref.
                return Ok(StoredForm::Inline(value.clone()));
            }
            let codec = codecs.resolve_latest(codec_id)?;
            let (payload, mut metadata) = codec.encode(value)?;
            metadata.insert("codec".into(), codec.codec_id().into());
            metadata.insert("codec_version".into(), codec.version().into());
            metadata.insert("size".into(), (payload.len() as u64).into());
            Ok(StoredForm::Payload { payload, metadata, extension: codec.extension().to_string() })
        }
    }
}

/// A decoded attribute: either a materialized scalar or a lazy reference.
pub enum Decoded {
    Immediate(Value),
    Lazy(LazyRef),
}

/// Fetches object payloads by path. The bundled object store implements
/// this; tests may count calls to verify laziness.
pub trait ObjectReader: Send + Sync {
    fn get_object(&self, path: &str) -> Result<Vec<u8>, String>;
}

/// Decodes a stored attribute value. Core types come back materialized;
/// codec-typed object references come back as [`LazyRef`]s that read and
/// verify the payload only on `materialize`.
pub fn decode_value(
    spec: &TypeSpec,
    stored: &Value,
    loader: Arc<dyn ObjectReader>,
    codecs: &CodecRegistry,
) -> Result<Decoded, TypeError> {
    match (spec, stored) {
        (TypeSpec::Codec { .. }, Value::Object(obj)) => {
            let codec_id = obj
                .metadata
                .get("codec")
                .and_then(|v| v.as_str())
                .ok_or_else(|| TypeError::CorruptPayload {
                    path: obj.address.path.clone(),
                    detail: "metadata missing codec id".into(),
                })?;
            let version = obj
                .metadata
                .get("codec_version")
                .and_then(|v| v.as_u64())
                .unwrap_or(1) as u32;
            let codec = codecs.resolve(codec_id, version)?;
            Ok(Decoded::Lazy(LazyRef::new(obj.clone(), codec, loader)))
        }
        (_, v) => Ok(Decoded::Immediate(v.clone())),
    }
}

/// A handle to a stored object. Metadata access performs no I/O; the first
/// `materialize` fetches the payload, verifies its content hash, decodes it
/// and caches the result.
pub struct LazyRef {
    stored: StoredObject,
    codec: Arc<dyn Codec>,
    loader: Arc<dyn ObjectReader>,
    cell: Mutex<Option<Arc<Value>>>,
}

impl LazyRef {
    pub fn new(stored: StoredObject, codec: Arc<dyn Codec>, loader: Arc<dyn ObjectReader>) -> LazyRef {
        LazyRef { stored, codec, loader, cell: Mutex::new(None) }
    }

    pub fn address(&self) -> &ObjectAddress {
        &self.stored.address
    }

    pub fn metadata(&self) -> &MetaMap {
        &self.stored.metadata
    }

    /// Codec summary (shape/dtype-like fields) from metadata alone.
    pub fn describe(&self) -> MetaMap {
        self.codec.describe(&self.stored.metadata)
    }

    pub fn shape(&self) -> Option<Vec<usize>> {
        self.stored.metadata.get("shape").and_then(|v| {
            v.as_array()
                .map(|a| a.iter().filter_map(|x| x.as_u64().map(|u| u as usize)).collect())
        })
    }

    pub fn materialize(&self) -> Result<Arc<Value>, TypeError> {
        let mut cell = self.cell.lock().unwrap();
        if let Some(v) = cell.as_ref() {
            return Ok(Arc::clone(v));
        }
        let path = &self.stored.address.path;
        let payload = self
            .loader
            .get_object(path)
            .map_err(|detail| TypeError::ObjectIo { path: path.clone(), detail })?;
        if sha256(&payload) != self.stored.address.content_hash {
            return Err(TypeError::CorruptPayload {
                path: path.clone(),
                detail: "content hash mismatch".into(),
            });
        }
        let value = Arc::new(self.codec.decode(&payload, &self.stored.metadata)?);
        *cell = Some(Arc::clone(&value));
        Ok(value)
    }
}

impl std::fmt::Debug for LazyRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LazyRef")
            .field("address", &self.stored.address.path)
            .field("loaded", &self.cell.lock().unwrap().is_some())
            .finish()
    }
}

// -- type-directed JSON parsing -----------------------------------------------------

/// Parses a canonical-JSON value back into a [`Value`] under the given type.
/// The inverse of [`crate::value::value_to_json`] given the attribute type.
pub fn json_to_value(spec: &TypeSpec, j: &serde_json::Value) -> Result<Value, String> {
    use serde_json::Value as J;
    if j.is_null() {
        return Ok(Value::Null);
    }
    match spec {
        TypeSpec::Core(CoreType::Int64) => {
            j.as_i64().map(Value::Int).ok_or_else(|| format!("expected int64, got {j}"))
        }
        TypeSpec::Core(CoreType::Float64) => j
            .as_f64()
            .ok_or_else(|| format!("expected float64, got {j}"))
            .and_then(|f| normalize_float(f).map(Value::Float)),
        TypeSpec::Core(CoreType::Varchar(_)) => j
            .as_str()
            .map(|s| Value::Str(s.to_string()))
            .ok_or_else(|| format!("expected string, got {j}")),
        TypeSpec::Core(CoreType::DateTime) => match j {
            J::Number(n) => n
                .as_i64()
                .map(Value::DateTime)
                .ok_or_else(|| format!("bad datetime micros {j}")),
            J::String(s) => parse_datetime(s).map(Value::DateTime),
            other => Err(format!("expected datetime, got {other}")),
        },
        TypeSpec::Core(CoreType::Uuid) => j
            .as_str()
            .ok_or_else(|| format!("expected uuid string, got {j}"))
            .and_then(|s| parse_uuid(s).map(Value::Uuid)),
        TypeSpec::Core(CoreType::Json) => Ok(Value::Json(j.clone())),
        TypeSpec::Core(CoreType::Bool) => {
            j.as_bool().map(Value::Bool).ok_or_else(|| format!("expected bool, got {j}"))
        }
        TypeSpec::Core(CoreType::Bytes) => {
            use base64::Engine as _;
            let s = j.as_str().ok_or_else(|| format!("expected base64 string, got {j}"))?;
            base64::engine::general_purpose::STANDARD
                .decode(s)
                .map(Value::Bytes)
                .map_err(|e| format!("bad base64: {e}"))
        }
        TypeSpec::Native(_) => match j {
            J::Bool(b) => Ok(Value::Bool(*b)),
            J::Number(n) => Ok(n
                .as_i64()
                .map(Value::Int)
                .or_else(|| n.as_f64().map(Value::Float))
                .ok_or_else(|| format!("bad number {n}"))?),
            J::String(s) => Ok(Value::Str(s.clone())),
            other => Err(format!("expected scalar for native type, got {other}")),
        },
        TypeSpec::Codec { .. } => {
            if let Some(obj) = j.get("$object").and_then(|v| v.as_object()) {
                return parse_object_ref(obj);
            }
            if let Some(arr) = j.get("$array").and_then(|v| v.as_object()) {
                let shape: Vec<usize> = arr
                    .get("shape")
                    .and_then(|v| v.as_array())
                    .map(|a| a.iter().filter_map(|x| x.as_u64().map(|u| u as usize)).collect())
                    .ok_or("missing $array.shape")?;
                let data: Vec<f64> = arr
                    .get("data")
                    .and_then(|v| v.as_array())
                    .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
                    .ok_or("missing $array.data")?;
                return Ok(Value::F64Array { shape, data });
            }
            if let Some(arr) = j.as_array() {
                let data: Vec<f64> = arr.iter().filter_map(|x| x.as_f64()).collect();
                if data.len() == arr.len() {
                    return Ok(Value::F64Array { shape: vec![data.len()], data });
                }
                return Err("array elements must be numeric".into());
            }
            if let Some(s) = j.as_str() {
                use base64::Engine as _;
                return base64::engine::general_purpose::STANDARD
                    .decode(s)
                    .map(Value::Bytes)
                    .map_err(|e| format!("bad base64: {e}"));
            }
            Err(format!("cannot read codec value from {j}"))
        }
    }
}

fn parse_object_ref(obj: &MetaMap) -> Result<Value, String> {
    use crate::address::AddressScheme;
    let scheme = match obj.get("scheme").and_then(|v| v.as_str()) {
        Some("hash") => AddressScheme::Hash,
        Some("schema") => AddressScheme::Schema,
        other => return Err(format!("bad object scheme {other:?}")),
    };
    let path = obj
        .get("path")
        .and_then(|v| v.as_str())
        .ok_or("missing object path")?
        .to_string();
    let hash_hex = obj.get("hash").and_then(|v| v.as_str()).ok_or("missing object hash")?;
    let hash_bytes = hex::decode(hash_hex).map_err(|e| format!("bad hash: {e}"))?;
    let mut content_hash = [0u8; 32];
    if hash_bytes.len() != 32 {
        return Err("hash must be 32 bytes".into());
    }
    content_hash.copy_from_slice(&hash_bytes);
    let size = obj.get("size").and_then(|v| v.as_u64()).ok_or("missing object size")?;
    let metadata = obj
        .get("metadata")
        .and_then(|v| v.as_object())
        .cloned()
        .unwrap_or_default();
    Ok(Value::Object(StoredObject {
        address: ObjectAddress { scheme, path, content_hash, size },
        metadata,
    }))
}

// -- key hashing -------------------------------------------------------------------

/// SHA-256 over the canonical encoding of named values in the given order.
/// Used for job-key hashing.
pub fn hash_key(named: &[(&str, &Value)]) -> [u8; 32] {
    let mut buf = Vec::new();
    for (name, value) in named {
        canonical_bytes_into(&Value::Str((*name).to_string()), &mut buf);
        canonical_bytes_into(value, &mut buf);
    }
    sha256(&buf)
}

// -- bundled codecs ------------------------------------------------------------------

/// N-dimensional float array, payload = row-major little-endian f64 bytes,
/// metadata carries shape and dtype.
pub struct F64ArrayCodec;

impl Codec for F64ArrayCodec {
    fn codec_id(&self) -> &str {
        "f64_array"
    }

    fn version(&self) -> u32 {
        1
    }

    fn extension(&self) -> &str {
        "arr"
    }

    fn encode(&self, value: &Value) -> Result<(Vec<u8>, MetaMap), TypeError> {
        let (shape, data) = match value {
            Value::F64Array { shape, data } => (shape, data),
            other => return Err(mismatch("f64_array", other.kind())),
        };
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(mismatch(
                format!("array with {expected} elements for shape {shape:?}"),
                format!("{} elements", data.len()),
            ));
        }
        if data.is_empty() {
            return Err(mismatch("non-empty array", "zero-element array"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(mismatch("finite array elements", "non-finite element"));
        }
        let mut payload = Vec::with_capacity(data.len() * 8);
        for x in data {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        let mut meta = MetaMap::new();
        meta.insert("dtype".into(), "f64".into());
        meta.insert("shape".into(), serde_json::json!(shape));
        Ok((payload, meta))
    }

    fn decode(&self, payload: &[u8], metadata: &MetaMap) -> Result<Value, TypeError> {
        let shape: Vec<usize> = metadata
            .get("shape")
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|x| x.as_u64().map(|u| u as usize)).collect())
            .unwrap_or_default();
        let expected: usize = shape.iter().product();
        if payload.len() != expected * 8 {
            return Err(TypeError::CorruptPayload {
                path: String::new(),
                detail: format!(
                    "payload is {} bytes but shape {shape:?} needs {}",
                    payload.len(),
                    expected * 8
                ),
            });
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Value::F64Array { shape, data })
    }

    fn describe(&self, metadata: &MetaMap) -> MetaMap {
        let mut out = MetaMap::new();
        out.insert("dtype".into(), "f64".into());
        if let Some(shape) = metadata.get("shape") {
            out.insert("shape".into(), shape.clone());
            let elements: u64 = shape
                .as_array()
                .map(|a| a.iter().filter_map(|x| x.as_u64()).product())
                .unwrap_or(0);
            out.insert("elements".into(), elements.into());
        }
        out
    }

    fn fingerprint_probes(&self) -> Vec<Value> {
        vec![
            Value::F64Array { shape: vec![3], data: vec![1.0, 2.0, 3.0] },
            Value::F64Array { shape: vec![2, 2], data: vec![0.5, -1.25, 3e9, 4.0] },
        ]
    }

    fn value_from_payload(&self, payload: &[u8]) -> Result<Value, TypeError> {
        if payload.len() % 8 != 0 {
            return Err(mismatch("payload of little-endian f64s", format!("{} bytes", payload.len())));
        }
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Value::F64Array { shape: vec![data.len()], data })
    }
}

/// Opaque byte payloads.
pub struct BlobCodec;

impl Codec for BlobCodec {
    fn codec_id(&self) -> &str {
        "blob"
    }

    fn version(&self) -> u32 {
        1
    }

    fn extension(&self) -> &str {
        "bin"
    }

    fn encode(&self, value: &Value) -> Result<(Vec<u8>, MetaMap), TypeError> {
        let bytes = match value {
            Value::Bytes(b) => b,
            other => return Err(mismatch("bytes", other.kind())),
        };
        if bytes.is_empty() {
            return Err(mismatch("non-empty bytes", "empty bytes"));
        }
        let mut meta = MetaMap::new();
        meta.insert("dtype".into(), "bytes".into());
        Ok((bytes.clone(), meta))
    }

    fn decode(&self, payload: &[u8], _metadata: &MetaMap) -> Result<Value, TypeError> {
        Ok(Value::Bytes(payload.to_vec()))
    }

    fn describe(&self, metadata: &MetaMap) -> MetaMap {
        let mut out = MetaMap::new();
        out.insert("dtype".into(), "bytes".into());
        if let Some(size) = metadata.get("size") {
            out.insert("size".into(), size.clone());
        }
        out
    }

    fn fingerprint_probes(&self) -> Vec<Value> {
        vec![Value::Bytes(vec![0, 1, 2, 255]), Value::Bytes(b"probe".to_vec())]
    }

    fn value_from_payload(&self, payload: &[u8]) -> Result<Value, TypeError> {
        Ok(Value::Bytes(payload.to_vec()))
    }
}
