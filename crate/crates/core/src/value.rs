//! Scalar values and their canonical encodings.
//!
//! Every value the engine stores has three deterministic byte-level forms:
//!
//! * `canonical_bytes` — a tagged, length-framed encoding used for content
//!   hashing and job-key hashing; equal values always produce equal bytes.
//! * `sort_key` — an order-preserving encoding used to keep table rows
//!   PK-sorted, so scans and snapshots are deterministic.
//! * canonical JSON — the human-readable form used in row files and store
//!   snapshots (sorted keys, no insignificant whitespace, fixed datetime and
//!   uuid rendering).
//!
//! Floats are restricted to finite values and `-0.0` is normalized to `0.0`,
//! which makes bitwise equality coincide with numeric equality and keeps the
//! JSON forms total.

use std::fmt;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};

use crate::address::ObjectAddress;

/// Metadata maps attached to stored objects: canonical JSON objects.
pub type MetaMap = serde_json::Map<String, serde_json::Value>;

/// A reference to an encoded object held in the object store, as it appears
/// inside a stored tuple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredObject {
    pub address: ObjectAddress,
    /// Codec id, version and codec-specific fields (shape, dtype, ...).
    pub metadata: MetaMap,
}

/// A single attribute value.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Bytes(Vec<u8>),
    /// Microseconds since the Unix epoch, UTC.
    DateTime(i64),
    Uuid([u8; 16]),
    Json(serde_json::Value),
    /// An n-dimensional float array in row-major order. Exists only on the
    /// application side; stored tuples hold `Object` references instead.
    F64Array { shape: Vec<usize>, data: Vec<f64> },
    /// A codec-encoded value that lives in the object store.
    Object(StoredObject),
}

/// A tuple, aligned with some heading's attribute order.
pub type Row = Vec<Value>;

impl Value {
    pub fn str(s: &str) -> Value {
        Value::Str(s.to_string())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// One-word name of the value's kind, for error messages.
    pub fn kind(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int64",
            Value::Float(_) => "float64",
            Value::Str(_) => "varchar",
            Value::Bytes(_) => "bytes",
            Value::DateTime(_) => "datetime",
            Value::Uuid(_) => "uuid",
            Value::Json(_) => "json",
            Value::F64Array { .. } => "f64_array",
            Value::Object(_) => "object",
        }
    }
}

/// Normalizes a float for storage: rejects non-finite values, maps `-0.0`
/// to `0.0` so equal numbers have equal bits.
pub fn normalize_float(f: f64) -> Result<f64, String> {
    if !f.is_finite() {
        return Err(format!("non-finite float {f} is not storable"));
    }
    Ok(if f == 0.0 { 0.0 } else { f })
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        use Value::*;
        match (self, other) {
            (Null, Null) => true,
            (Bool(a), Bool(b)) => a == b,
            (Int(a), Int(b)) => a == b,
            (Float(a), Float(b)) => a.to_bits() == b.to_bits(),
            (Str(a), Str(b)) => a == b,
            (Bytes(a), Bytes(b)) => a == b,
            (DateTime(a), DateTime(b)) => a == b,
            (Uuid(a), Uuid(b)) => a == b,
            (Json(a), Json(b)) => a == b,
            (
                F64Array { shape: s1, data: d1 },
                F64Array { shape: s2, data: d2 },
            ) => {
                s1 == s2
                    && d1.len() == d2.len()
                    && d1.iter().zip(d2).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Object(a), Object(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => write!(f, "{s}"),
            other => write!(f, "{}", value_to_json(other)),
        }
    }
}

// -- canonical byte encoding (hashing) --------------------------------------

fn frame(out: &mut Vec<u8>, tag: u8, payload: &[u8]) {
    out.push(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

/// Appends the canonical tagged encoding of `v` to `out`.
pub fn canonical_bytes_into(v: &Value, out: &mut Vec<u8>) {
    match v {
        Value::Null => frame(out, 0, &[]),
        Value::Bool(b) => frame(out, 1, &[*b as u8]),
        Value::Int(i) => frame(out, 2, &i.to_le_bytes()),
        Value::Float(f) => frame(out, 3, &f.to_le_bytes()),
        Value::Str(s) => frame(out, 4, s.as_bytes()),
        Value::Bytes(b) => frame(out, 5, b),
        Value::DateTime(us) => frame(out, 6, &us.to_le_bytes()),
        Value::Uuid(u) => frame(out, 7, u),
        Value::Json(j) => frame(out, 8, canonical_json_string(j).as_bytes()),
        Value::F64Array { shape, data } => {
            let mut p = Vec::with_capacity(8 + shape.len() * 8 + data.len() * 8);
            p.extend_from_slice(&(shape.len() as u64).to_le_bytes());
            for d in shape {
                p.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for x in data {
                p.extend_from_slice(&x.to_le_bytes());
            }
            frame(out, 9, &p);
        }
        Value::Object(o) => {
            let mut p = Vec::new();
            p.push(o.address.scheme as u8);
            p.extend_from_slice(o.address.path.as_bytes());
            p.extend_from_slice(&o.address.content_hash);
            p.extend_from_slice(&o.address.size.to_le_bytes());
            frame(out, 10, &p);
        }
    }
}

pub fn canonical_bytes(v: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    canonical_bytes_into(v, &mut out);
    out
}

// -- order-preserving sort keys ----------------------------------------------

fn push_terminated(out: &mut Vec<u8>, bytes: &[u8]) {
    // 0x00 bytes are escaped as 0x00 0xff; 0x00 0x00 terminates.
    for b in bytes {
        if *b == 0 {
            out.push(0);
            out.push(0xff);
        } else {
            out.push(*b);
        }
    }
    out.push(0);
    out.push(0);
}

/// Appends an order-preserving encoding of `v` to `out`. Composite keys are
/// built by concatenating the encodings of each key attribute in order.
pub fn sort_key_into(v: &Value, out: &mut Vec<u8>) {
    match v {
        Value::Null => out.push(0x00),
        Value::Bool(b) => {
            out.push(0x01);
            out.push(*b as u8);
        }
        Value::Int(i) => {
            out.push(0x02);
            out.extend_from_slice(&((*i as u64) ^ (1 << 63)).to_be_bytes());
        }
        Value::Float(f) => {
            out.push(0x03);
            let bits = f.to_bits();
            let flipped = if bits & (1 << 63) != 0 { !bits } else { bits ^ (1 << 63) };
            out.extend_from_slice(&flipped.to_be_bytes());
        }
        Value::Str(s) => {
            out.push(0x04);
            push_terminated(out, s.as_bytes());
        }
        Value::Bytes(b) => {
            out.push(0x05);
            push_terminated(out, b);
        }
        Value::DateTime(us) => {
            out.push(0x06);
            out.extend_from_slice(&((*us as u64) ^ (1 << 63)).to_be_bytes());
        }
        Value::Uuid(u) => {
            out.push(0x07);
            out.extend_from_slice(u);
        }
        Value::Json(j) => {
            out.push(0x08);
            push_terminated(out, canonical_json_string(j).as_bytes());
        }
        Value::F64Array { .. } | Value::Object(_) => {
            // Not orderable; these never appear in primary keys. Fall back to
            // the canonical encoding so the function stays total.
            out.push(0x09);
            push_terminated(out, &canonical_bytes(v));
        }
    }
}

pub fn sort_key(values: &[Value]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        sort_key_into(v, &mut out);
    }
    out
}

// -- canonical JSON ----------------------------------------------------------

/// Serializes a JSON value with sorted keys and no insignificant whitespace.
/// (serde_json's map is a BTreeMap, so `to_string` is already canonical.)
pub fn canonical_json_string(v: &serde_json::Value) -> String {
    serde_json::to_string(v).expect("json serialization cannot fail")
}

/// Renders a value as canonical JSON. The rendering is type-directed on the
/// value itself; parsing back requires the attribute's declared type.
pub fn value_to_json(v: &Value) -> serde_json::Value {
    use serde_json::json;
    match v {
        Value::Null => serde_json::Value::Null,
        Value::Bool(b) => json!(b),
        Value::Int(i) => json!(i),
        Value::Float(f) => json!(f),
        Value::Str(s) => json!(s),
        Value::Bytes(b) => {
            use base64::Engine as _;
            json!(base64::engine::general_purpose::STANDARD.encode(b))
        }
        Value::DateTime(us) => json!(format_datetime(*us)),
        Value::Uuid(u) => json!(format_uuid(u)),
        Value::Json(j) => j.clone(),
        Value::F64Array { shape, data } => json!({
            "$array": { "shape": shape, "data": data }
        }),
        Value::Object(o) => json!({
            "$object": {
                "scheme": o.address.scheme.as_str(),
                "path": o.address.path,
                "hash": hex::encode(o.address.content_hash),
                "size": o.address.size,
                "metadata": serde_json::Value::Object(o.metadata.clone()),
            }
        }),
    }
}

// -- datetime ----------------------------------------------------------------

pub fn format_datetime(micros: i64) -> String {
    let dt: DateTime<Utc> = Utc
        .timestamp_micros(micros)
        .single()
        .unwrap_or_else(|| Utc.timestamp_micros(0).unwrap());
    dt.format("%Y-%m-%dT%H:%M:%S%.6fZ").to_string()
}

/// Accepts RFC 3339, `YYYY-MM-DD HH:MM:SS[.ffffff]` (UTC assumed) and bare
/// `YYYY-MM-DD` dates.
pub fn parse_datetime(s: &str) -> Result<i64, String> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.with_timezone(&Utc).timestamp_micros());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(naive.and_utc().timestamp_micros());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        let naive = d.and_hms_opt(0, 0, 0).unwrap();
        return Ok(naive.and_utc().timestamp_micros());
    }
    Err(format!("cannot parse datetime from {s:?}"))
}

// -- uuid --------------------------------------------------------------------

pub fn format_uuid(bytes: &[u8; 16]) -> String {
    let h = hex::encode(bytes);
    format!(
        "{}-{}-{}-{}-{}",
        &h[0..8],
        &h[8..12],
        &h[12..16],
        &h[16..20],
        &h[20..32]
    )
}

pub fn parse_uuid(s: &str) -> Result<[u8; 16], String> {
    let compact: String = s.chars().filter(|c| *c != '-').collect();
    if compact.len() != 32 {
        return Err(format!("cannot parse uuid from {s:?}"));
    }
    let bytes = hex::decode(compact.to_lowercase()).map_err(|e| format!("bad uuid {s:?}: {e}"))?;
    let mut out = [0u8; 16];
    out.copy_from_slice(&bytes);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sort_key_orders_ints() {
        let vals = [-5i64, -1, 0, 3, 100];
        let keys: Vec<_> = vals.iter().map(|i| sort_key(&[Value::Int(*i)])).collect();
        for w in keys.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn sort_key_orders_floats_across_sign() {
        let vals = [-10.5f64, -0.25, 0.0, 0.5, 2.0];
        let keys: Vec<_> = vals.iter().map(|f| sort_key(&[Value::Float(*f)])).collect();
        for w in keys.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn sort_key_string_prefix_not_ambiguous() {
        // "ab" followed by attr "c" must not collide with "abc" + "".
        let a = sort_key(&[Value::str("ab"), Value::str("c")]);
        let b = sort_key(&[Value::str("abc"), Value::str("")]);
        assert_ne!(a, b);
    }

    #[test]
    fn datetime_round_trip() {
        let us = parse_datetime("2024-03-01T12:30:45.123456Z").unwrap();
        assert_eq!(format_datetime(us), "2024-03-01T12:30:45.123456Z");
        let us2 = parse_datetime("2024-03-01 12:30:45.123456").unwrap();
        assert_eq!(us, us2);
    }

    #[test]
    fn uuid_round_trip() {
        let u = parse_uuid("123E4567-e89b-12d3-a456-426614174000").unwrap();
        assert_eq!(format_uuid(&u), "123e4567-e89b-12d3-a456-426614174000");
    }

    #[test]
    fn negative_zero_normalizes() {
        assert_eq!(normalize_float(-0.0).unwrap().to_bits(), 0.0f64.to_bits());
        assert!(normalize_float(f64::NAN).is_err());
        assert!(normalize_float(f64::INFINITY).is_err());
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let v: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":{"z":2,"y":3}}"#).unwrap();
        assert_eq!(canonical_json_string(&v), r#"{"a":{"y":3,"z":2},"b":1}"#);
    }
}
