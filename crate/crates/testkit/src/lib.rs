//! Test support for the workflow engine: seeded random schema and
//! expression generators, an independent brute-force query oracle, and
//! fault-injection hooks. The oracle shares only the value types with the
//! engine; its semantics are implemented from scratch with nested loops so
//! it can serve as an independent reference.

pub mod gen;
pub mod oracle;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relatape::storage::{ChaosHook, FaultPoint};
use relatape::value::{canonical_json_string, value_to_json, Value};
use relatape::ResultSet;

/// Fires at every fault point independently with probability `p`.
pub struct ProbChaos {
    rng: Mutex<ChaCha8Rng>,
    p: f64,
}

impl ProbChaos {
    pub fn new(seed: u64, p: f64) -> ProbChaos {
        ProbChaos { rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)), p }
    }
}

impl ChaosHook for ProbChaos {
    fn hit(&self, _point: FaultPoint) -> bool {
        self.rng.lock().unwrap().gen::<f64>() < self.p
    }
}

/// Fires exactly once, at the n-th occurrence (1-based) of the given point.
pub struct NthFault {
    point: FaultPoint,
    n: u64,
    seen: AtomicU64,
}

impl NthFault {
    pub fn new(point: FaultPoint, n: u64) -> NthFault {
        NthFault { point, n, seen: AtomicU64::new(0) }
    }
}

impl ChaosHook for NthFault {
    fn hit(&self, point: FaultPoint) -> bool {
        if point != self.point {
            return false;
        }
        self.seen.fetch_add(1, Ordering::SeqCst) + 1 == self.n
    }
}

/// A row as an attribute-name map, for order-free comparison.
pub type NamedRow = BTreeMap<String, Value>;

/// Canonical serialization of a named row; equal rows serialize equally.
pub fn row_fingerprint(row: &NamedRow) -> String {
    let mut map = serde_json::Map::new();
    for (k, v) in row {
        map.insert(k.clone(), value_to_json(v));
    }
    canonical_json_string(&serde_json::Value::Object(map))
}

/// The row set of an engine result as canonical fingerprints.
pub fn result_fingerprints(result: &ResultSet) -> Vec<String> {
    let names: Vec<String> = result.heading.names().iter().map(|s| s.to_string()).collect();
    let mut out: Vec<String> = result
        .rows
        .iter()
        .map(|row| {
            let named: NamedRow =
                names.iter().cloned().zip(row.iter().cloned()).collect();
            row_fingerprint(&named)
        })
        .collect();
    out.sort();
    out
}

/// The row set of an oracle result as canonical fingerprints.
pub fn oracle_fingerprints(rows: &[NamedRow]) -> Vec<String> {
    let mut out: Vec<String> = rows.iter().map(row_fingerprint).collect();
    out.sort();
    out.dedup();
    out
}
