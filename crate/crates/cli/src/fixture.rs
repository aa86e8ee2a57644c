//! The bundled LC-MS demonstration pipeline: samples → instrument sessions
//! → scan acquisition → spectral analysis → peak detection.
//!
//! Everything derived is a pure function of the key, so two runs of the
//! demo produce byte-identical stores. Scan signals are synthesized from
//! the key hash using only additions and multiplications of dyadic
//! constants; no transcendental functions, no global state.

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use relatape::storage::Database;
use relatape::types::hash_key;
use relatape::value::Value;
use relatape::{
    CmpOp, KeyRecord, MakeContext, MakeError, MakeOutput, PopulateReport, Predicate, RowMap,
};

pub const SCHEMA_NAME: &str = "lcms";

/// Definition files in dependency order, as shipped in `fixtures/lcms/`.
pub const DEFINITIONS: &[(&str, &str)] = &[
    ("Sample.manual.djt", include_str!("../../../fixtures/lcms/Sample.manual.djt")),
    ("Instrument.lookup.djt", include_str!("../../../fixtures/lcms/Instrument.lookup.djt")),
    (
        "AnalysisParams.lookup.djt",
        include_str!("../../../fixtures/lcms/AnalysisParams.lookup.djt"),
    ),
    (
        "InstrumentSession.manual.djt",
        include_str!("../../../fixtures/lcms/InstrumentSession.manual.djt"),
    ),
    ("Acquisition.imported.djt", include_str!("../../../fixtures/lcms/Acquisition.imported.djt")),
    ("Acquisition.Scan.part.djt", include_str!("../../../fixtures/lcms/Acquisition.Scan.part.djt")),
    ("Spectrum.computed.djt", include_str!("../../../fixtures/lcms/Spectrum.computed.djt")),
    (
        "PeakDetection.computed.djt",
        include_str!("../../../fixtures/lcms/PeakDetection.computed.djt"),
    ),
    (
        "PeakDetection.Peak.part.djt",
        include_str!("../../../fixtures/lcms/PeakDetection.Peak.part.djt"),
    ),
];

/// Writes the fixture definition files into a directory.
pub fn write_schema_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, text) in DEFINITIONS {
        std::fs::write(dir.join(name), text)?;
    }
    Ok(())
}

/// Declares the fixture schema from the embedded definitions.
pub fn declare_schema(db: &mut Database) -> Result<()> {
    for (filename, text) in DEFINITIONS {
        let (table, tier, master) = crate::parse_djt_filename(filename)
            .ok_or_else(|| anyhow!("bad fixture filename {filename}"))?;
        let def = relatape::dsl::parse_definition(&relatape::dsl::DefinitionSource {
            text: (*text).to_string(),
            schema_name: SCHEMA_NAME.into(),
            table_name: table,
            tier,
            master,
        })
        .with_context(|| format!("parsing {filename}"))?;
        db.declare_table(def).with_context(|| format!("declaring {filename}"))?;
    }
    Ok(())
}

fn str_of(key: &KeyRecord, attr: &str) -> Result<String, MakeError> {
    match key.get(attr) {
        Some(Value::Str(s)) => Ok(s.clone()),
        other => Err(MakeError::new(format!("key attribute {attr} missing or not a string: {other:?}"))),
    }
}

fn key_seed(key: &KeyRecord, attrs: &[&str]) -> u64 {
    let pairs: Vec<(&str, &Value)> = attrs.iter().map(|a| (*a, &key[*a])).collect();
    let h = hash_key(&pairs);
    u64::from_le_bytes(h[0..8].try_into().unwrap())
}

const SIGNAL_LEN: usize = 64;
const SCANS_PER_ACQUISITION: i64 = 3;

/// Deterministic synthetic scan signal: two triangular peaks whose centers
/// depend on the key, over low-amplitude bit noise derived from the seed.
fn synth_scan(seed: u64, scan_id: i64) -> Vec<f64> {
    let c1 = 12 + (seed % 8) as i64;
    let c2 = 40 + ((seed >> 8) % 8) as i64;
    let h = 5.0 + scan_id as f64 * 0.25;
    (0..SIGNAL_LEN as i64)
        .map(|i| {
            let noise = ((seed >> (i as u64 % 48)) & 0x7) as f64 * 0.03125;
            let p1 = (h - (i - c1).abs() as f64 * 0.75).max(0.0);
            let p2 = (h * 0.75 - (i - c2).abs() as f64 * 0.5).max(0.0);
            noise + p1 + p2
        })
        .collect()
}

struct AcquisitionMake;

impl relatape::Make for AcquisitionMake {
    fn make(&self, key: &KeyRecord, _ctx: &MakeContext<'_>) -> Result<MakeOutput, MakeError> {
        let seed = key_seed(key, &["sample_id", "session_id"]);
        let mut master: RowMap = key.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        master.insert("n_scans".into(), Value::Int(SCANS_PER_ACQUISITION));
        let scans = (0..SCANS_PER_ACQUISITION)
            .map(|scan_id| {
                let data = synth_scan(seed, scan_id);
                let mut row = RowMap::new();
                row.insert("scan_id".into(), Value::Int(scan_id));
                row.insert(
                    "raw".into(),
                    Value::F64Array { shape: vec![data.len()], data },
                );
                row
            })
            .collect();
        Ok(MakeOutput { master, parts: vec![("acquisition__scan".into(), scans)] })
    }
}

fn param_value(ctx: &MakeContext<'_>, key: &KeyRecord, attr: &str) -> Result<f64, MakeError> {
    let params = ctx.table("analysis_params")?;
    let restricted = params
        .restrict(
            Predicate::new().and_cmp("param_id", CmpOp::Eq, key["param_id"].clone()),
            false,
        )
        .map_err(|e| MakeError::new(e.to_string()))?;
    let rows = ctx.fetch(&restricted)?;
    match rows.value(0, attr) {
        Some(Value::Float(f)) => Ok(*f),
        other => Err(MakeError::new(format!("analysis_params.{attr} missing: {other:?}"))),
    }
}

struct SpectrumMake;

impl relatape::Make for SpectrumMake {
    fn make(&self, key: &KeyRecord, ctx: &MakeContext<'_>) -> Result<MakeOutput, MakeError> {
        let _ = str_of(key, "sample_id")?;
        let scans = ctx.table("acquisition__scan")?;
        let mine = scans
            .restrict(
                Predicate::new()
                    .and_cmp("sample_id", CmpOp::Eq, key["sample_id"].clone())
                    .and_cmp("session_id", CmpOp::Eq, key["session_id"].clone()),
                false,
            )
            .map_err(|e| MakeError::new(e.to_string()))?;
        let rows = ctx.fetch(&mine)?;
        if rows.is_empty() {
            return Err(MakeError::new("no scans acquired for this session"));
        }

        let mut acc = vec![0.0f64; SIGNAL_LEN];
        for i in 0..rows.len() {
            let stored = rows.value(i, "raw").unwrap();
            let lazy = ctx.lazy(stored)?;
            let value = lazy.materialize().map_err(|e| MakeError::new(e.to_string()))?;
            match &*value {
                Value::F64Array { data, .. } => {
                    for (a, x) in acc.iter_mut().zip(data) {
                        *a += x;
                    }
                }
                other => return Err(MakeError::new(format!("scan payload is {}", other.kind()))),
            }
        }
        let n = rows.len() as f64;
        for a in &mut acc {
            *a /= n;
        }

        // box smoothing with a window of 2w+1 points
        let w = param_value(ctx, key, "smoothing")? as usize;
        let smoothed: Vec<f64> = (0..acc.len())
            .map(|i| {
                let lo = i.saturating_sub(w);
                let hi = (i + w).min(acc.len() - 1);
                let mut s = 0.0;
                for x in &acc[lo..=hi] {
                    s += x;
                }
                s / (hi - lo + 1) as f64
            })
            .collect();

        let mut master: RowMap = key.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        master.insert(
            "spectrum".into(),
            Value::F64Array { shape: vec![smoothed.len()], data: smoothed },
        );
        master.insert("resolution".into(), Value::Float(0.5));
        Ok(MakeOutput { master, parts: vec![] })
    }
}

struct PeakDetectionMake;

impl relatape::Make for PeakDetectionMake {
    fn make(&self, key: &KeyRecord, ctx: &MakeContext<'_>) -> Result<MakeOutput, MakeError> {
        let spectra = ctx.table("spectrum")?;
        let mine = spectra
            .restrict(
                Predicate::new()
                    .and_cmp("sample_id", CmpOp::Eq, key["sample_id"].clone())
                    .and_cmp("session_id", CmpOp::Eq, key["session_id"].clone())
                    .and_cmp("param_id", CmpOp::Eq, key["param_id"].clone()),
                false,
            )
            .map_err(|e| MakeError::new(e.to_string()))?;
        let rows = ctx.fetch(&mine)?;
        let stored = rows
            .value(0, "spectrum")
            .ok_or_else(|| MakeError::new("spectrum row missing"))?;
        let lazy = ctx.lazy(stored)?;
        let value = lazy.materialize().map_err(|e| MakeError::new(e.to_string()))?;
        let data = match &*value {
            Value::F64Array { data, .. } => data.clone(),
            other => return Err(MakeError::new(format!("spectrum payload is {}", other.kind()))),
        };
        let threshold = param_value(ctx, key, "threshold")?;

        let mut peaks = Vec::new();
        for i in 1..data.len().saturating_sub(1) {
            if data[i] > data[i - 1] && data[i] >= data[i + 1] && data[i] > threshold {
                let mut row = RowMap::new();
                row.insert("peak_id".into(), Value::Int(peaks.len() as i64));
                row.insert("mz".into(), Value::Float(50.0 + i as f64 * 0.5));
                row.insert("intensity".into(), Value::Float(data[i]));
                peaks.push(row);
            }
        }

        let mut master: RowMap = key.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        master.insert("n_peaks".into(), Value::Int(peaks.len() as i64));
        Ok(MakeOutput { master, parts: vec![("peak_detection__peak".into(), peaks)] })
    }
}

/// Registers the fixture makes for whichever fixture tables are declared.
pub fn register_makes(db: &Database) {
    let pairs: [(&str, Arc<dyn relatape::Make>); 3] = [
        ("acquisition", Arc::new(AcquisitionMake)),
        ("spectrum", Arc::new(SpectrumMake)),
        ("peak_detection", Arc::new(PeakDetectionMake)),
    ];
    for (table, make) in pairs {
        let qualified = format!("{SCHEMA_NAME}.{table}");
        if db.registry().resolve_name(&qualified).is_ok() {
            let _ = db.register_make(&qualified, make);
        }
    }
}

fn row(pairs: &[(&str, Value)]) -> RowMap {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Inserts the demo's manual and lookup rows.
pub fn insert_base_data(db: &Database) -> Result<()> {
    db.insert(
        "sample",
        vec![
            row(&[("sample_id", Value::str("s1")), ("compound", Value::str("caffeine"))]),
            row(&[("sample_id", Value::str("s2")), ("compound", Value::str("taurine"))]),
        ],
    )?;
    db.insert(
        "instrument",
        vec![row(&[("instrument_id", Value::str("qtof1")), ("model", Value::str("Q-TOF 9000"))])],
    )?;
    db.insert(
        "analysis_params",
        vec![
            row(&[
                ("param_id", Value::str("p1")),
                ("smoothing", Value::Float(1.0)),
                ("threshold", Value::Float(3.0)),
            ]),
            row(&[
                ("param_id", Value::str("p2")),
                ("smoothing", Value::Float(1.0)),
                ("threshold", Value::Float(4.5)),
            ]),
        ],
    )?;
    let date = Value::DateTime(relatape::value::parse_datetime("2024-05-01T09:00:00Z").unwrap());
    db.insert(
        "instrument_session",
        vec![
            row(&[
                ("sample_id", Value::str("s1")),
                ("session_id", Value::Int(1)),
                ("instrument_id", Value::str("qtof1")),
                ("session_date", date.clone()),
            ]),
            row(&[
                ("sample_id", Value::str("s1")),
                ("session_id", Value::Int(2)),
                ("instrument_id", Value::str("qtof1")),
                ("session_date", date.clone()),
            ]),
            row(&[
                ("sample_id", Value::str("s2")),
                ("session_id", Value::Int(1)),
                ("instrument_id", Value::str("qtof1")),
                ("session_date", date),
            ]),
        ],
    )?;
    Ok(())
}

#[derive(Debug, Default)]
pub struct DemoSummary {
    pub acquisition: PopulateReport,
    pub spectrum: PopulateReport,
    pub peaks: PopulateReport,
}

/// The scripted end-to-end run: declare, insert, populate each derived
/// stage with `workers` in-process workers.
pub fn run_demo(db: &mut Database, workers: usize, worker_base: &str) -> Result<DemoSummary> {
    declare_schema(db)?;
    insert_base_data(db)?;
    register_makes(db);
    let mut summary = DemoSummary::default();
    for (table, slot) in [
        ("acquisition", 0),
        ("spectrum", 1),
        ("peak_detection", 2),
    ] {
        let qualified = format!("{SCHEMA_NAME}.{table}");
        let report = crate::populate_parallel(db, &qualified, worker_base, workers, None)?;
        match slot {
            0 => summary.acquisition = report,
            1 => summary.spectrum = report,
            _ => summary.peaks = report,
        }
    }
    Ok(summary)
}
