//! The independent brute-force oracle: nested-loop evaluation of spec
//! trees over raw rows. No engine evaluation code is involved; semantics
//! are implemented directly from the operator definitions.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use relatape::value::Value;
use relatape::{AggFunc, CmpOp};

use crate::gen::{GenAtom, GenExpr, GenScalar, GenTable};
use crate::NamedRow;

#[derive(Debug, Clone)]
pub struct OracleRel {
    pub attrs: Vec<String>,
    pub pk: Vec<String>,
    pub rows: Vec<NamedRow>,
}

fn v_cmp(a: &Value, b: &Value) -> Option<Ordering> {
    use Value::*;
    match (a, b) {
        (Int(x), Int(y)) => Some(x.cmp(y)),
        (Float(x), Float(y)) => x.partial_cmp(y),
        (Int(x), Float(y)) => (*x as f64).partial_cmp(y),
        (Float(x), Int(y)) => x.partial_cmp(&(*y as f64)),
        (Str(x), Str(y)) => Some(x.cmp(y)),
        (Bool(x), Bool(y)) => Some(x.cmp(y)),
        (DateTime(x), DateTime(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

fn v_eq(a: &Value, b: &Value) -> bool {
    !a.is_null() && !b.is_null() && v_cmp(a, b) == Some(Ordering::Equal)
}

fn atom_holds(atom: &GenAtom, row: &NamedRow) -> bool {
    let v = match row.get(&atom.attr) {
        Some(v) if !v.is_null() => v,
        _ => return false,
    };
    match v_cmp(v, &atom.value) {
        None => false,
        Some(ord) => match atom.op {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        },
    }
}

fn namesakes(a: &[String], b: &[String]) -> Vec<String> {
    a.iter().filter(|n| b.contains(n)).cloned().collect()
}

fn rows_match(l: &NamedRow, r: &NamedRow, on: &[String]) -> bool {
    on.iter().all(|n| v_eq(&l[n], &r[n]))
}

fn eval_scalar(s: &GenScalar, row: &NamedRow) -> Value {
    match s {
        GenScalar::Attr(a) => row.get(a).cloned().unwrap_or(Value::Null),
        GenScalar::LitInt(i) => Value::Int(*i),
        GenScalar::LitFloat(f) => Value::Float(*f),
        GenScalar::LitStr(s) => Value::Str(s.clone()),
        GenScalar::Bin { op, left, right } => {
            let l = eval_scalar(left, row);
            let r = eval_scalar(right, row);
            if l.is_null() || r.is_null() {
                return Value::Null;
            }
            match (op, &l, &r) {
                ('+', Value::Str(a), Value::Str(b)) => Value::Str(format!("{a}{b}")),
                ('/', _, _) => {
                    let x = to_f64(&l);
                    let y = to_f64(&r);
                    let q = x / y;
                    Value::Float(if q == 0.0 { 0.0 } else { q })
                }
                (_, Value::Int(a), Value::Int(b)) => Value::Int(match op {
                    '+' => a + b,
                    '-' => a - b,
                    _ => a * b,
                }),
                _ => {
                    let x = to_f64(&l);
                    let y = to_f64(&r);
                    let v = match op {
                        '+' => x + y,
                        '-' => x - y,
                        _ => x * y,
                    };
                    Value::Float(if v == 0.0 { 0.0 } else { v })
                }
            }
        }
    }
}

fn to_f64(v: &Value) -> f64 {
    match v {
        Value::Int(i) => *i as f64,
        Value::Float(f) => *f,
        _ => f64::NAN,
    }
}

/// Evaluates a spec tree by brute force over the raw base tables.
pub fn eval(tables: &BTreeMap<String, GenTable>, expr: &GenExpr) -> OracleRel {
    match expr {
        GenExpr::Table(name) => {
            let t = &tables[name];
            OracleRel {
                attrs: t.attrs.iter().map(|(n, _)| n.clone()).collect(),
                pk: t.pk.clone(),
                rows: t.rows.clone(),
            }
        }

        GenExpr::RestrictPred { input, atoms, negate } => {
            let rel = eval(tables, input);
            let rows = rel
                .rows
                .iter()
                .filter(|row| atoms.iter().all(|a| atom_holds(a, row)) != *negate)
                .cloned()
                .collect();
            OracleRel { rows, ..rel }
        }

        GenExpr::RestrictRel { input, rel, negate } => {
            let base = eval(tables, input);
            let member = eval(tables, rel);
            let on = namesakes(&base.attrs, &member.attrs);
            let rows = base
                .rows
                .iter()
                .filter(|row| {
                    let hit = member.rows.iter().any(|m| rows_match(row, m, &on));
                    hit != *negate
                })
                .cloned()
                .collect();
            OracleRel { rows, ..base }
        }

        GenExpr::Project { input, keep, renames, computed } => {
            let rel = eval(tables, input);
            let mut out_rows = Vec::new();
            for row in &rel.rows {
                let mut new_row = NamedRow::new();
                for name in &rel.attrs {
                    let renamed = renames.iter().find(|(_, old)| old == name);
                    let wanted =
                        rel.pk.contains(name) || renamed.is_some() || keep.contains(name);
                    if wanted {
                        let out_name =
                            renamed.map(|(n, _)| n.clone()).unwrap_or_else(|| name.clone());
                        new_row.insert(out_name, row[name].clone());
                    }
                }
                for (name, s) in computed {
                    new_row.insert(name.clone(), eval_scalar(s, row));
                }
                out_rows.push(new_row);
            }
            let pk: Vec<String> = rel
                .pk
                .iter()
                .map(|k| {
                    renames
                        .iter()
                        .find(|(_, old)| old == k)
                        .map(|(n, _)| n.clone())
                        .unwrap_or_else(|| k.clone())
                })
                .collect();
            let attrs = out_rows
                .first()
                .map(|r| r.keys().cloned().collect())
                .unwrap_or_else(|| {
                    // attrs still needed for empty results
                    let mut names: Vec<String> = Vec::new();
                    for name in &rel.attrs {
                        let renamed = renames.iter().find(|(_, old)| old == name);
                        if rel.pk.contains(name) || renamed.is_some() || keep.contains(name) {
                            names.push(
                                renamed.map(|(n, _)| n.clone()).unwrap_or_else(|| name.clone()),
                            );
                        }
                    }
                    names.extend(computed.iter().map(|(n, _)| n.clone()));
                    names
                });
            OracleRel { attrs, pk, rows: out_rows }
        }

        GenExpr::Join { left, right } => {
            let l = eval(tables, left);
            let r = eval(tables, right);
            let on = namesakes(&l.attrs, &r.attrs);
            let mut rows = Vec::new();
            for lr in &l.rows {
                for rr in &r.rows {
                    if rows_match(lr, rr, &on) {
                        let mut merged = lr.clone();
                        for (k, v) in rr {
                            merged.entry(k.clone()).or_insert_with(|| v.clone());
                        }
                        rows.push(merged);
                    }
                }
            }
            let mut attrs = l.attrs.clone();
            for a in &r.attrs {
                if !attrs.contains(a) {
                    attrs.push(a.clone());
                }
            }
            let mut pk = l.pk.clone();
            for k in &r.pk {
                if !pk.contains(k) {
                    pk.push(k.clone());
                }
            }
            OracleRel { attrs, pk, rows }
        }

        GenExpr::Aggregate { left, right, specs } => {
            let l = eval(tables, left);
            let r = eval(tables, right);
            let on = namesakes(&l.attrs, &r.attrs);
            let mut rows = Vec::new();
            for lr in &l.rows {
                let group: Vec<&NamedRow> =
                    r.rows.iter().filter(|rr| rows_match(lr, rr, &on)).collect();
                let mut out = lr.clone();
                for (name, func, attr) in specs {
                    out.insert(name.clone(), aggregate(*func, attr.as_deref(), &group));
                }
                rows.push(out);
            }
            let mut attrs = l.attrs.clone();
            attrs.extend(specs.iter().map(|(n, _, _)| n.clone()));
            OracleRel { attrs, pk: l.pk, rows }
        }

        GenExpr::Union { input, left_atoms, right_atoms } => {
            let rel = eval(tables, input);
            let rows: Vec<NamedRow> = rel
                .rows
                .iter()
                .filter(|row| {
                    left_atoms.iter().all(|a| atom_holds(a, row))
                        || right_atoms.iter().all(|a| atom_holds(a, row))
                })
                .cloned()
                .collect();
            OracleRel { rows, ..rel }
        }
    }
}

fn aggregate(func: AggFunc, attr: Option<&str>, group: &[&NamedRow]) -> Value {
    let non_null = || -> Vec<&Value> {
        group
            .iter()
            .filter_map(|r| attr.and_then(|a| r.get(a)))
            .filter(|v| !v.is_null())
            .collect()
    };
    match func {
        AggFunc::Count => match attr {
            None => Value::Int(group.len() as i64),
            Some(_) => Value::Int(non_null().len() as i64),
        },
        AggFunc::Sum => {
            let vals = non_null();
            if vals.is_empty() {
                return Value::Null;
            }
            if vals.iter().all(|v| matches!(v, Value::Int(_))) {
                Value::Int(vals.iter().map(|v| if let Value::Int(i) = v { *i } else { 0 }).sum())
            } else {
                let mut acc = 0.0f64;
                for v in &vals {
                    acc += to_f64(v);
                }
                Value::Float(if acc == 0.0 { 0.0 } else { acc })
            }
        }
        AggFunc::Mean => {
            let vals = non_null();
            if vals.is_empty() {
                return Value::Null;
            }
            let mut acc = 0.0f64;
            for v in &vals {
                acc += to_f64(v);
            }
            let m = acc / vals.len() as f64;
            Value::Float(if m == 0.0 { 0.0 } else { m })
        }
        AggFunc::Min | AggFunc::Max => {
            let mut best: Option<&Value> = None;
            for v in non_null() {
                best = Some(match best {
                    None => v,
                    Some(b) => match v_cmp(v, b) {
                        Some(Ordering::Less) if func == AggFunc::Min => v,
                        Some(Ordering::Greater) if func == AggFunc::Max => v,
                        _ => b,
                    },
                });
            }
            best.cloned().unwrap_or(Value::Null)
        }
    }
}
