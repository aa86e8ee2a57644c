//! Pull-based evaluation of query expressions against a table source.
//!
//! Evaluation is read-only, deterministic (output is primary-key sorted)
//! and uses hash joins on matched attributes. Codec attributes stay as
//! object references in the output; callers decode them lazily.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::model::TableId;
use crate::value::{sort_key, Row, Value};

use super::{
    AggFunc, AlgebraError, BinOp, CmpOp, Heading, Node, OutputCol, PredAtom, Predicate,
    QueryExpr, RestrictCond, ScalarExpr,
};

/// Supplies base-table rows. Implementations provide a consistent snapshot
/// for the duration of one evaluation.
pub trait TableSource {
    fn scan_table(&self, id: &TableId) -> Result<Vec<Row>, String>;
}

/// Evaluation output: rows aligned with the heading, primary-key sorted.
#[derive(Debug, Clone)]
pub struct ResultSet {
    pub heading: Heading,
    pub rows: Vec<Row>,
}

impl ResultSet {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Value of `attr` in row `i`.
    pub fn value(&self, i: usize, attr: &str) -> Option<&Value> {
        self.heading.index_of(attr).and_then(|j| self.rows.get(i).map(|r| &r[j]))
    }
}

pub fn evaluate(expr: &QueryExpr, src: &dyn TableSource) -> Result<ResultSet, AlgebraError> {
    let mut rows = eval_node(expr, src)?;
    let pk = expr.heading().pk_indices();
    rows.sort_by(|a, b| pk_key(a, &pk).cmp(&pk_key(b, &pk)));
    debug_assert!(
        rows.windows(2).all(|w| pk_key(&w[0], &pk) != pk_key(&w[1], &pk)),
        "entity integrity violated: duplicate primary key in result"
    );
    Ok(ResultSet { heading: expr.heading().clone(), rows })
}

fn pk_key(row: &Row, pk: &[usize]) -> Vec<u8> {
    let vals: Vec<Value> = pk.iter().map(|i| row[*i].clone()).collect();
    sort_key(&vals)
}

fn eval_node(expr: &QueryExpr, src: &dyn TableSource) -> Result<Vec<Row>, AlgebraError> {
    match expr.node() {
        Node::Table(id) => src
            .scan_table(id)
            .map_err(|detail| AlgebraError::Storage { detail }),

        Node::Restrict { input, cond, negate } => {
            let rows = eval_node(input, src)?;
            match cond {
                RestrictCond::Pred(pred) => {
                    let mut out = Vec::new();
                    for row in rows {
                        let hit = eval_predicate(pred, input.heading(), &row)?;
                        if hit != *negate {
                            out.push(row);
                        }
                    }
                    Ok(out)
                }
                RestrictCond::Rel { rel, matched } => {
                    let rel_rows = eval_node(rel, src)?;
                    let rel_idx: Vec<usize> = matched
                        .iter()
                        .map(|m| rel.heading().index_of(m).unwrap())
                        .collect();
                    let keys: std::collections::HashSet<Vec<u8>> = rel_rows
                        .iter()
                        .filter_map(|r| match_key(r, &rel_idx))
                        .collect();
                    let own_idx: Vec<usize> = matched
                        .iter()
                        .map(|m| input.heading().index_of(m).unwrap())
                        .collect();
                    let mut out = Vec::new();
                    for row in rows {
                        let member = match match_key(&row, &own_idx) {
                            Some(k) => keys.contains(&k),
                            None => false,
                        };
                        if member != *negate {
                            out.push(row);
                        }
                    }
                    Ok(out)
                }
            }
        }

        Node::Project { input, outputs } => {
            let rows = eval_node(input, src)?;
            let heading = input.heading();
            let mut out = Vec::with_capacity(rows.len());
            for row in &rows {
                let mut new_row = Vec::with_capacity(outputs.len());
                for col in outputs {
                    match col {
                        OutputCol::Pass { src } => new_row.push(row[*src].clone()),
                        OutputCol::Computed(expr) => {
                            new_row.push(eval_scalar(expr, heading, row)?)
                        }
                    }
                }
                out.push(new_row);
            }
            Ok(out)
        }

        Node::Join { left, right, matched } => {
            let lrows = eval_node(left, src)?;
            let rrows = eval_node(right, src)?;
            let lh = left.heading();
            let rh = right.heading();
            let l_idx: Vec<usize> = matched.iter().map(|m| lh.index_of(m).unwrap()).collect();
            let r_idx: Vec<usize> = matched.iter().map(|m| rh.index_of(m).unwrap()).collect();
            let r_extra: Vec<usize> = rh
                .attrs
                .iter()
                .enumerate()
                .filter(|(_, a)| !matched.contains(&a.name))
                .map(|(i, _)| i)
                .collect();

            let mut index: HashMap<Vec<u8>, Vec<&Row>> = HashMap::new();
            for r in &rrows {
                if let Some(k) = match_key(r, &r_idx) {
                    index.entry(k).or_default().push(r);
                }
            }
            let mut out = Vec::new();
            for l in &lrows {
                let Some(k) = match_key(l, &l_idx) else { continue };
                if let Some(rs) = index.get(&k) {
                    for r in rs {
                        let mut row = l.clone();
                        row.extend(r_extra.iter().map(|i| r[*i].clone()));
                        out.push(row);
                    }
                }
            }
            Ok(out)
        }

        Node::Aggregate { left, right, matched, specs } => {
            let lrows = eval_node(left, src)?;
            let rrows = eval_node(right, src)?;
            let lh = left.heading();
            let rh = right.heading();
            let l_idx: Vec<usize> = matched.iter().map(|m| lh.index_of(m).unwrap()).collect();
            let r_idx: Vec<usize> = matched.iter().map(|m| rh.index_of(m).unwrap()).collect();

            let mut groups: HashMap<Vec<u8>, Vec<&Row>> = HashMap::new();
            for r in &rrows {
                if let Some(k) = match_key(r, &r_idx) {
                    groups.entry(k).or_default().push(r);
                }
            }
            let empty: Vec<&Row> = Vec::new();
            let mut out = Vec::with_capacity(lrows.len());
            for l in &lrows {
                let group = match match_key(l, &l_idx) {
                    Some(k) => groups.get(&k).unwrap_or(&empty),
                    None => &empty,
                };
                let mut row = l.clone();
                for spec in specs {
                    row.push(eval_aggregate(spec, rh, group)?);
                }
                out.push(row);
            }
            Ok(out)
        }

        Node::Union { left, right } => {
            let lrows = eval_node(left, src)?;
            let rrows = eval_node(right, src)?;
            let pk = left.heading().pk_indices();
            let mut by_key: std::collections::BTreeMap<Vec<u8>, Row> = Default::default();
            for row in lrows.into_iter().chain(rrows) {
                let k = pk_key(&row, &pk);
                match by_key.get(&k) {
                    None => {
                        by_key.insert(k, row);
                    }
                    Some(existing) if *existing == row => {}
                    Some(_) => {
                        let key_desc: Vec<String> =
                            pk.iter().map(|i| row[*i].to_string()).collect();
                        return Err(AlgebraError::ConflictingDuplicate {
                            key: key_desc.join(", "),
                        });
                    }
                }
            }
            Ok(by_key.into_values().collect())
        }
    }
}

/// Sort-key of the matched attribute values; `None` when any is null (null
/// never matches).
fn match_key(row: &Row, idx: &[usize]) -> Option<Vec<u8>> {
    let mut vals = Vec::with_capacity(idx.len());
    for i in idx {
        if row[*i].is_null() {
            return None;
        }
        vals.push(row[*i].clone());
    }
    Some(sort_key(&vals))
}

/// Ordering between two same-kind non-null values.
pub fn value_cmp(a: &Value, b: &Value) -> Option<Ordering> {
    use Value::*;
    match (a, b) {
        (Int(x), Int(y)) => Some(x.cmp(y)),
        (Float(x), Float(y)) => x.partial_cmp(y),
        (Int(x), Float(y)) => (*x as f64).partial_cmp(y),
        (Float(x), Int(y)) => x.partial_cmp(&(*y as f64)),
        (Str(x), Str(y)) => Some(x.cmp(y)),
        (Bool(x), Bool(y)) => Some(x.cmp(y)),
        (DateTime(x), DateTime(y)) => Some(x.cmp(y)),
        (Uuid(x), Uuid(y)) => Some(x.cmp(y)),
        (Bytes(x), Bytes(y)) => Some(x.cmp(y)),
        (Json(x), Json(y)) => Some(
            crate::value::canonical_json_string(x).cmp(&crate::value::canonical_json_string(y)),
        ),
        _ => None,
    }
}

fn eval_predicate(pred: &Predicate, heading: &Heading, row: &Row) -> Result<bool, AlgebraError> {
    for atom in &pred.atoms {
        let ok = match atom {
            PredAtom::Cmp { attr, op, value } => {
                let i = heading
                    .index_of(attr)
                    .ok_or_else(|| AlgebraError::UnknownAttribute { name: attr.clone() })?;
                let v = &row[i];
                if v.is_null() {
                    false
                } else {
                    match value_cmp(v, value) {
                        None => false,
                        Some(ord) => match op {
                            CmpOp::Eq => ord == Ordering::Equal,
                            CmpOp::Ne => ord != Ordering::Equal,
                            CmpOp::Lt => ord == Ordering::Less,
                            CmpOp::Le => ord != Ordering::Greater,
                            CmpOp::Gt => ord == Ordering::Greater,
                            CmpOp::Ge => ord != Ordering::Less,
                        },
                    }
                }
            }
            PredAtom::InSet { attr, values } => {
                let i = heading
                    .index_of(attr)
                    .ok_or_else(|| AlgebraError::UnknownAttribute { name: attr.clone() })?;
                let v = &row[i];
                !v.is_null()
                    && values.iter().any(|x| value_cmp(v, x) == Some(Ordering::Equal))
            }
        };
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

fn eval_scalar(expr: &ScalarExpr, heading: &Heading, row: &Row) -> Result<Value, AlgebraError> {
    match expr {
        ScalarExpr::Attr(name) => {
            let i = heading
                .index_of(name)
                .ok_or_else(|| AlgebraError::UnknownAttribute { name: name.clone() })?;
            Ok(row[i].clone())
        }
        ScalarExpr::Lit(v) => Ok(v.clone()),
        ScalarExpr::Bin { op, left, right } => {
            let l = eval_scalar(left, heading, row)?;
            let r = eval_scalar(right, heading, row)?;
            if l.is_null() || r.is_null() {
                return Ok(Value::Null);
            }
            apply_bin(*op, &l, &r)
        }
    }
}

fn finite(x: f64, what: &str) -> Result<Value, AlgebraError> {
    if x.is_finite() {
        Ok(Value::Float(if x == 0.0 { 0.0 } else { x }))
    } else {
        Err(AlgebraError::Arithmetic { detail: format!("{what} produced a non-finite value") })
    }
}

fn apply_bin(op: BinOp, l: &Value, r: &Value) -> Result<Value, AlgebraError> {
    use Value::*;
    match (op, l, r) {
        (BinOp::Div, _, _) => {
            let (x, y) = (as_f64(l)?, as_f64(r)?);
            if y == 0.0 {
                return Err(AlgebraError::Arithmetic { detail: "division by zero".into() });
            }
            finite(x / y, "division")
        }
        (BinOp::Add, Str(a), Str(b)) => Ok(Str(format!("{a}{b}"))),
        (_, Int(a), Int(b)) => {
            let res = match op {
                BinOp::Add => a.checked_add(*b),
                BinOp::Sub => a.checked_sub(*b),
                BinOp::Mul => a.checked_mul(*b),
                BinOp::Div => unreachable!(),
            };
            res.map(Int).ok_or_else(|| AlgebraError::Arithmetic {
                detail: "integer overflow".into(),
            })
        }
        _ => {
            let (x, y) = (as_f64(l)?, as_f64(r)?);
            let res = match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => unreachable!(),
            };
            finite(res, "arithmetic")
        }
    }
}

fn as_f64(v: &Value) -> Result<f64, AlgebraError> {
    match v {
        Value::Int(i) => Ok(*i as f64),
        Value::Float(f) => Ok(*f),
        other => Err(AlgebraError::TypeMismatch {
            detail: format!("expected numeric operand, got {}", other.kind()),
        }),
    }
}

fn eval_aggregate(
    spec: &super::AggSpec,
    right_heading: &Heading,
    group: &[&Row],
) -> Result<Value, AlgebraError> {
    let attr_idx = spec.attr.as_ref().map(|a| right_heading.index_of(a).unwrap());
    let non_null = || -> Vec<&Value> {
        group
            .iter()
            .filter_map(|r| attr_idx.map(|i| &r[i]))
            .filter(|v| !v.is_null())
            .collect()
    };
    match spec.func {
        AggFunc::Count => match attr_idx {
            None => Ok(Value::Int(group.len() as i64)),
            Some(_) => Ok(Value::Int(non_null().len() as i64)),
        },
        AggFunc::Sum => {
            let vals = non_null();
            if vals.is_empty() {
                return Ok(Value::Null);
            }
            if vals.iter().all(|v| matches!(v, Value::Int(_))) {
                let mut acc: i64 = 0;
                for v in &vals {
                    if let Value::Int(i) = v {
                        acc = acc.checked_add(*i).ok_or_else(|| AlgebraError::Arithmetic {
                            detail: "integer overflow in sum".into(),
                        })?;
                    }
                }
                Ok(Value::Int(acc))
            } else {
                let mut acc = 0.0;
                for v in &vals {
                    acc += as_f64(v)?;
                }
                finite(acc, "sum")
            }
        }
        AggFunc::Mean => {
            let vals = non_null();
            if vals.is_empty() {
                return Ok(Value::Null);
            }
            let mut acc = 0.0;
            for v in &vals {
                acc += as_f64(v)?;
            }
            finite(acc / vals.len() as f64, "mean")
        }
        AggFunc::Min | AggFunc::Max => {
            let vals = non_null();
            let mut best: Option<&Value> = None;
            for v in vals {
                best = Some(match best {
                    None => v,
                    Some(b) => match value_cmp(v, b) {
                        Some(Ordering::Less) if spec.func == AggFunc::Min => v,
                        Some(Ordering::Greater) if spec.func == AggFunc::Max => v,
                        _ => b,
                    },
                });
            }
            Ok(best.cloned().unwrap_or(Value::Null))
        }
    }
}
