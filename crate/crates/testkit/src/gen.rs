//! Seeded random schemas, data, and query expressions.
//!
//! Generated expressions exist twice: as a [`GenExpr`] spec tree that the
//! oracle interprets directly, and compiled through the engine's public
//! query API. Generated literals and computed expressions are chosen so
//! that evaluation is total (no overflow, no division by zero) and float
//! results are bit-reproducible (dyadic fractions, exact integer sums).

use std::collections::{BTreeMap, BTreeSet};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use relatape::dsl::{parse_definition, DefinitionSource};
use relatape::storage::Database;
use relatape::value::Value;
use relatape::{
    AggFunc, AggSpec, AlgebraError, CmpOp, Predicate, QueryExpr, ScalarExpr, Tier,
};

use crate::NamedRow;

/// A generated base table: heading, key, and raw rows for the oracle.
#[derive(Debug, Clone)]
pub struct GenTable {
    pub name: String,
    /// (attribute, type token) pairs in heading order.
    pub attrs: Vec<(String, GenType)>,
    pub pk: Vec<String>,
    pub rows: Vec<NamedRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenType {
    Int,
    Float,
    Str,
    DateTime,
    Bool,
}

impl GenType {
    fn token(&self) -> &'static str {
        match self {
            GenType::Int => "int64",
            GenType::Float => "float64",
            GenType::Str => "varchar(8)",
            GenType::DateTime => "datetime",
            GenType::Bool => "bool",
        }
    }
}

/// A generated workload: a populated in-memory database plus the oracle's
/// own copy of the schema and data.
pub struct GenSchema {
    pub db: Database,
    pub tables: Vec<GenTable>,
}

fn random_value(rng: &mut ChaCha8Rng, ty: GenType) -> Value {
    match ty {
        GenType::Int => Value::Int(rng.gen_range(-9..=9)),
        // dyadic fractions keep float arithmetic bit-reproducible
        GenType::Float => Value::Float(rng.gen_range(-16..=16) as f64 * 0.25),
        GenType::Str => {
            let pool = ["a", "b", "c", "dd", "e"];
            Value::Str(pool[rng.gen_range(0..pool.len())].to_string())
        }
        GenType::DateTime => Value::DateTime(rng.gen_range(0..5) * 86_400_000_000),
        GenType::Bool => Value::Bool(rng.gen()),
    }
}

/// Builds a random schema of at most `max_tables` tables with at most
/// `max_rows` rows each, occasionally declaring homonymous attributes in
/// unrelated tables to exercise semantic matching.
pub fn gen_schema(seed: u64, max_tables: usize, max_rows: usize) -> GenSchema {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tables = rng.gen_range(1..=max_tables);
    let mut db = Database::in_memory();
    let mut tables: Vec<GenTable> = Vec::new();

    for i in 0..n_tables {
        let name = format!("t{i}");
        let mut text = String::new();
        let mut attrs: Vec<(String, GenType)> = Vec::new();
        let mut pk: Vec<String> = Vec::new();

        // identity-inheriting parents
        let mut parents: Vec<usize> = Vec::new();
        if i > 0 {
            for p in 0..i {
                if rng.gen_bool(0.35) && parents.len() < 2 {
                    parents.push(p);
                }
            }
        }
        for p in &parents {
            text.push_str(&format!("-> t{p}\n"));
            for k in &tables[*p].pk {
                if !pk.contains(k) {
                    pk.push(k.clone());
                    let ty = tables[*p].attrs.iter().find(|(n, _)| n == k).unwrap().1;
                    attrs.push((k.clone(), ty));
                }
            }
        }

        // own key attribute; sometimes a homonym of another table's key
        let own_key = if rng.gen_bool(0.2) && i > 0 && !pk.iter().any(|k| k == "id") {
            "id".to_string()
        } else {
            format!("k{i}")
        };
        let key_ty = if rng.gen_bool(0.5) { GenType::Int } else { GenType::Str };
        text.push_str(&format!("{own_key} : {}\n", key_ty.token()));
        pk.push(own_key.clone());
        attrs.push((own_key, key_ty));
        text.push_str("---\n");

        // secondary attributes; `v` recurs across tables as a homonym
        let mut nullable_attrs: BTreeSet<String> = BTreeSet::new();
        let n_sec = rng.gen_range(0..=3);
        for j in 0..n_sec {
            let name = if j == 0 && rng.gen_bool(0.4) {
                "v".to_string()
            } else {
                format!("s{i}_{j}")
            };
            let ty = match rng.gen_range(0..5) {
                0 => GenType::Int,
                1 => GenType::Float,
                2 => GenType::Str,
                3 => GenType::DateTime,
                _ => GenType::Bool,
            };
            if rng.gen_bool(0.25) {
                nullable_attrs.insert(name.clone());
                text.push_str(&format!("{name} = null : {}\n", ty.token()));
            } else {
                text.push_str(&format!("{name} : {}\n", ty.token()));
            }
            attrs.push((name, ty));
        }

        let def = parse_definition(&DefinitionSource {
            text,
            schema_name: "gen".into(),
            table_name: name.clone(),
            tier: if rng.gen_bool(0.5) { Tier::Manual } else { Tier::Lookup },
            master: None,
        })
        .expect("generated definition parses");
        db.declare_table(def).expect("generated definition declares");

        // rows: sample foreign keys from parents, unique on the key
        let mut rows: Vec<NamedRow> = Vec::new();
        let mut seen_keys: BTreeSet<String> = BTreeSet::new();
        let n_rows = rng.gen_range(0..=max_rows);
        'rows: for _ in 0..n_rows {
            let mut row = NamedRow::new();
            for p in &parents {
                let parent = &tables[*p];
                if parent.rows.is_empty() {
                    continue 'rows;
                }
                let pr = &parent.rows[rng.gen_range(0..parent.rows.len())];
                for k in &parent.pk {
                    row.insert(k.clone(), pr[k].clone());
                }
            }
            for (attr, ty) in &attrs {
                if row.contains_key(attr) {
                    continue;
                }
                if nullable_attrs.contains(attr) && rng.gen_bool(0.4) {
                    row.insert(attr.clone(), Value::Null);
                } else {
                    row.insert(attr.clone(), random_value(&mut rng, *ty));
                }
            }
            let key_fp: String = pk
                .iter()
                .map(|k| format!("{:?};", row[k]))
                .collect();
            if seen_keys.insert(key_fp) {
                rows.push(row);
            }
        }
        if !rows.is_empty() {
            db.insert(&name, rows.clone()).expect("generated rows insert");
        }

        tables.push(GenTable { name, attrs, pk, rows });
    }

    GenSchema { db, tables }
}

// -- expression spec trees ---------------------------------------------------------

#[derive(Debug, Clone)]
pub enum GenScalar {
    Attr(String),
    LitInt(i64),
    LitFloat(f64),
    LitStr(String),
    Bin { op: char, left: Box<GenScalar>, right: Box<GenScalar> },
}

#[derive(Debug, Clone)]
pub struct GenAtom {
    pub attr: String,
    pub op: CmpOp,
    pub value: Value,
}

#[derive(Debug, Clone)]
pub enum GenExpr {
    Table(String),
    RestrictPred { input: Box<GenExpr>, atoms: Vec<GenAtom>, negate: bool },
    RestrictRel { input: Box<GenExpr>, rel: Box<GenExpr>, negate: bool },
    Project {
        input: Box<GenExpr>,
        keep: Vec<String>,
        renames: Vec<(String, String)>,
        computed: Vec<(String, GenScalar)>,
    },
    Join { left: Box<GenExpr>, right: Box<GenExpr> },
    Aggregate { left: Box<GenExpr>, right: Box<GenExpr>, specs: Vec<(String, AggFunc, Option<String>)> },
    Union { input: Box<GenExpr>, left_atoms: Vec<GenAtom>, right_atoms: Vec<GenAtom> },
}

fn compile_scalar(s: &GenScalar) -> ScalarExpr {
    match s {
        GenScalar::Attr(a) => ScalarExpr::attr(a),
        GenScalar::LitInt(i) => ScalarExpr::Lit(Value::Int(*i)),
        GenScalar::LitFloat(f) => ScalarExpr::Lit(Value::Float(*f)),
        GenScalar::LitStr(s) => ScalarExpr::Lit(Value::Str(s.clone())),
        GenScalar::Bin { op, left, right } => {
            let op = match op {
                '+' => relatape::BinOp::Add,
                '-' => relatape::BinOp::Sub,
                '*' => relatape::BinOp::Mul,
                _ => relatape::BinOp::Div,
            };
            ScalarExpr::bin(op, compile_scalar(left), compile_scalar(right))
        }
    }
}

/// Compiles a spec tree through the engine's public construction API.
pub fn compile(db: &Database, expr: &GenExpr) -> Result<QueryExpr, AlgebraError> {
    match expr {
        GenExpr::Table(name) => db
            .table(name)
            .map_err(|e| AlgebraError::Storage { detail: e.to_string() }),
        GenExpr::RestrictPred { input, atoms, negate } => {
            let input = compile(db, input)?;
            let mut pred = Predicate::new();
            for a in atoms {
                pred = pred.and_cmp(&a.attr, a.op, a.value.clone());
            }
            input.restrict(pred, *negate)
        }
        GenExpr::RestrictRel { input, rel, negate } => {
            let input = compile(db, input)?;
            let rel = compile(db, rel)?;
            input.restrict_rel(&rel, *negate)
        }
        GenExpr::Project { input, keep, renames, computed } => {
            let input = compile(db, input)?;
            let keep: Vec<&str> = keep.iter().map(|s| s.as_str()).collect();
            let renames: Vec<(&str, &str)> =
                renames.iter().map(|(n, o)| (n.as_str(), o.as_str())).collect();
            let computed: Vec<(&str, ScalarExpr)> =
                computed.iter().map(|(n, s)| (n.as_str(), compile_scalar(s))).collect();
            input.project(&keep, &renames, &computed)
        }
        GenExpr::Join { left, right } => {
            let left = compile(db, left)?;
            let right = compile(db, right)?;
            left.join(&right)
        }
        GenExpr::Aggregate { left, right, specs } => {
            let left = compile(db, left)?;
            let right = compile(db, right)?;
            let specs: Vec<AggSpec> = specs
                .iter()
                .map(|(name, func, attr)| AggSpec {
                    name: name.clone(),
                    func: *func,
                    attr: attr.clone(),
                })
                .collect();
            left.aggregate(&right, &specs)
        }
        GenExpr::Union { input, left_atoms, right_atoms } => {
            let input = compile(db, input)?;
            let mk = |atoms: &[GenAtom]| {
                let mut pred = Predicate::new();
                for a in atoms {
                    pred = pred.and_cmp(&a.attr, a.op, a.value.clone());
                }
                pred
            };
            let left = input.restrict(mk(left_atoms), false)?;
            let right = input.restrict(mk(right_atoms), false)?;
            left.union(&right)
        }
    }
}

// -- expression generation -----------------------------------------------------------

pub struct ExprGen<'a> {
    pub schema: &'a GenSchema,
    pub rng: ChaCha8Rng,
    fresh: usize,
}

impl<'a> ExprGen<'a> {
    pub fn new(schema: &'a GenSchema, seed: u64) -> ExprGen<'a> {
        ExprGen { schema, rng: ChaCha8Rng::seed_from_u64(seed), fresh: 0 }
    }

    fn fresh_name(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        format!("{prefix}{}", self.fresh)
    }

    /// Attribute names and types visible in the heading of a spec tree.
    /// Mirrors the engine's heading rules, independently.
    pub fn heading_of(&self, e: &GenExpr) -> Vec<(String, GenType)> {
        match e {
            GenExpr::Table(name) => {
                let t = self.schema.tables.iter().find(|t| t.name == *name).unwrap();
                t.attrs.clone()
            }
            GenExpr::RestrictPred { input, .. } | GenExpr::RestrictRel { input, .. } => {
                self.heading_of(input)
            }
            GenExpr::Union { input, .. } => self.heading_of(input),
            GenExpr::Project { input, keep, renames, computed } => {
                let inner = self.heading_of(input);
                let pk = self.pk_of(input);
                let mut out = Vec::new();
                for (name, ty) in &inner {
                    let renamed = renames.iter().find(|(_, old)| old == name);
                    let wanted =
                        pk.contains(name) || renamed.is_some() || keep.contains(name);
                    if wanted {
                        let out_name =
                            renamed.map(|(n, _)| n.clone()).unwrap_or_else(|| name.clone());
                        out.push((out_name, *ty));
                    }
                }
                for (name, s) in computed {
                    out.push((name.clone(), scalar_type(s, &inner)));
                }
                out
            }
            GenExpr::Join { left, right } => {
                let l = self.heading_of(left);
                let r = self.heading_of(right);
                let mut out = l.clone();
                for (name, ty) in r {
                    if !l.iter().any(|(n, _)| *n == name) {
                        out.push((name, ty));
                    }
                }
                out
            }
            GenExpr::Aggregate { left, specs, .. } => {
                let mut out = self.heading_of(left);
                for (name, func, attr) in specs {
                    let ty = match func {
                        AggFunc::Count => GenType::Int,
                        AggFunc::Mean => GenType::Float,
                        AggFunc::Sum | AggFunc::Min | AggFunc::Max => {
                            let rh = self.heading_of(match e {
                                GenExpr::Aggregate { right, .. } => right,
                                _ => unreachable!(),
                            });
                            rh.iter()
                                .find(|(n, _)| Some(n) == attr.as_ref())
                                .map(|(_, t)| *t)
                                .unwrap_or(GenType::Int)
                        }
                    };
                    out.push((name.clone(), ty));
                }
                out
            }
        }
    }

    /// Primary-key names of a spec tree; mirrors the documented rules.
    pub fn pk_of(&self, e: &GenExpr) -> Vec<String> {
        match e {
            GenExpr::Table(name) => {
                self.schema.tables.iter().find(|t| t.name == *name).unwrap().pk.clone()
            }
            GenExpr::RestrictPred { input, .. }
            | GenExpr::RestrictRel { input, .. }
            | GenExpr::Union { input, .. } => self.pk_of(input),
            GenExpr::Project { input, renames, .. } => self
                .pk_of(input)
                .into_iter()
                .map(|k| {
                    renames
                        .iter()
                        .find(|(_, old)| *old == k)
                        .map(|(new, _)| new.clone())
                        .unwrap_or(k)
                })
                .collect(),
            GenExpr::Join { left, right } => {
                let mut pk = self.pk_of(left);
                for k in self.pk_of(right) {
                    if !pk.contains(&k) {
                        pk.push(k);
                    }
                }
                pk
            }
            GenExpr::Aggregate { left, .. } => self.pk_of(left),
        }
    }

    fn literal_for(&mut self, ty: GenType) -> Value {
        random_value(&mut self.rng, ty)
    }

    fn gen_atoms(&mut self, e: &GenExpr) -> Vec<GenAtom> {
        let heading = self.heading_of(e);
        let n = self.rng.gen_range(1..=2.min(heading.len()));
        let mut atoms = Vec::new();
        for _ in 0..n {
            let (attr, ty) = heading[self.rng.gen_range(0..heading.len())].clone();
            let op = match self.rng.gen_range(0..6) {
                0 => CmpOp::Eq,
                1 => CmpOp::Ne,
                2 => CmpOp::Lt,
                3 => CmpOp::Le,
                4 => CmpOp::Gt,
                _ => CmpOp::Ge,
            };
            let op = if ty == GenType::Bool { CmpOp::Eq } else { op };
            atoms.push(GenAtom { attr, op, value: self.literal_for(ty) });
        }
        atoms
    }

    fn gen_scalar(&mut self, heading: &[(String, GenType)]) -> GenScalar {
        let numeric: Vec<&(String, GenType)> = heading
            .iter()
            .filter(|(_, t)| matches!(t, GenType::Int | GenType::Float))
            .collect();
        if numeric.is_empty() || self.rng.gen_bool(0.2) {
            let strings: Vec<&(String, GenType)> =
                heading.iter().filter(|(_, t)| *t == GenType::Str).collect();
            if !strings.is_empty() && self.rng.gen_bool(0.5) {
                let (a, _) = strings[self.rng.gen_range(0..strings.len())].clone();
                return GenScalar::Bin {
                    op: '+',
                    left: Box::new(GenScalar::Attr(a)),
                    right: Box::new(GenScalar::LitStr("x".into())),
                };
            }
            return GenScalar::LitInt(self.rng.gen_range(-5..=5));
        }
        let (a, _) = numeric[self.rng.gen_range(0..numeric.len())].clone();
        let left = Box::new(GenScalar::Attr(a));
        match self.rng.gen_range(0..4) {
            0 => GenScalar::Bin { op: '+', left, right: Box::new(GenScalar::LitInt(3)) },
            1 => GenScalar::Bin { op: '-', left, right: Box::new(GenScalar::LitFloat(0.5)) },
            2 => GenScalar::Bin { op: '*', left, right: Box::new(GenScalar::LitInt(2)) },
            _ => GenScalar::Bin { op: '/', left, right: Box::new(GenScalar::LitFloat(4.0)) },
        }
    }

    /// Generates a random expression of bounded depth.
    pub fn gen_expr(&mut self, depth: usize) -> GenExpr {
        if depth == 0 || self.rng.gen_bool(0.25) {
            let i = self.rng.gen_range(0..self.schema.tables.len());
            return GenExpr::Table(self.schema.tables[i].name.clone());
        }
        match self.rng.gen_range(0..6) {
            0 => {
                let input = self.gen_expr(depth - 1);
                let atoms = self.gen_atoms(&input);
                GenExpr::RestrictPred {
                    input: Box::new(input),
                    atoms,
                    negate: self.rng.gen_bool(0.3),
                }
            }
            1 => GenExpr::RestrictRel {
                input: Box::new(self.gen_expr(depth - 1)),
                rel: Box::new(self.gen_expr(depth - 1)),
                negate: self.rng.gen_bool(0.5),
            },
            2 => {
                let input = self.gen_expr(depth - 1);
                let heading = self.heading_of(&input);
                let pk = self.pk_of(&input);
                let non_pk: Vec<String> = heading
                    .iter()
                    .filter(|(n, _)| !pk.contains(n))
                    .map(|(n, _)| n.clone())
                    .collect();
                let mut keep = Vec::new();
                for n in &non_pk {
                    if self.rng.gen_bool(0.5) {
                        keep.push(n.clone());
                    }
                }
                let mut renames = Vec::new();
                if !heading.is_empty() && self.rng.gen_bool(0.4) {
                    let (old, _) = heading[self.rng.gen_range(0..heading.len())].clone();
                    renames.push((self.fresh_name("rn"), old));
                }
                let mut computed = Vec::new();
                if self.rng.gen_bool(0.4) {
                    let s = self.gen_scalar(&heading);
                    computed.push((self.fresh_name("c"), s));
                }
                GenExpr::Project { input: Box::new(input), keep, renames, computed }
            }
            3 => GenExpr::Join {
                left: Box::new(self.gen_expr(depth - 1)),
                right: Box::new(self.gen_expr(depth - 1)),
            },
            4 => {
                let left = self.gen_expr(depth - 1);
                let right = self.gen_expr(depth - 1);
                let rh = self.heading_of(&right);
                let mut specs = vec![(self.fresh_name("n"), AggFunc::Count, None)];
                let int_attrs: Vec<String> = rh
                    .iter()
                    .filter(|(_, t)| *t == GenType::Int)
                    .map(|(n, _)| n.clone())
                    .collect();
                if !int_attrs.is_empty() && self.rng.gen_bool(0.7) {
                    let attr = int_attrs[self.rng.gen_range(0..int_attrs.len())].clone();
                    let func = match self.rng.gen_range(0..4) {
                        0 => AggFunc::Sum,
                        1 => AggFunc::Mean,
                        2 => AggFunc::Min,
                        _ => AggFunc::Max,
                    };
                    specs.push((self.fresh_name("agg"), func, Some(attr)));
                }
                let cmp_attrs: Vec<String> = rh
                    .iter()
                    .filter(|(_, t)| matches!(t, GenType::Str | GenType::DateTime))
                    .map(|(n, _)| n.clone())
                    .collect();
                if !cmp_attrs.is_empty() && self.rng.gen_bool(0.3) {
                    let attr = cmp_attrs[self.rng.gen_range(0..cmp_attrs.len())].clone();
                    let func = if self.rng.gen_bool(0.5) { AggFunc::Min } else { AggFunc::Max };
                    specs.push((self.fresh_name("agg"), func, Some(attr)));
                }
                GenExpr::Aggregate { left: Box::new(left), right: Box::new(right), specs }
            }
            _ => {
                let input = self.gen_expr(depth - 1);
                let left_atoms = self.gen_atoms(&input);
                let right_atoms = self.gen_atoms(&input);
                GenExpr::Union { input: Box::new(input), left_atoms, right_atoms }
            }
        }
    }
}

fn scalar_type(s: &GenScalar, heading: &[(String, GenType)]) -> GenType {
    match s {
        GenScalar::Attr(a) => heading
            .iter()
            .find(|(n, _)| n == a)
            .map(|(_, t)| *t)
            .unwrap_or(GenType::Int),
        GenScalar::LitInt(_) => GenType::Int,
        GenScalar::LitFloat(_) => GenType::Float,
        GenScalar::LitStr(_) => GenType::Str,
        GenScalar::Bin { op, left, right } => {
            let (l, r) = (scalar_type(left, heading), scalar_type(right, heading));
            if *op == '/' {
                GenType::Float
            } else if l == GenType::Str || r == GenType::Str {
                GenType::Str
            } else if l == GenType::Float || r == GenType::Float {
                GenType::Float
            } else {
                GenType::Int
            }
        }
    }
}

/// Collects a map from table name to raw rows, the oracle's ground truth.
pub fn base_tables(schema: &GenSchema) -> BTreeMap<String, GenTable> {
    schema.tables.iter().map(|t| (t.name.clone(), t.clone())).collect()
}
