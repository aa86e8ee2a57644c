//! The five-operator query algebra with algebraic closure.
//!
//! Expressions are immutable trees; headings (attribute names, types,
//! origin sets and the primary key) are inferred at construction so that
//! every error surfaces at build time. Every operator yields a valid entity
//! set with a well-defined primary key: restrict, project, aggregate and
//! union preserve the left operand's key; join unifies the two keys,
//! collapsing matched attributes that already identify the left operand.

pub mod eval;

use std::sync::Arc;

use thiserror::Error;

use crate::lineage::{resolve_join_attrs, LineageError, LineageGraph, Origin, OriginSet};
use crate::model::{RegisteredTable, TableId};
use crate::types::{CoreType, TypeSpec};
use crate::value::Value;

pub use eval::{evaluate, ResultSet, TableSource};

#[derive(Debug, Error)]
pub enum AlgebraError {
    #[error(transparent)]
    Semantic(#[from] LineageError),
    #[error("unknown attribute {name}")]
    UnknownAttribute { name: String },
    #[error("type mismatch: {detail}")]
    TypeMismatch { detail: String },
    #[error("name collision on {name}")]
    NameCollision { name: String },
    #[error("heading mismatch: {detail}")]
    HeadingMismatch { detail: String },
    #[error("conflicting duplicate: rows agree on key {key} but differ elsewhere")]
    ConflictingDuplicate { key: String },
    #[error("unknown aggregate function {name}")]
    UnknownAggregate { name: String },
    #[error("arithmetic error: {detail}")]
    Arithmetic { detail: String },
    #[error("storage failure: {detail}")]
    Storage { detail: String },
}

fn unknown(name: &str) -> AlgebraError {
    AlgebraError::UnknownAttribute { name: name.to_string() }
}

// -- headings -------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HeadingAttr {
    pub name: String,
    pub type_spec: TypeSpec,
    pub in_pk: bool,
    pub nullable: bool,
    pub origins: OriginSet,
}

/// Ordered attributes with a non-empty primary key subset.
#[derive(Debug, Clone, Default)]
pub struct Heading {
    pub attrs: Vec<HeadingAttr>,
}

impl Heading {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attrs.iter().position(|a| a.name == name)
    }

    pub fn attr(&self, name: &str) -> Option<&HeadingAttr> {
        self.attrs.iter().find(|a| a.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.attrs.iter().map(|a| a.name.as_str()).collect()
    }

    pub fn pk_indices(&self) -> Vec<usize> {
        self.attrs
            .iter()
            .enumerate()
            .filter(|(_, a)| a.in_pk)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn pk_names(&self) -> Vec<&str> {
        self.attrs.iter().filter(|a| a.in_pk).map(|a| a.name.as_str()).collect()
    }

    fn origin_pairs(&self) -> Vec<(&str, &OriginSet)> {
        self.attrs.iter().map(|a| (a.name.as_str(), &a.origins)).collect()
    }

    /// Heading of a registered table, in resolved attribute order, with
    /// origin sets taken from the lineage graph.
    pub fn of_table(table: &RegisteredTable, lineage: &LineageGraph) -> Heading {
        let attrs = table
            .attrs
            .iter()
            .map(|a| HeadingAttr {
                name: a.name.clone(),
                type_spec: a.type_spec.clone(),
                in_pk: a.in_pk,
                nullable: a.nullable(),
                origins: lineage
                    .origins_of_table_attr(&table.id, &a.name)
                    .cloned()
                    .unwrap_or_else(|| {
                        crate::lineage::origin_set(Origin::declared(&table.id, &a.name))
                    }),
            })
            .collect();
        Heading { attrs }
    }
}

// -- predicates -----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn as_str(&self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone)]
pub enum PredAtom {
    Cmp { attr: String, op: CmpOp, value: Value },
    InSet { attr: String, values: Vec<Value> },
}

/// A conjunction of atoms over a heading's attributes. Comparisons against
/// a null attribute value are false.
#[derive(Debug, Clone, Default)]
pub struct Predicate {
    pub atoms: Vec<PredAtom>,
}

impl Predicate {
    pub fn new() -> Predicate {
        Predicate::default()
    }

    /// A key-mapping predicate: equality on every named attribute.
    pub fn key(pairs: &[(&str, Value)]) -> Predicate {
        Predicate {
            atoms: pairs
                .iter()
                .map(|(attr, value)| PredAtom::Cmp {
                    attr: attr.to_string(),
                    op: CmpOp::Eq,
                    value: value.clone(),
                })
                .collect(),
        }
    }

    pub fn and_cmp(mut self, attr: &str, op: CmpOp, value: Value) -> Predicate {
        self.atoms.push(PredAtom::Cmp { attr: attr.to_string(), op, value });
        self
    }

    pub fn and_in(mut self, attr: &str, values: Vec<Value>) -> Predicate {
        self.atoms.push(PredAtom::InSet { attr: attr.to_string(), values });
        self
    }

    /// Type-checks atoms against a heading and canonicalizes literals.
    fn validated(&self, heading: &Heading) -> Result<Predicate, AlgebraError> {
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for atom in &self.atoms {
            let (attr, conform_one): (&str, Box<dyn Fn(&Value) -> Result<Value, AlgebraError>>) =
                match atom {
                    PredAtom::Cmp { attr, .. } | PredAtom::InSet { attr, .. } => {
                        let ha = heading.attr(attr).ok_or_else(|| unknown(attr))?;
                        if ha.type_spec.is_codec() {
                            return Err(AlgebraError::TypeMismatch {
                                detail: format!("cannot compare codec attribute {attr}"),
                            });
                        }
                        let spec = ha.type_spec.clone();
                        (
                            attr,
                            Box::new(move |v: &Value| {
                                if v.is_null() {
                                    return Err(AlgebraError::TypeMismatch {
                                        detail: "null literal in predicate".into(),
                                    });
                                }
                                spec.conform(v).map_err(|e| AlgebraError::TypeMismatch {
                                    detail: e.to_string(),
                                })
                            }),
                        )
                    }
                };
            match atom {
                PredAtom::Cmp { op, value, .. } => atoms.push(PredAtom::Cmp {
                    attr: attr.to_string(),
                    op: *op,
                    value: conform_one(value)?,
                }),
                PredAtom::InSet { values, .. } => atoms.push(PredAtom::InSet {
                    attr: attr.to_string(),
                    values: values.iter().map(|v| conform_one(v)).collect::<Result<_, _>>()?,
                }),
            }
        }
        Ok(Predicate { atoms })
    }
}

// -- scalar expressions ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Arithmetic and string concatenation over attributes and literals, used
/// by computed projections. Any null operand yields null.
#[derive(Debug, Clone)]
pub enum ScalarExpr {
    Attr(String),
    Lit(Value),
    Bin { op: BinOp, left: Box<ScalarExpr>, right: Box<ScalarExpr> },
}

impl ScalarExpr {
    pub fn attr(name: &str) -> ScalarExpr {
        ScalarExpr::Attr(name.to_string())
    }

    pub fn bin(op: BinOp, left: ScalarExpr, right: ScalarExpr) -> ScalarExpr {
        ScalarExpr::Bin { op, left: Box::new(left), right: Box::new(right) }
    }

    fn infer(&self, heading: &Heading) -> Result<(TypeSpec, bool), AlgebraError> {
        match self {
            ScalarExpr::Attr(name) => {
                let a = heading.attr(name).ok_or_else(|| unknown(name))?;
                match &a.type_spec {
                    TypeSpec::Core(
                        CoreType::Int64 | CoreType::Float64 | CoreType::Varchar(_),
                    ) => Ok((a.type_spec.clone(), a.nullable)),
                    other => Err(AlgebraError::TypeMismatch {
                        detail: format!(
                            "attribute {name} of type {} not usable in a computed expression",
                            other.render()
                        ),
                    }),
                }
            }
            ScalarExpr::Lit(v) => {
                let spec = match v {
                    Value::Int(_) => TypeSpec::Core(CoreType::Int64),
                    Value::Float(_) => TypeSpec::Core(CoreType::Float64),
                    Value::Str(s) => TypeSpec::varchar(s.chars().count() as u32),
                    other => {
                        return Err(AlgebraError::TypeMismatch {
                            detail: format!("unsupported literal of kind {}", other.kind()),
                        })
                    }
                };
                Ok((spec, false))
            }
            ScalarExpr::Bin { op, left, right } => {
                let (lt, ln) = left.infer(heading)?;
                let (rt, rn) = right.infer(heading)?;
                let nullable = ln || rn;
                use CoreType::*;
                let spec = match (op, &lt, &rt) {
                    (BinOp::Div, TypeSpec::Core(Int64 | Float64), TypeSpec::Core(Int64 | Float64)) => {
                        TypeSpec::Core(Float64)
                    }
                    (_, TypeSpec::Core(Int64), TypeSpec::Core(Int64)) => TypeSpec::Core(Int64),
                    (
                        BinOp::Add | BinOp::Sub | BinOp::Mul,
                        TypeSpec::Core(Int64 | Float64),
                        TypeSpec::Core(Int64 | Float64),
                    ) => TypeSpec::Core(Float64),
                    (BinOp::Add, TypeSpec::Core(Varchar(a)), TypeSpec::Core(Varchar(b))) => {
                        TypeSpec::Core(Varchar(a.saturating_add(*b).min(65535)))
                    }
                    _ => {
                        return Err(AlgebraError::TypeMismatch {
                            detail: format!(
                                "operator {op:?} not defined for {} and {}",
                                lt.render(),
                                rt.render()
                            ),
                        })
                    }
                };
                Ok((spec, nullable))
            }
        }
    }
}

// -- aggregation ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    Count,
    Sum,
    Mean,
    Min,
    Max,
}

impl AggFunc {
    pub fn parse(s: &str) -> Result<AggFunc, AlgebraError> {
        Ok(match s {
            "count" => AggFunc::Count,
            "sum" => AggFunc::Sum,
            "mean" => AggFunc::Mean,
            "min" => AggFunc::Min,
            "max" => AggFunc::Max,
            other => return Err(AlgebraError::UnknownAggregate { name: other.to_string() }),
        })
    }
}

#[derive(Debug, Clone)]
pub struct AggSpec {
    pub name: String,
    pub func: AggFunc,
    /// Aggregated attribute in the right operand; `count` may be bare.
    pub attr: Option<String>,
}

// -- expression nodes ---------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) enum RestrictCond {
    Pred(Predicate),
    Rel { rel: QueryExpr, matched: Vec<String> },
}

#[derive(Debug)]
pub(crate) enum Node {
    Table(TableId),
    Restrict { input: QueryExpr, cond: RestrictCond, negate: bool },
    Project { input: QueryExpr, outputs: Vec<OutputCol> },
    Join { left: QueryExpr, right: QueryExpr, matched: Vec<String> },
    Aggregate { left: QueryExpr, right: QueryExpr, matched: Vec<String>, specs: Vec<AggSpec> },
    Union { left: QueryExpr, right: QueryExpr },
}

#[derive(Debug, Clone)]
pub(crate) enum OutputCol {
    Pass { src: usize },
    Computed(ScalarExpr),
}

/// An immutable, composable query expression with an inferred heading.
#[derive(Debug, Clone)]
pub struct QueryExpr(Arc<Inner>);

#[derive(Debug)]
struct Inner {
    node: Node,
    heading: Heading,
}

impl QueryExpr {
    pub(crate) fn node(&self) -> &Node {
        &self.0.node
    }

    pub fn heading(&self) -> &Heading {
        &self.0.heading
    }

    fn wrap(node: Node, heading: Heading) -> QueryExpr {
        debug_assert!(heading.attrs.iter().any(|a| a.in_pk), "empty primary key");
        QueryExpr(Arc::new(Inner { node, heading }))
    }

    /// Base expression over a registered table.
    pub fn table(table: &RegisteredTable, lineage: &LineageGraph) -> QueryExpr {
        QueryExpr::wrap(Node::Table(table.id.clone()), Heading::of_table(table, lineage))
    }

    pub(crate) fn table_with_heading(id: TableId, heading: Heading) -> QueryExpr {
        QueryExpr::wrap(Node::Table(id), heading)
    }

    /// Restriction by predicate. `negate` selects the complement.
    pub fn restrict(&self, pred: Predicate, negate: bool) -> Result<QueryExpr, AlgebraError> {
        let validated = pred.validated(self.heading())?;
        Ok(QueryExpr::wrap(
            Node::Restrict {
                input: self.clone(),
                cond: RestrictCond::Pred(validated),
                negate,
            },
            self.heading().clone(),
        ))
    }

    /// Restriction by membership in another relation (semi-join), or its
    /// complement (anti-join) when `negate`. Membership is tested on the
    /// semantically matched namesake attributes.
    pub fn restrict_rel(&self, rel: &QueryExpr, negate: bool) -> Result<QueryExpr, AlgebraError> {
        let matched = resolve_join_attrs(
            &self.heading().origin_pairs(),
            &rel.heading().origin_pairs(),
        )?;
        check_matched_types(self.heading(), rel.heading(), &matched)?;
        Ok(QueryExpr::wrap(
            Node::Restrict {
                input: self.clone(),
                cond: RestrictCond::Rel { rel: rel.clone(), matched },
                negate,
            },
            self.heading().clone(),
        ))
    }

    /// Projection: keeps the primary key (implicitly), the named attributes,
    /// renames, and computed attributes. Renames preserve origins; computed
    /// attributes receive fresh origins.
    pub fn project(
        &self,
        keep: &[&str],
        renames: &[(&str, &str)],
        computed: &[(&str, ScalarExpr)],
    ) -> Result<QueryExpr, AlgebraError> {
        let input = self.heading();

        for k in keep {
            if input.index_of(k).is_none() {
                return Err(unknown(k));
            }
        }
        let mut rename_of: std::collections::BTreeMap<&str, &str> = Default::default();
        for (new, old) in renames {
            if input.index_of(old).is_none() {
                return Err(unknown(old));
            }
            if rename_of.insert(*old, *new).is_some() {
                return Err(AlgebraError::NameCollision { name: (*old).to_string() });
            }
        }

        let mut outputs = Vec::new();
        let mut attrs = Vec::new();
        let mut used = std::collections::BTreeSet::new();
        let push_name = |name: &str,
                             used: &mut std::collections::BTreeSet<String>|
         -> Result<(), AlgebraError> {
            if !used.insert(name.to_string()) {
                return Err(AlgebraError::NameCollision { name: name.to_string() });
            }
            Ok(())
        };

        for (i, a) in input.attrs.iter().enumerate() {
            let renamed = rename_of.get(a.name.as_str());
            let wanted = a.in_pk || renamed.is_some() || keep.contains(&a.name.as_str());
            if !wanted {
                continue;
            }
            let name = renamed.copied().unwrap_or(&a.name);
            push_name(name, &mut used)?;
            outputs.push(OutputCol::Pass { src: i });
            attrs.push(HeadingAttr {
                name: name.to_string(),
                type_spec: a.type_spec.clone(),
                in_pk: a.in_pk,
                nullable: a.nullable,
                origins: a.origins.clone(),
            });
        }

        for (name, expr) in computed {
            push_name(name, &mut used)?;
            let (type_spec, nullable) = expr.infer(input)?;
            outputs.push(OutputCol::Computed(expr.clone()));
            attrs.push(HeadingAttr {
                name: name.to_string(),
                type_spec,
                in_pk: false,
                nullable,
                origins: crate::lineage::origin_set(Origin::fresh(name)),
            });
        }

        Ok(QueryExpr::wrap(
            Node::Project { input: self.clone(), outputs },
            Heading { attrs },
        ))
    }

    /// Natural join on the semantically matched namesake attributes.
    pub fn join(&self, other: &QueryExpr) -> Result<QueryExpr, AlgebraError> {
        let matched = resolve_join_attrs(
            &self.heading().origin_pairs(),
            &other.heading().origin_pairs(),
        )?;
        check_matched_types(self.heading(), other.heading(), &matched)?;

        let mut attrs = Vec::new();
        for a in &self.heading().attrs {
            if matched.contains(&a.name) {
                let b = other.heading().attr(&a.name).unwrap();
                let mut origins = a.origins.clone();
                origins.extend(b.origins.iter().cloned());
                attrs.push(HeadingAttr {
                    name: a.name.clone(),
                    type_spec: a.type_spec.clone(),
                    in_pk: a.in_pk || b.in_pk,
                    nullable: a.nullable && b.nullable,
                    origins,
                });
            } else {
                attrs.push(a.clone());
            }
        }
        for b in &other.heading().attrs {
            if !matched.contains(&b.name) {
                attrs.push(b.clone());
            }
        }

        Ok(QueryExpr::wrap(
            Node::Join { left: self.clone(), right: other.clone(), matched },
            Heading { attrs },
        ))
    }

    /// Left-outer grouping: one output row per row of `self`, extended with
    /// aggregates over the matching rows of `other`. Empty groups yield
    /// count 0 and null for the other functions.
    pub fn aggregate(&self, other: &QueryExpr, specs: &[AggSpec]) -> Result<QueryExpr, AlgebraError> {
        let matched = resolve_join_attrs(
            &self.heading().origin_pairs(),
            &other.heading().origin_pairs(),
        )?;
        check_matched_types(self.heading(), other.heading(), &matched)?;

        let mut attrs = self.heading().attrs.clone();
        let mut used: std::collections::BTreeSet<String> =
            attrs.iter().map(|a| a.name.clone()).collect();

        for spec in specs {
            if !used.insert(spec.name.clone()) {
                return Err(AlgebraError::NameCollision { name: spec.name.clone() });
            }
            let operand = match (&spec.attr, spec.func) {
                (None, AggFunc::Count) => None,
                (None, _) => {
                    return Err(AlgebraError::TypeMismatch {
                        detail: format!("{:?} requires an attribute", spec.func),
                    })
                }
                (Some(attr), _) => {
                    Some(other.heading().attr(attr).ok_or_else(|| unknown(attr))?)
                }
            };
            let type_spec = match spec.func {
                AggFunc::Count => TypeSpec::Core(CoreType::Int64),
                AggFunc::Sum => {
                    let t = &operand.unwrap().type_spec;
                    match t {
                        TypeSpec::Core(CoreType::Int64 | CoreType::Float64) => t.clone(),
                        other => {
                            return Err(AlgebraError::TypeMismatch {
                                detail: format!("sum over non-numeric type {}", other.render()),
                            })
                        }
                    }
                }
                AggFunc::Mean => {
                    match &operand.unwrap().type_spec {
                        TypeSpec::Core(CoreType::Int64 | CoreType::Float64) => {}
                        other => {
                            return Err(AlgebraError::TypeMismatch {
                                detail: format!("mean over non-numeric type {}", other.render()),
                            })
                        }
                    }
                    TypeSpec::Core(CoreType::Float64)
                }
                AggFunc::Min | AggFunc::Max => {
                    let t = &operand.unwrap().type_spec;
                    match t {
                        TypeSpec::Core(
                            CoreType::Int64
                            | CoreType::Float64
                            | CoreType::Varchar(_)
                            | CoreType::DateTime
                            | CoreType::Bool,
                        ) => t.clone(),
                        other => {
                            return Err(AlgebraError::TypeMismatch {
                                detail: format!(
                                    "min/max over non-comparable type {}",
                                    other.render()
                                ),
                            })
                        }
                    }
                }
            };
            attrs.push(HeadingAttr {
                name: spec.name.clone(),
                type_spec,
                in_pk: false,
                nullable: spec.func != AggFunc::Count,
                origins: crate::lineage::origin_set(Origin::fresh(&spec.name)),
            });
        }

        Ok(QueryExpr::wrap(
            Node::Aggregate {
                left: self.clone(),
                right: other.clone(),
                matched,
                specs: specs.to_vec(),
            },
            Heading { attrs },
        ))
    }

    /// Set union of two relations with identical headings.
    pub fn union(&self, other: &QueryExpr) -> Result<QueryExpr, AlgebraError> {
        let (a, b) = (self.heading(), other.heading());
        if a.attrs.len() != b.attrs.len() {
            return Err(AlgebraError::HeadingMismatch {
                detail: format!("{} vs {} attributes", a.attrs.len(), b.attrs.len()),
            });
        }
        let mut attrs = Vec::new();
        for (x, y) in a.attrs.iter().zip(&b.attrs) {
            if x.name != y.name {
                return Err(AlgebraError::HeadingMismatch {
                    detail: format!("attribute {} vs {}", x.name, y.name),
                });
            }
            if x.type_spec != y.type_spec {
                return Err(AlgebraError::HeadingMismatch {
                    detail: format!(
                        "attribute {}: type {} vs {}",
                        x.name,
                        x.type_spec.render(),
                        y.type_spec.render()
                    ),
                });
            }
            if x.in_pk != y.in_pk {
                return Err(AlgebraError::HeadingMismatch {
                    detail: format!("attribute {}: primary-key membership differs", x.name),
                });
            }
            if !crate::lineage::semantically_compatible(&x.origins, &y.origins) {
                return Err(AlgebraError::Semantic(LineageError::SemanticMismatch {
                    attribute: x.name.clone(),
                    left_origins: x.origins.clone(),
                    right_origins: y.origins.clone(),
                }));
            }
            let mut origins = x.origins.clone();
            origins.extend(y.origins.iter().cloned());
            attrs.push(HeadingAttr {
                name: x.name.clone(),
                type_spec: x.type_spec.clone(),
                in_pk: x.in_pk,
                nullable: x.nullable || y.nullable,
                origins,
            });
        }
        Ok(QueryExpr::wrap(
            Node::Union { left: self.clone(), right: other.clone() },
            Heading { attrs },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_definition, DefinitionSource};
    use crate::model::{SchemaRegistry, Tier};
    use crate::value::Row;
    use std::collections::HashMap;

    struct Fixture {
        registry: SchemaRegistry,
        lineage: LineageGraph,
        rows: HashMap<TableId, Vec<Row>>,
    }

    impl TableSource for Fixture {
        fn scan_table(&self, id: &TableId) -> Result<Vec<Row>, String> {
            self.rows.get(id).cloned().ok_or_else(|| format!("no table {id}"))
        }
    }

    impl Fixture {
        fn table(&self, name: &str) -> QueryExpr {
            QueryExpr::table(self.registry.resolve_name(name).unwrap(), &self.lineage)
        }

        fn eval(&self, expr: &QueryExpr) -> ResultSet {
            evaluate(expr, self).unwrap()
        }
    }

    fn fixture() -> Fixture {
        let mut registry = SchemaRegistry::new();
        let mut declare = |name: &str, text: &str| {
            let def = parse_definition(&DefinitionSource {
                text: text.into(),
                schema_name: "lab".into(),
                table_name: name.into(),
                tier: Tier::Manual,
                master: None,
            })
            .unwrap();
            registry.declare(def).unwrap();
        };
        declare("subject", "subject_id : varchar(8)\n---\n");
        declare("session", "-> Subject\nsession_id : int64\n---\nt_start : float64\nt_end : float64\n");
        declare("scan", "-> Session\nscan_id : int64\n---\nrate = null : float64\n");

        let lineage = LineageGraph::build(&registry);
        let mut rows = HashMap::new();
        let s = |x: &str| Value::Str(x.into());
        rows.insert(
            TableId::new("lab", "subject"),
            vec![vec![s("s1")], vec![s("s2")]],
        );
        rows.insert(
            TableId::new("lab", "session"),
            vec![
                vec![s("s1"), Value::Int(1), Value::Float(1.0), Value::Float(3.0)],
                vec![s("s2"), Value::Int(1), Value::Float(0.5), Value::Float(2.5)],
            ],
        );
        rows.insert(
            TableId::new("lab", "scan"),
            vec![
                vec![s("s1"), Value::Int(1), Value::Int(1), Value::Float(2.0)],
                vec![s("s1"), Value::Int(1), Value::Int(2), Value::Float(4.0)],
                vec![s("s1"), Value::Int(1), Value::Int(3), Value::Null],
            ],
        );
        Fixture { registry, lineage, rows }
    }

    #[test]
    fn parent_child_join_key_is_the_union() {
        let f = fixture();
        let j = f.table("subject").join(&f.table("session")).unwrap();
        assert_eq!(j.heading().pk_names(), vec!["subject_id", "session_id"]);
        assert_eq!(f.eval(&j).len(), 2, "one row per session");

        // identical-key join collapses to the shared key
        let a = f.table("session");
        let b = f.table("session");
        let jj = a.join(&b).unwrap();
        assert_eq!(jj.heading().pk_names(), vec!["subject_id", "session_id"]);
    }

    #[test]
    fn antijoin_finds_sessions_without_scans() {
        let f = fixture();
        let e = f.table("session").restrict_rel(&f.table("scan"), true).unwrap();
        let result = f.eval(&e);
        assert_eq!(result.len(), 1);
        assert_eq!(result.value(0, "subject_id"), Some(&Value::str("s2")));
    }

    #[test]
    fn restrict_by_key_and_complement_partition_the_relation() {
        let f = fixture();
        let key = Predicate::key(&[("subject_id", Value::str("s1"))]);
        let hit = f.eval(&f.table("session").restrict(key.clone(), false).unwrap());
        let miss = f.eval(&f.table("session").restrict(key, true).unwrap());
        assert_eq!(hit.len(), 1);
        assert_eq!(miss.len(), 1);
    }

    #[test]
    fn project_keeps_key_implicitly_and_renames_preserve_origins() {
        let f = fixture();
        let bare = f.table("session").project(&[], &[], &[]).unwrap();
        assert_eq!(bare.heading().names(), vec!["subject_id", "session_id"]);
        assert_eq!(f.eval(&bare).len(), 2, "same row count");

        let renamed = f.table("scan").project(&[], &[("rate_hz", "rate")], &[]).unwrap();
        let origins_new = renamed.heading().attr("rate_hz").unwrap().origins.clone();
        let origins_old = f.table("scan").heading().attr("rate").unwrap().origins.clone();
        assert_eq!(origins_new, origins_old, "rename preserves lineage");

        // computed attributes get fresh origins and evaluate correctly
        let dur = f
            .table("session")
            .project(
                &[],
                &[],
                &[(
                    "dur",
                    ScalarExpr::bin(BinOp::Sub, ScalarExpr::attr("t_end"), ScalarExpr::attr("t_start")),
                )],
            )
            .unwrap();
        let result = f.eval(&dur);
        assert_eq!(result.value(0, "dur"), Some(&Value::Float(2.0)));
        assert!(!crate::lineage::semantically_compatible(
            &dur.heading().attr("dur").unwrap().origins,
            &origins_old
        ));
    }

    #[test]
    fn aggregate_counts_empty_groups_as_zero_and_skips_nulls() {
        let f = fixture();
        let specs = [
            AggSpec { name: "n".into(), func: AggFunc::Count, attr: None },
            AggSpec { name: "avg_rate".into(), func: AggFunc::Mean, attr: Some("rate".into()) },
        ];
        let e = f.table("session").aggregate(&f.table("scan"), &specs).unwrap();
        assert_eq!(e.heading().pk_names(), vec!["subject_id", "session_id"]);
        let result = f.eval(&e);
        // s1 session: 3 scans, mean of {2.0, 4.0} (null skipped) = 3.0
        assert_eq!(result.value(0, "n"), Some(&Value::Int(3)));
        assert_eq!(result.value(0, "avg_rate"), Some(&Value::Float(3.0)));
        // s2 session: empty group
        assert_eq!(result.value(1, "n"), Some(&Value::Int(0)));
        assert_eq!(result.value(1, "avg_rate"), Some(&Value::Null));
    }

    #[test]
    fn union_requires_identical_headings() {
        let f = fixture();
        let err = f.table("session").union(&f.table("scan")).unwrap_err();
        assert!(matches!(err, AlgebraError::HeadingMismatch { .. }));
    }
}

fn check_matched_types(
    left: &Heading,
    right: &Heading,
    matched: &[String],
) -> Result<(), AlgebraError> {
    for name in matched {
        let a = &left.attr(name).unwrap().type_spec;
        let b = &right.attr(name).unwrap().type_spec;
        // Codec-typed attributes match on stored-object identity, which is
        // sound because encoding is deterministic.
        let compatible = match (a, b) {
            (TypeSpec::Core(CoreType::Varchar(_)), TypeSpec::Core(CoreType::Varchar(_))) => true,
            (x, y) => x == y,
        };
        if !compatible {
            return Err(AlgebraError::TypeMismatch {
                detail: format!(
                    "matched attribute {name} has incompatible types {} and {}",
                    a.render(),
                    b.render()
                ),
            });
        }
    }
    Ok(())
}
