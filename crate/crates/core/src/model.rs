//! Schemas, tables, tiers, attributes, foreign keys and master-part groups.
//!
//! A [`SchemaRegistry`] holds declared tables in declaration order. Parents
//! must be declared before children, which keeps registry construction
//! single-pass and makes declaration order a valid topological order of the
//! dependency DAG. A finalized registry is immutable and safely shareable
//! across concurrent readers.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::types::{is_identifier, StoreHint, TypeSpec};
use crate::value::Value;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("foreign key between {a} and {b} would create a cycle")]
    CycleError { a: String, b: String },
    #[error("table {table}: unknown foreign key parent {parent}")]
    UnknownParent { table: String, parent: String },
    #[error("table {table}: duplicate attribute {attribute}")]
    DuplicateAttribute { table: String, attribute: String },
    #[error("part table {table} declared without a master")]
    PartWithoutMaster { table: String },
    #[error("table {table}: invalid master {master}: {reason}")]
    InvalidMaster { table: String, master: String, reason: String },
    #[error("table {table} is already declared with a different definition")]
    TableRedefinition { table: String },
    #[error("bad name {name:?}: {reason}")]
    BadName { name: String, reason: String },
    #[error("table {table}: {reason}")]
    BadDefinition { table: String, reason: String },
}

/// Data entry mode of a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tier {
    Manual,
    Lookup,
    Imported,
    Computed,
    Part,
}

impl Tier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::Manual => "manual",
            Tier::Lookup => "lookup",
            Tier::Imported => "imported",
            Tier::Computed => "computed",
            Tier::Part => "part",
        }
    }

    pub fn parse(s: &str) -> Option<Tier> {
        Some(match s {
            "manual" => Tier::Manual,
            "lookup" => Tier::Lookup,
            "imported" => Tier::Imported,
            "computed" => Tier::Computed,
            "part" => Tier::Part,
            _ => return None,
        })
    }

    /// Tables whose contents are derived by a registered make callback.
    pub fn is_auto_populated(&self) -> bool {
        matches!(self, Tier::Imported | Tier::Computed)
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Default marker for an attribute. `Null` marks the attribute nullable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttrDefault {
    Null,
    Literal(Value),
}

/// A declared attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    pub type_spec: TypeSpec,
    pub default: Option<AttrDefault>,
    pub comment: String,
}

impl Attribute {
    pub fn new(name: &str, type_spec: TypeSpec) -> Attribute {
        Attribute { name: name.to_string(), type_spec, default: None, comment: String::new() }
    }

    pub fn nullable(&self) -> bool {
        matches!(self.default, Some(AttrDefault::Null))
    }
}

/// Reference to a foreign key parent, optionally schema-qualified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParentRef {
    pub schema: Option<String>,
    pub table: String,
}

impl ParentRef {
    pub fn new(table: &str) -> ParentRef {
        ParentRef { schema: None, table: table.to_string() }
    }
}

impl fmt::Display for ParentRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.schema {
            Some(s) => write!(f, "{s}.{}", self.table),
            None => f.write_str(&self.table),
        }
    }
}

/// A foreign key declaration. `attribute_map` holds only the explicit
/// renames (child attribute, parent pk attribute); unmapped parent pk
/// attributes default to identical names. `position` is the number of own
/// attributes that precede this key within its section, preserving the
/// declared interleaving of attributes and foreign keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForeignKey {
    pub parent: ParentRef,
    pub attribute_map: Vec<(String, String)>,
    pub into_primary_key: bool,
    pub position: usize,
}

/// An unresolved table declaration, as produced by the definition parser.
/// Inherited attributes are resolved against the registry at declare time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableDef {
    pub schema_name: String,
    pub table_name: String,
    pub tier: Tier,
    pub comment: String,
    /// Own primary-key attributes, in declaration order.
    pub primary_attrs: Vec<Attribute>,
    /// Own secondary attributes, in declaration order.
    pub secondary_attrs: Vec<Attribute>,
    pub foreign_keys: Vec<ForeignKey>,
    /// Master table name (same schema); Part tier only.
    pub master: Option<String>,
}

/// Identifies a table: `schema.table`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TableId {
    pub schema: String,
    pub table: String,
}

impl TableId {
    pub fn new(schema: &str, table: &str) -> TableId {
        TableId { schema: schema.to_string(), table: table.to_string() }
    }
}

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.schema, self.table)
    }
}

/// An attribute of a registered table with inheritance resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedAttr {
    pub name: String,
    pub type_spec: TypeSpec,
    pub default: Option<AttrDefault>,
    pub comment: String,
    pub in_pk: bool,
    /// True when the attribute is declared in this table rather than
    /// inherited through a foreign key.
    pub declared_here: bool,
    /// For inherited attributes: every (parent table, parent attribute)
    /// this attribute maps from.
    pub sources: Vec<(TableId, String)>,
}

impl ResolvedAttr {
    pub fn nullable(&self) -> bool {
        matches!(self.default, Some(AttrDefault::Null))
    }
}

/// A foreign key with the full attribute map resolved (parent pk order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedFk {
    pub parent: TableId,
    /// (child attribute, parent pk attribute), covering the parent's whole
    /// primary key exactly once each.
    pub map: Vec<(String, String)>,
    pub into_primary_key: bool,
}

/// A declared table with its resolved heading.
#[derive(Debug, Clone)]
pub struct RegisteredTable {
    pub id: TableId,
    pub def: TableDef,
    /// Declaration index across the whole registry.
    pub index: usize,
    /// Full heading: primary-key attributes first (in key order), then
    /// secondary attributes.
    pub attrs: Vec<ResolvedAttr>,
    pub fks: Vec<ResolvedFk>,
}

impl RegisteredTable {
    pub fn primary_key(&self) -> impl Iterator<Item = &ResolvedAttr> {
        self.attrs.iter().filter(|a| a.in_pk)
    }

    pub fn pk_names(&self) -> Vec<String> {
        self.primary_key().map(|a| a.name.clone()).collect()
    }

    pub fn attr(&self, name: &str) -> Option<&ResolvedAttr> {
        self.attrs.iter().find(|a| a.name == name)
    }
}

/// The schema registry: declared tables, declaration order, dependency DAG.
#[derive(Debug, Default, Clone)]
pub struct SchemaRegistry {
    tables: Vec<RegisteredTable>,
    by_id: HashMap<TableId, usize>,
    schemas: Vec<String>,
}

impl SchemaRegistry {
    pub fn new() -> SchemaRegistry {
        SchemaRegistry::default()
    }

    pub fn tables(&self) -> &[RegisteredTable] {
        &self.tables
    }

    pub fn schemas(&self) -> &[String] {
        &self.schemas
    }

    pub fn get(&self, id: &TableId) -> Option<&RegisteredTable> {
        self.by_id.get(id).map(|i| &self.tables[*i])
    }

    /// Resolves `name` as `schema.table` or as a bare table name when it is
    /// unique across schemas.
    pub fn resolve_name(&self, name: &str) -> Result<&RegisteredTable, ModelError> {
        if let Some((schema, table)) = name.split_once('.') {
            let id = TableId::new(schema, table);
            return self.get(&id).ok_or_else(|| ModelError::BadName {
                name: name.to_string(),
                reason: "no such table".into(),
            });
        }
        let mut found = None;
        for t in &self.tables {
            if t.id.table == name {
                if found.is_some() {
                    return Err(ModelError::BadName {
                        name: name.to_string(),
                        reason: "ambiguous across schemas; qualify as schema.table".into(),
                    });
                }
                found = Some(t);
            }
        }
        found.ok_or_else(|| ModelError::BadName {
            name: name.to_string(),
            reason: "no such table".into(),
        })
    }

    /// All dependency edges as (child, parent, into_primary_key).
    pub fn edges(&self) -> impl Iterator<Item = (&TableId, &TableId, bool)> {
        self.tables
            .iter()
            .flat_map(|t| t.fks.iter().map(move |fk| (&t.id, &fk.parent, fk.into_primary_key)))
    }

    /// Direct children of `id` (tables with a foreign key to it).
    pub fn children_of(&self, id: &TableId) -> Vec<&RegisteredTable> {
        self.tables
            .iter()
            .filter(|t| t.fks.iter().any(|fk| &fk.parent == id))
            .collect()
    }

    /// Transitive ancestors of `id` along foreign keys (excluding `id`).
    pub fn ancestors_of(&self, id: &TableId) -> Vec<TableId> {
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = vec![id.clone()];
        while let Some(cur) = stack.pop() {
            if let Some(t) = self.get(&cur) {
                for fk in &t.fks {
                    if seen.insert(fk.parent.clone()) {
                        stack.push(fk.parent.clone());
                    }
                }
            }
        }
        seen.into_iter().collect()
    }

    /// Declares a table. Re-declaring an identical definition is a no-op;
    /// all foreign key parents must already be registered.
    pub fn declare(&mut self, def: TableDef) -> Result<&RegisteredTable, ModelError> {
        validate_names(&def)?;
        let id = TableId::new(&def.schema_name, &def.table_name);

        if let Some(i) = self.by_id.get(&id) {
            if self.tables[*i].def == def {
                return Ok(&self.tables[*i]);
            }
            return Err(ModelError::TableRedefinition { table: id.to_string() });
        }

        let resolved = self.resolve(&id, &def)?;
        if !self.schemas.contains(&def.schema_name) {
            self.schemas.push(def.schema_name.clone());
        }
        let index = self.tables.len();
        self.by_id.insert(id.clone(), index);
        self.tables.push(RegisteredTable { id, def, index, attrs: resolved.0, fks: resolved.1 });
        Ok(self.tables.last().unwrap())
    }

    fn resolve_parent(&self, id: &TableId, r: &ParentRef) -> Result<&RegisteredTable, ModelError> {
        let parent_id = TableId::new(r.schema.as_deref().unwrap_or(&id.schema), &r.table);
        if parent_id == *id {
            return Err(ModelError::CycleError { a: id.to_string(), b: id.to_string() });
        }
        self.get(&parent_id).ok_or_else(|| ModelError::UnknownParent {
            table: id.to_string(),
            parent: parent_id.to_string(),
        })
    }

    fn resolve(
        &self,
        id: &TableId,
        def: &TableDef,
    ) -> Result<(Vec<ResolvedAttr>, Vec<ResolvedFk>), ModelError> {
        let bad = |reason: String| ModelError::BadDefinition { table: id.to_string(), reason };

        match (def.tier, &def.master) {
            (Tier::Part, None) => {
                return Err(ModelError::PartWithoutMaster { table: id.to_string() })
            }
            (Tier::Part, Some(_)) => {}
            (_, Some(m)) => {
                return Err(ModelError::InvalidMaster {
                    table: id.to_string(),
                    master: m.clone(),
                    reason: format!("{} tables have no master", def.tier),
                })
            }
            _ => {}
        }

        let mut attrs: Vec<ResolvedAttr> = Vec::new();
        let mut fks: Vec<ResolvedFk> = Vec::new();

        let add_own = |attrs: &mut Vec<ResolvedAttr>, a: &Attribute, in_pk: bool| {
            if attrs.iter().any(|x| x.name == a.name) {
                return Err(ModelError::DuplicateAttribute {
                    table: id.to_string(),
                    attribute: a.name.clone(),
                });
            }
            if in_pk {
                if a.nullable() {
                    return Err(bad(format!("primary-key attribute {} may not be nullable", a.name)));
                }
                if a.type_spec.is_codec() {
                    return Err(bad(format!(
                        "primary-key attribute {} may not have a codec type",
                        a.name
                    )));
                }
            }
            attrs.push(ResolvedAttr {
                name: a.name.clone(),
                type_spec: a.type_spec.clone(),
                default: a.default.clone(),
                comment: a.comment.clone(),
                in_pk,
                declared_here: true,
                sources: Vec::new(),
            });
            Ok(())
        };

        for in_pk in [true, false] {
            let own = if in_pk { &def.primary_attrs } else { &def.secondary_attrs };
            let mut section_fks: Vec<&ForeignKey> = def
                .foreign_keys
                .iter()
                .filter(|fk| fk.into_primary_key == in_pk)
                .collect();
            section_fks.sort_by_key(|fk| fk.position);

            let mut fk_iter = section_fks.into_iter().peekable();
            for (i, a) in own.iter().enumerate() {
                while fk_iter.peek().map_or(false, |fk| fk.position <= i) {
                    let fk = fk_iter.next().unwrap();
                    self.apply_fk(id, def, fk, in_pk, &mut attrs, &mut fks)?;
                }
                add_own(&mut attrs, a, in_pk)?;
            }
            for fk in fk_iter {
                self.apply_fk(id, def, fk, in_pk, &mut attrs, &mut fks)?;
            }
        }

        // Heading order: primary attributes first, then secondary.
        attrs.sort_by_key(|a| !a.in_pk);

        if def.tier == Tier::Part {
            let master = def.master.as_ref().unwrap();
            let master_id = TableId::new(&id.schema, master);
            let master_table = self.get(&master_id).ok_or_else(|| ModelError::InvalidMaster {
                table: id.to_string(),
                master: master.clone(),
                reason: "master is not declared".into(),
            })?;
            if master_table.def.tier == Tier::Part {
                return Err(ModelError::InvalidMaster {
                    table: id.to_string(),
                    master: master.clone(),
                    reason: "parts may not nest: master is itself a part".into(),
                });
            }
            let has_master_fk = fks
                .iter()
                .any(|fk| fk.parent == master_id && fk.into_primary_key);
            if !has_master_fk {
                return Err(ModelError::InvalidMaster {
                    table: id.to_string(),
                    master: master.clone(),
                    reason: "part must declare a primary foreign key to its master".into(),
                });
            }
            let master_pk = master_table.pk_names();
            let own_pk: Vec<_> = attrs.iter().filter(|a| a.in_pk).map(|a| a.name.clone()).collect();
            if own_pk.len() < master_pk.len() || own_pk[..master_pk.len()] != master_pk[..] {
                return Err(ModelError::InvalidMaster {
                    table: id.to_string(),
                    master: master.clone(),
                    reason: format!(
                        "part primary key {own_pk:?} must begin with master primary key {master_pk:?}"
                    ),
                });
            }
        }

        if !attrs.iter().any(|a| a.in_pk) {
            return Err(bad("table has no primary key".into()));
        }

        Ok((attrs, fks))
    }

    fn apply_fk(
        &self,
        id: &TableId,
        def: &TableDef,
        fk: &ForeignKey,
        in_pk: bool,
        attrs: &mut Vec<ResolvedAttr>,
        fks: &mut Vec<ResolvedFk>,
    ) -> Result<(), ModelError> {
        let bad = |reason: String| ModelError::BadDefinition { table: id.to_string(), reason };
        let parent = self.resolve_parent(id, &fk.parent)?;
        let parent_pk: Vec<&ResolvedAttr> = parent.primary_key().collect();

        // Explicit renames must target distinct parent pk attributes.
        let mut rename_of: HashMap<&str, &str> = HashMap::new();
        for (child, parent_attr) in &fk.attribute_map {
            if !parent_pk.iter().any(|a| a.name == *parent_attr) {
                return Err(bad(format!(
                    "foreign key to {} maps {child} from {parent_attr}, which is not a parent primary-key attribute",
                    parent.id
                )));
            }
            if rename_of.insert(parent_attr.as_str(), child.as_str()).is_some() {
                return Err(bad(format!(
                    "foreign key to {} maps parent attribute {parent_attr} twice",
                    parent.id
                )));
            }
        }

        if def.tier == Tier::Part
            && fk.into_primary_key
            && def.master.as_deref() == Some(fk.parent.table.as_str())
            && !fk.attribute_map.is_empty()
        {
            return Err(bad("part-to-master foreign key may not rename attributes".into()));
        }

        let mut map = Vec::new();
        for pa in &parent_pk {
            let child_name = rename_of.get(pa.name.as_str()).copied().unwrap_or(&pa.name);
            map.push((child_name.to_string(), pa.name.clone()));

            if let Some(existing) = attrs.iter_mut().find(|x| x.name == child_name) {
                // A second inheritance path onto the same attribute: allowed
                // when it is itself inherited with the same type.
                if existing.declared_here {
                    return Err(ModelError::DuplicateAttribute {
                        table: id.to_string(),
                        attribute: child_name.to_string(),
                    });
                }
                if existing.type_spec != pa.type_spec {
                    return Err(bad(format!(
                        "attribute {child_name} inherited twice with different types"
                    )));
                }
                if existing.in_pk != in_pk {
                    return Err(bad(format!(
                        "attribute {child_name} inherited both into and outside the primary key"
                    )));
                }
                existing.sources.push((parent.id.clone(), pa.name.clone()));
            } else {
                attrs.push(ResolvedAttr {
                    name: child_name.to_string(),
                    type_spec: pa.type_spec.clone(),
                    default: None,
                    comment: pa.comment.clone(),
                    in_pk,
                    declared_here: false,
                    sources: vec![(parent.id.clone(), pa.name.clone())],
                });
            }
        }

        fks.push(ResolvedFk { parent: parent.id.clone(), map, into_primary_key: in_pk });
        Ok(())
    }

    /// Tables in an order where every parent precedes every child, ties
    /// broken by declaration order. Because parents must be declared first,
    /// this is exactly the declaration order.
    pub fn topo_order(&self) -> Vec<&RegisteredTable> {
        debug_assert!(self.tables.iter().all(|t| {
            t.fks.iter().all(|fk| self.by_id.get(&fk.parent).is_some_and(|p| *p < t.index))
        }));
        self.tables.iter().collect()
    }

    /// Tables declaring at least one primary-key attribute that is not
    /// inherited through any foreign key. These define the dimensionality
    /// of the pipeline's data.
    pub fn dimensions(&self) -> Vec<TableId> {
        self.tables
            .iter()
            .filter(|t| t.attrs.iter().any(|a| a.in_pk && a.declared_here))
            .map(|t| t.id.clone())
            .collect()
    }

    /// Canonical line-oriented manifest: one block per table in declaration
    /// order. Used for idempotence checks and diffing.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            out.push_str(&manifest_block(&t.def));
        }
        out
    }
}

/// Renders one manifest block for a table definition.
pub fn manifest_block(def: &TableDef) -> String {
    let mut out = format!("%table {}.{} tier={}", def.schema_name, def.table_name, def.tier);
    if let Some(m) = &def.master {
        out.push_str(&format!(" master={m}"));
    }
    out.push('\n');
    out.push_str(&crate::dsl::render_definition(def));
    out.push_str("%end\n");
    out
}

/// Parses a manifest back into table definitions, in declaration order.
pub fn parse_manifest(text: &str) -> Result<Vec<TableDef>, ModelError> {
    let mut defs = Vec::new();
    let mut lines = text.lines().peekable();
    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let header = line.strip_prefix("%table ").ok_or_else(|| ModelError::BadDefinition {
            table: "<manifest>".into(),
            reason: format!("expected %table header, got {line:?}"),
        })?;
        let mut parts = header.split_whitespace();
        let name = parts.next().unwrap_or_default();
        let (schema, table) = name.split_once('.').ok_or_else(|| ModelError::BadName {
            name: name.to_string(),
            reason: "manifest table names are schema-qualified".into(),
        })?;
        let mut tier = None;
        let mut master = None;
        for p in parts {
            if let Some(t) = p.strip_prefix("tier=") {
                tier = Tier::parse(t);
            } else if let Some(m) = p.strip_prefix("master=") {
                master = Some(m.to_string());
            }
        }
        let tier = tier.ok_or_else(|| ModelError::BadDefinition {
            table: name.to_string(),
            reason: "manifest header missing tier".into(),
        })?;
        let mut body = String::new();
        for line in lines.by_ref() {
            if line == "%end" {
                break;
            }
            body.push_str(line);
            body.push('\n');
        }
        let def = crate::dsl::parse_definition(&crate::dsl::DefinitionSource {
            text: body,
            schema_name: schema.to_string(),
            table_name: table.to_string(),
            tier,
            master,
        })
        .map_err(|e| ModelError::BadDefinition {
            table: name.to_string(),
            reason: format!("manifest block does not parse: {e}"),
        })?;
        defs.push(def);
    }
    Ok(defs)
}

fn validate_names(def: &TableDef) -> Result<(), ModelError> {
    let check = |name: &str, what: &str| -> Result<(), ModelError> {
        if !is_identifier(name) {
            return Err(ModelError::BadName {
                name: name.to_string(),
                reason: format!(
                    "{what} must match [a-z][a-z0-9_]* and be at most 64 characters"
                ),
            });
        }
        Ok(())
    };
    check(&def.schema_name, "schema name")?;
    check(&def.table_name, "table name")?;
    if def.table_name.starts_with("jobs__") {
        return Err(ModelError::BadName {
            name: def.table_name.clone(),
            reason: "the jobs__ prefix is reserved for job tables".into(),
        });
    }
    for a in def.primary_attrs.iter().chain(&def.secondary_attrs) {
        check(&a.name, "attribute name")?;
        if let Some(AttrDefault::Literal(v)) = &a.default {
            a.type_spec.conform(v).map_err(|e| ModelError::BadDefinition {
                table: def.table_name.clone(),
                reason: format!("default for {} does not conform: {e}", a.name),
            })?;
        }
    }
    Ok(())
}

// -- workflow normalization lint ------------------------------------------------

/// Lint rule identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LintRule {
    /// Computed/Imported table with zero foreign key dependencies.
    NoUpstreamDependency,
    /// Part table whose primary key adds nothing beyond the master's.
    PartKeyNotExtended,
    /// Manual table referencing a Computed table.
    DirectionInversion,
    /// Secondary attribute duplicating a parent's secondary attribute name
    /// without shared lineage.
    KitchenSink,
    /// Attribute declared with a native (backend-specific) type.
    NativeType,
}

#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub table: TableId,
    pub rule: LintRule,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.table, self.message)
    }
}

/// Advisory workflow-normalization checks. Lints never fail declaration.
pub fn lint_workflow_normalization(registry: &SchemaRegistry) -> Vec<Diagnostic> {
    let lineage = crate::lineage::LineageGraph::build(registry);
    let mut out = Vec::new();

    for t in registry.tables() {
        if t.def.tier.is_auto_populated() && t.fks.is_empty() {
            out.push(Diagnostic {
                table: t.id.clone(),
                rule: LintRule::NoUpstreamDependency,
                message: format!("{} table has no upstream dependency", t.def.tier),
            });
        }

        if t.def.tier == Tier::Part {
            let master_id = TableId::new(&t.id.schema, t.def.master.as_ref().unwrap());
            if let Some(master) = registry.get(&master_id) {
                if t.pk_names() == master.pk_names() {
                    out.push(Diagnostic {
                        table: t.id.clone(),
                        rule: LintRule::PartKeyNotExtended,
                        message: format!(
                            "part primary key does not extend master {master_id}'s key"
                        ),
                    });
                }
            }
        }

        if t.def.tier == Tier::Manual {
            for fk in &t.fks {
                if let Some(parent) = registry.get(&fk.parent) {
                    if parent.def.tier == Tier::Computed {
                        out.push(Diagnostic {
                            table: t.id.clone(),
                            rule: LintRule::DirectionInversion,
                            message: format!(
                                "manual table references computed table {} (workflow direction inversion)",
                                fk.parent
                            ),
                        });
                    }
                }
            }
        }

        for fk in &t.fks {
            let parent = match registry.get(&fk.parent) {
                Some(p) => p,
                None => continue,
            };
            for a in t.attrs.iter().filter(|a| !a.in_pk) {
                if let Some(pa) = parent.attrs.iter().find(|p| !p.in_pk && p.name == a.name) {
                    let mine = lineage.origins_of_table_attr(&t.id, &a.name);
                    let theirs = lineage.origins_of_table_attr(&parent.id, &pa.name);
                    if let (Some(mine), Some(theirs)) = (mine, theirs) {
                        if mine.is_disjoint(theirs) {
                            out.push(Diagnostic {
                                table: t.id.clone(),
                                rule: LintRule::KitchenSink,
                                message: format!(
                                    "secondary attribute {} duplicates parent {}'s attribute name without shared lineage",
                                    a.name, parent.id
                                ),
                            });
                        }
                    }
                }
            }
        }

        for a in &t.attrs {
            if a.declared_here && matches!(a.type_spec, TypeSpec::Native(_)) {
                out.push(Diagnostic {
                    table: t.id.clone(),
                    rule: LintRule::NativeType,
                    message: format!(
                        "attribute {} uses native type {}; prefer a core type",
                        a.name,
                        a.type_spec.render()
                    ),
                });
            }
        }
    }

    out
}

/// True if the given codec-typed attribute should go to schema-addressed
/// storage rather than the default hash-addressed scheme.
pub fn is_schema_addressed(attr: &ResolvedAttr) -> bool {
    attr.type_spec.store_hint() == StoreHint::SchemaAddressed
}
