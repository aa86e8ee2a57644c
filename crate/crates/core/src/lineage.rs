//! Attribute provenance through foreign-key chains.
//!
//! Every attribute instance carries the set of sites where it was first
//! declared. Namesake attributes in binary operators match only when their
//! origin sets intersect; incompatible namesakes are a hard error rather
//! than being silently excluded from the match set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::model::{SchemaRegistry, TableId};

#[derive(Debug, Error)]
pub enum LineageError {
    #[error("unknown attribute {name}")]
    UnknownAttribute { name: String },
    #[error("semantic mismatch on {attribute}: left origins {{{left}}} share no ancestor with right origins {{{right}}}", left = render_origins(.left_origins), right = render_origins(.right_origins))]
    SemanticMismatch {
        attribute: String,
        left_origins: OriginSet,
        right_origins: OriginSet,
    },
}

fn render_origins(set: &OriginSet) -> String {
    set.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(", ")
}

/// The site where an attribute was first declared, or a synthetic site for
/// attributes computed inside a query.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Origin {
    Declared { table: TableId, attribute: String },
    Synthetic { id: u64, name: String },
}

impl Origin {
    pub fn declared(table: &TableId, attribute: &str) -> Origin {
        Origin::Declared { table: table.clone(), attribute: attribute.to_string() }
    }

    /// A fresh origin shared with nothing previously created.
    pub fn fresh(name: &str) -> Origin {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        Origin::Synthetic { id: NEXT.fetch_add(1, Ordering::Relaxed), name: name.to_string() }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Declared { table, attribute } => write!(f, "{table}.{attribute}"),
            Origin::Synthetic { id, name } => write!(f, "~computed.{name}#{id}"),
        }
    }
}

pub type OriginSet = BTreeSet<Origin>;

pub fn origin_set(origin: Origin) -> OriginSet {
    let mut s = OriginSet::new();
    s.insert(origin);
    s
}

/// Maps every (table, attribute) to the set of origins it inherits.
#[derive(Debug, Clone, Default)]
pub struct LineageGraph {
    origins: BTreeMap<(TableId, String), OriginSet>,
}

impl LineageGraph {
    /// Derives the lineage graph from a registry. Declared attributes map to
    /// their own origin; inherited attributes to the union of the origin
    /// sets of every parent attribute they map from.
    pub fn build(registry: &SchemaRegistry) -> LineageGraph {
        let mut g = LineageGraph::default();
        for table in registry.topo_order() {
            for attr in &table.attrs {
                let mut set = OriginSet::new();
                if attr.declared_here {
                    set.insert(Origin::declared(&table.id, &attr.name));
                } else {
                    for (parent, parent_attr) in &attr.sources {
                        if let Some(parent_set) =
                            g.origins.get(&(parent.clone(), parent_attr.clone()))
                        {
                            set.extend(parent_set.iter().cloned());
                        }
                    }
                }
                g.origins.insert((table.id.clone(), attr.name.clone()), set);
            }
        }
        g
    }

    pub fn origins_of_table_attr(&self, table: &TableId, attribute: &str) -> Option<&OriginSet> {
        self.origins.get(&(table.clone(), attribute.to_string()))
    }

    pub fn origins_of(&self, table: &TableId, attribute: &str) -> Result<&OriginSet, LineageError> {
        self.origins_of_table_attr(table, attribute).ok_or_else(|| LineageError::UnknownAttribute {
            name: format!("{table}.{attribute}"),
        })
    }
}

/// True iff the two origin sets share a common ancestor.
pub fn semantically_compatible(a: &OriginSet, b: &OriginSet) -> bool {
    !a.is_disjoint(b)
}

/// Returns the namesake attributes of two headings that are semantically
/// compatible. Raises on the first namesake pair with disjoint origins: an
/// incompatible pair is never silently dropped from the match set.
pub fn resolve_join_attrs(
    left: &[(&str, &OriginSet)],
    right: &[(&str, &OriginSet)],
) -> Result<Vec<String>, LineageError> {
    let mut matched = Vec::new();
    for (name, lorigins) in left {
        if let Some((_, rorigins)) = right.iter().find(|(n, _)| n == name) {
            if !semantically_compatible(lorigins, rorigins) {
                return Err(LineageError::SemanticMismatch {
                    attribute: (*name).to_string(),
                    left_origins: (*lorigins).clone(),
                    right_origins: (*rorigins).clone(),
                });
            }
            matched.push((*name).to_string());
        }
    }
    Ok(matched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_definition, DefinitionSource};
    use crate::model::Tier;

    fn declare(reg: &mut SchemaRegistry, name: &str, tier: Tier, text: &str) {
        let def = parse_definition(&DefinitionSource {
            text: text.to_string(),
            schema_name: "lab".into(),
            table_name: name.into(),
            tier,
            master: None,
        })
        .unwrap();
        reg.declare(def).unwrap();
    }

    fn fixture() -> SchemaRegistry {
        let mut reg = SchemaRegistry::new();
        declare(&mut reg, "subject", Tier::Manual, "subject_id : varchar(16)\n---\n");
        declare(&mut reg, "session", Tier::Manual, "-> Subject\nsession_id : int64\n---\n");
        declare(&mut reg, "scan", Tier::Manual, "-> Session\nscan_id : int64\n---\n");
        // second path to subject: a diamond
        declare(&mut reg, "genotype", Tier::Manual, "-> Subject\n---\nallele : varchar(16)\n");
        declare(
            &mut reg,
            "scan_genotype",
            Tier::Computed,
            "-> Scan\n-> Genotype\n---\n",
        );
        reg
    }

    #[test]
    fn declared_attr_maps_to_itself() {
        let reg = fixture();
        let g = LineageGraph::build(&reg);
        let set = g.origins_of(&TableId::new("lab", "subject"), "subject_id").unwrap();
        assert_eq!(set.len(), 1);
        assert!(set.contains(&Origin::declared(&TableId::new("lab", "subject"), "subject_id")));
    }

    #[test]
    fn inherited_attr_carries_root_origin() {
        let reg = fixture();
        let g = LineageGraph::build(&reg);
        let s = g.origins_of(&TableId::new("lab", "session"), "subject_id").unwrap();
        let root = g.origins_of(&TableId::new("lab", "subject"), "subject_id").unwrap();
        assert_eq!(s, root);
        // two chains deep
        let sc = g.origins_of(&TableId::new("lab", "scan"), "subject_id").unwrap();
        assert_eq!(sc, root);
    }

    #[test]
    fn diamond_paths_stay_compatible() {
        let reg = fixture();
        let g = LineageGraph::build(&reg);
        let via_scan = g.origins_of(&TableId::new("lab", "scan"), "subject_id").unwrap();
        let via_genotype = g.origins_of(&TableId::new("lab", "genotype"), "subject_id").unwrap();
        assert!(semantically_compatible(via_scan, via_genotype));
        let merged = g
            .origins_of(&TableId::new("lab", "scan_genotype"), "subject_id")
            .unwrap();
        assert!(semantically_compatible(merged, via_scan));
    }

    #[test]
    fn homonyms_are_rejected_without_silent_exclusion() {
        let a_id = origin_set(Origin::declared(&TableId::new("lab", "scan_a"), "id"));
        let b_id = origin_set(Origin::declared(&TableId::new("lab", "scan_b"), "id"));
        let shared = origin_set(Origin::declared(&TableId::new("lab", "subject"), "subject_id"));

        // compatible pair alone
        let left = vec![("subject_id", &shared), ("id", &a_id)];
        let right = vec![("subject_id", &shared), ("id", &b_id)];
        let err = resolve_join_attrs(&left, &right).unwrap_err();
        match err {
            LineageError::SemanticMismatch { attribute, .. } => assert_eq!(attribute, "id"),
            other => panic!("unexpected {other:?}"),
        }

        let ok = resolve_join_attrs(
            &[("subject_id", &shared)],
            &[("subject_id", &shared)],
        )
        .unwrap();
        assert_eq!(ok, vec!["subject_id"]);
    }

    #[test]
    fn fresh_origins_match_only_themselves() {
        let f1 = origin_set(Origin::fresh("dur"));
        let f2 = origin_set(Origin::fresh("dur"));
        assert!(!semantically_compatible(&f1, &f2));
        assert!(semantically_compatible(&f1, &f1));
    }
}
