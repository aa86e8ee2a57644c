//! DOT emission for schema registries.
//!
//! One node per table: manual tables as green boxes, lookup tables gray,
//! imported tables blue ellipses, computed tables red ellipses; part tables
//! as plain text clustered with their master. Solid edges mark identity
//! inheritance, dashed edges mark references. Dimension tables (those that
//! introduce primary-key attributes) get underlined names. Output is
//! deterministic: nodes in topological order, edges sorted.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{RegisteredTable, SchemaRegistry, TableId, Tier};

#[derive(Debug, Error)]
pub enum DiagramError {
    #[error("unknown schema {name}")]
    UnknownSchema { name: String },
}

#[derive(Debug, Clone, Default)]
pub struct DiagramOptions {
    /// Restrict to one schema.
    pub schema: Option<String>,
    /// Include attribute lists in node labels.
    pub show_attrs: bool,
}

fn fill_color(tier: Tier) -> &'static str {
    match tier {
        Tier::Manual => "#9ccc9c",
        Tier::Lookup => "#d3d3d3",
        Tier::Imported => "#9fb7e8",
        Tier::Computed => "#e89f9f",
        Tier::Part => "#ffffff",
    }
}

fn shape(tier: Tier) -> &'static str {
    match tier {
        Tier::Manual | Tier::Lookup => "box",
        Tier::Imported | Tier::Computed => "ellipse",
        Tier::Part => "plaintext",
    }
}

fn display_name(id: &TableId) -> String {
    id.table.replace("__", ".")
}

fn node_label(table: &RegisteredTable, is_dimension: bool, show_attrs: bool) -> String {
    let name = display_name(&table.id);
    if !show_attrs && !is_dimension {
        return format!("label=\"{name}\"");
    }
    // HTML-like label: underline for dimensions, <br/> separated attributes.
    let mut html = if is_dimension { format!("<u>{name}</u>") } else { name };
    if show_attrs {
        for a in &table.attrs {
            if a.in_pk {
                html.push_str(&format!("<br/>{}*", a.name));
            }
        }
        for a in &table.attrs {
            if !a.in_pk {
                html.push_str(&format!("<br/>{}", a.name));
            }
        }
    }
    format!("label=<{html}>")
}

/// Emits a DOT graph for the registry.
pub fn emit_dot(registry: &SchemaRegistry, options: &DiagramOptions) -> Result<String, DiagramError> {
    if let Some(schema) = &options.schema {
        if !registry.schemas().contains(schema) {
            return Err(DiagramError::UnknownSchema { name: schema.clone() });
        }
    }
    let included = |id: &TableId| options.schema.as_ref().map_or(true, |s| id.schema == *s);
    let dimensions = registry.dimensions();

    let tables: Vec<&RegisteredTable> =
        registry.topo_order().into_iter().filter(|t| included(&t.id)).collect();

    // Parts render inside a cluster attached to their master.
    let mut parts_of: BTreeMap<TableId, Vec<&RegisteredTable>> = BTreeMap::new();
    for t in &tables {
        if t.def.tier == Tier::Part {
            let master = TableId::new(&t.id.schema, t.def.master.as_ref().unwrap());
            parts_of.entry(master).or_default().push(t);
        }
    }

    let mut out = String::from("digraph schema {\n  rankdir=LR;\n  node [fontname=\"Helvetica\"];\n");

    let node_line = |t: &RegisteredTable| {
        let style = match t.def.tier {
            Tier::Part => "".to_string(),
            tier => format!(", style=filled, fillcolor=\"{}\"", fill_color(tier)),
        };
        format!(
            "    \"{}\" [shape={}{}, {}];\n",
            t.id,
            shape(t.def.tier),
            style,
            node_label(t, dimensions.contains(&t.id), options.show_attrs)
        )
    };

    for t in &tables {
        if t.def.tier == Tier::Part {
            continue; // rendered inside its master's cluster
        }
        match parts_of.get(&t.id) {
            Some(parts) => {
                out.push_str(&format!(
                    "  subgraph \"cluster_{}\" {{\n    peripheries=0;\n",
                    t.id
                ));
                out.push_str(&node_line(t));
                for p in parts {
                    out.push_str(&node_line(p));
                }
                out.push_str("  }\n");
            }
            None => {
                out.push_str(&node_line(t).replacen("    ", "  ", 1));
            }
        }
    }

    let mut edges: Vec<String> = Vec::new();
    for t in &tables {
        for fk in &t.fks {
            if !included(&fk.parent) {
                continue;
            }
            let style = if fk.into_primary_key { "solid" } else { "dashed" };
            edges.push(format!("  \"{}\" -> \"{}\" [style={}];\n", fk.parent, t.id, style));
        }
    }
    edges.sort();
    for e in edges {
        out.push_str(&e);
    }

    out.push_str("}\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_definition, DefinitionSource};

    fn declare(reg: &mut SchemaRegistry, name: &str, tier: Tier, master: Option<&str>, text: &str) {
        let def = parse_definition(&DefinitionSource {
            text: text.into(),
            schema_name: "lab".into(),
            table_name: name.into(),
            tier,
            master: master.map(|s| s.to_string()),
        })
        .unwrap();
        reg.declare(def).unwrap();
    }

    #[test]
    fn single_manual_table_renders_green_box() {
        let mut reg = SchemaRegistry::new();
        declare(&mut reg, "subject", Tier::Manual, None, "subject_id : varchar(16)\n---\n");
        let dot = emit_dot(&reg, &DiagramOptions::default()).unwrap();
        assert!(dot.contains("\"lab.subject\" [shape=box, style=filled, fillcolor=\"#9ccc9c\""));
        assert!(!dot.contains("->"));
        // dimension: underlined
        assert!(dot.contains("label=<<u>subject</u>>"), "{dot}");
    }

    #[test]
    fn solid_edge_for_identity_inheritance() {
        let mut reg = SchemaRegistry::new();
        declare(&mut reg, "subject", Tier::Manual, None, "subject_id : varchar(16)\n---\n");
        declare(&mut reg, "session", Tier::Manual, None, "-> Subject\nsession_id : int64\n---\n");
        let dot = emit_dot(&reg, &DiagramOptions::default()).unwrap();
        assert!(dot.contains("\"lab.subject\" -> \"lab.session\" [style=solid];"));
    }

    #[test]
    fn deterministic_and_counts_match() {
        let mut reg = SchemaRegistry::new();
        declare(&mut reg, "subject", Tier::Manual, None, "subject_id : varchar(16)\n---\n");
        declare(&mut reg, "session", Tier::Manual, None, "-> Subject\nsession_id : int64\n---\n");
        declare(
            &mut reg,
            "session__note",
            Tier::Part,
            Some("session"),
            "-> Session\nnote_id : int64\n---\n",
        );
        let a = emit_dot(&reg, &DiagramOptions::default()).unwrap();
        let b = emit_dot(&reg, &DiagramOptions::default()).unwrap();
        assert_eq!(a, b);
        let edge_count = a.matches("->").count();
        assert_eq!(edge_count, reg.edges().count());
        assert!(a.contains("cluster_lab.session"));
        assert!(a.contains("shape=plaintext"));
        assert!(
            emit_dot(&reg, &DiagramOptions { schema: Some("nope".into()), show_attrs: false })
                .is_err()
        );
    }
}
