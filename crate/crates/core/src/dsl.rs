//! The textual table-definition language.
//!
//! Line-oriented grammar:
//!
//! ```text
//! # table comment                  (first standalone comment above ---)
//! -> Parent                        (foreign key; above --- it lands in the PK)
//! name = default : type  # comment (attribute; `= null` marks nullable)
//! ---
//! -> OtherParent (child = parent)  (below ---: reference without identity)
//! name : type
//! ```
//!
//! Table names in `->` lines may be written in CamelCase (`InstrumentSession`)
//! or as stored snake_case names; `schema.Table` qualifies across schemas
//! (schemas are always lowercase) and `Master.Part` names a part table.
//! Parsing is pure and `parse ∘ render` is the identity on valid definitions.

use thiserror::Error;

use crate::model::{Attribute, AttrDefault, ForeignKey, ParentRef, TableDef, Tier};
use crate::types::{is_identifier, TypeSpec};
use crate::value::Value;

#[derive(Debug, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

fn err(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, column, message: message.into() }
}

/// Caller-supplied context for a definition text; the text itself carries
/// only attributes, foreign keys and comments.
#[derive(Debug, Clone)]
pub struct DefinitionSource {
    pub text: String,
    pub schema_name: String,
    pub table_name: String,
    pub tier: Tier,
    /// Master table name; required iff `tier` is Part.
    pub master: Option<String>,
}

/// Converts CamelCase to snake_case; snake_case passes through.
pub fn camel_to_snake(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len() + 4);
    for (i, c) in chars.iter().enumerate() {
        if c.is_ascii_uppercase() {
            let prev_lower = i > 0 && (chars[i - 1].is_ascii_lowercase() || chars[i - 1].is_ascii_digit());
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_ascii_lowercase());
            if i > 0 && (prev_lower || next_lower) {
                out.push('_');
            }
            out.push(c.to_ascii_lowercase());
        } else {
            out.push(*c);
        }
    }
    out
}

/// Parses a definition text into an unresolved [`TableDef`].
pub fn parse_definition(src: &DefinitionSource) -> Result<TableDef, ParseError> {
    let mut def = TableDef {
        schema_name: src.schema_name.clone(),
        table_name: src.table_name.clone(),
        tier: src.tier,
        comment: String::new(),
        primary_attrs: Vec::new(),
        secondary_attrs: Vec::new(),
        foreign_keys: Vec::new(),
        master: src.master.clone(),
    };

    let mut in_secondary = false;
    let mut saw_separator = false;
    let mut table_comment_taken = false;

    for (idx, raw) in src.text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end();
        let trimmed = line.trim_start();

        if trimmed.is_empty() {
            continue;
        }
        if trimmed.chars().all(|c| c == '-') && trimmed.len() >= 3 {
            if saw_separator {
                return Err(err(lineno, 1, "duplicate --- separator"));
            }
            saw_separator = true;
            in_secondary = true;
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if !in_secondary && !table_comment_taken {
                def.comment = comment.trim().to_string();
                table_comment_taken = true;
            }
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("->") {
            let position =
                if in_secondary { def.secondary_attrs.len() } else { def.primary_attrs.len() };
            let fk = parse_fk_line(rest, lineno, !in_secondary, position)?;
            def.foreign_keys.push(fk);
            continue;
        }

        let attr = parse_attr_line(trimmed, lineno)?;
        let dup = def
            .primary_attrs
            .iter()
            .chain(&def.secondary_attrs)
            .any(|a| a.name == attr.name);
        if dup {
            return Err(err(lineno, 1, format!("duplicate attribute {}", attr.name)));
        }
        if in_secondary {
            def.secondary_attrs.push(attr);
        } else {
            if matches!(attr.default, Some(AttrDefault::Null)) {
                return Err(err(lineno, 1, format!(
                    "primary-key attribute {} may not be nullable",
                    attr.name
                )));
            }
            def.primary_attrs.push(attr);
        }
    }

    if !saw_separator {
        let last = src.text.lines().count().max(1);
        return Err(err(last, 1, "missing --- separator between key and secondary sections"));
    }

    Ok(def)
}

fn parse_fk_line(
    rest: &str,
    lineno: usize,
    into_pk: bool,
    position: usize,
) -> Result<ForeignKey, ParseError> {
    let rest = rest.trim();
    let (target, map_part) = match rest.find('(') {
        Some(i) => {
            let close = rest
                .rfind(')')
                .ok_or_else(|| err(lineno, i + 1, "unclosed attribute map in foreign key"))?;
            (rest[..i].trim(), Some(rest[i + 1..close].trim()))
        }
        None => (rest, None),
    };
    if target.is_empty() {
        return Err(err(lineno, 1, "foreign key needs a target table"));
    }

    let segments: Vec<&str> = target.split('.').collect();
    let (schema, table_segments) = if segments.len() > 1
        && segments[0].chars().next().is_some_and(|c| c.is_ascii_lowercase())
    {
        (Some(segments[0].to_string()), &segments[1..])
    } else {
        (None, &segments[..])
    };
    let table = match table_segments {
        [one] => camel_to_snake(one),
        [master, part] => format!("{}__{}", camel_to_snake(master), camel_to_snake(part)),
        _ => return Err(err(lineno, 1, format!("bad foreign key target {target:?}"))),
    };
    if !is_identifier(&table) || schema.as_deref().is_some_and(|s| !is_identifier(s)) {
        return Err(err(lineno, 1, format!("bad foreign key target {target:?}")));
    }

    let mut attribute_map = Vec::new();
    if let Some(map) = map_part {
        for pair in map.split(',') {
            let pair = pair.trim();
            if pair.is_empty() {
                continue;
            }
            let (child, parent_attr) = pair.split_once('=').ok_or_else(|| {
                err(lineno, 1, format!("malformed rename {pair:?} (want child = parent)"))
            })?;
            let (child, parent_attr) = (child.trim(), parent_attr.trim());
            if !is_identifier(child) || !is_identifier(parent_attr) {
                return Err(err(lineno, 1, format!("malformed rename {pair:?}")));
            }
            attribute_map.push((child.to_string(), parent_attr.to_string()));
        }
    }

    Ok(ForeignKey {
        parent: ParentRef { schema, table },
        attribute_map,
        into_primary_key: into_pk,
        position,
    })
}

fn parse_attr_line(line: &str, lineno: usize) -> Result<Attribute, ParseError> {
    let mut scan = Scanner { s: line, pos: 0, lineno };

    let name = scan.identifier("attribute name")?;
    scan.skip_ws();

    let default = if scan.eat('=') {
        scan.skip_ws();
        let lit = scan.literal()?;
        scan.skip_ws();
        Some(lit)
    } else {
        None
    };

    if !scan.eat(':') {
        return Err(err(lineno, scan.pos + 1, "expected `:` before type"));
    }
    scan.skip_ws();

    let (type_token, comment) = scan.rest_split_comment();
    let type_spec = TypeSpec::parse(type_token)
        .map_err(|e| err(lineno, scan.pos + 1, format!("unknown type token: {e}")))?;

    Ok(Attribute { name, type_spec, default, comment })
}

struct Scanner<'a> {
    s: &'a str,
    pos: usize,
    lineno: usize,
}

impl<'a> Scanner<'a> {
    fn skip_ws(&mut self) {
        while self.s[self.pos..].starts_with([' ', '\t']) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.s[self.pos..].starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn identifier(&mut self, what: &str) -> Result<String, ParseError> {
        let start = self.pos;
        let bytes = self.s.as_bytes();
        while self.pos < bytes.len()
            && (bytes[self.pos].is_ascii_lowercase()
                || bytes[self.pos].is_ascii_digit()
                || bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let id = &self.s[start..self.pos];
        if !is_identifier(id) {
            return Err(err(self.lineno, start + 1, format!("bad {what} {id:?}")));
        }
        Ok(id.to_string())
    }

    fn literal(&mut self) -> Result<AttrDefault, ParseError> {
        let rest = &self.s[self.pos..];
        if rest.starts_with('"') {
            let mut out = String::new();
            let mut chars = rest[1..].char_indices();
            while let Some((i, c)) = chars.next() {
                match c {
                    '"' => {
                        self.pos += 1 + i + 1;
                        return Ok(AttrDefault::Literal(Value::Str(out)));
                    }
                    '\\' => match chars.next() {
                        Some((_, 'n')) => out.push('\n'),
                        Some((_, 't')) => out.push('\t'),
                        Some((_, '"')) => out.push('"'),
                        Some((_, '\\')) => out.push('\\'),
                        other => {
                            return Err(err(
                                self.lineno,
                                self.pos + 1,
                                format!("bad escape {other:?} in string literal"),
                            ))
                        }
                    },
                    c => out.push(c),
                }
            }
            return Err(err(self.lineno, self.pos + 1, "unterminated string literal"));
        }

        let end = rest
            .find(|c: char| c == ':' || c == '#' || c.is_whitespace())
            .unwrap_or(rest.len());
        let token = &rest[..end];
        self.pos += end;
        match token {
            "null" => Ok(AttrDefault::Null),
            "true" => Ok(AttrDefault::Literal(Value::Bool(true))),
            "false" => Ok(AttrDefault::Literal(Value::Bool(false))),
            "" => Err(err(self.lineno, self.pos + 1, "missing default literal after `=`")),
            t => {
                if let Ok(i) = t.parse::<i64>() {
                    Ok(AttrDefault::Literal(Value::Int(i)))
                } else if let Ok(f) = t.parse::<f64>() {
                    if !f.is_finite() {
                        return Err(err(self.lineno, self.pos + 1, "non-finite float literal"));
                    }
                    Ok(AttrDefault::Literal(Value::Float(f)))
                } else {
                    Err(err(self.lineno, self.pos + 1, format!("bad default literal {t:?}")))
                }
            }
        }
    }

    fn rest_split_comment(&mut self) -> (&'a str, String) {
        let rest = &self.s[self.pos..];
        match rest.find('#') {
            Some(i) => (rest[..i].trim(), rest[i + 1..].trim().to_string()),
            None => (rest.trim(), String::new()),
        }
    }
}

// -- rendering --------------------------------------------------------------------

fn render_literal(v: &Value) -> String {
    match v {
        Value::Str(s) => {
            let escaped = s
                .replace('\\', "\\\\")
                .replace('"', "\\\"")
                .replace('\n', "\\n")
                .replace('\t', "\\t");
            format!("\"{escaped}\"")
        }
        Value::Bool(b) => b.to_string(),
        Value::Int(i) => i.to_string(),
        Value::Float(f) => serde_json::json!(f).to_string(),
        other => crate::value::value_to_json(other).to_string(),
    }
}

fn render_attr(a: &Attribute) -> String {
    let mut line = a.name.clone();
    match &a.default {
        Some(AttrDefault::Null) => line.push_str(" = null"),
        Some(AttrDefault::Literal(v)) => {
            line.push_str(" = ");
            line.push_str(&render_literal(v));
        }
        None => {}
    }
    line.push_str(" : ");
    line.push_str(&a.type_spec.render());
    if !a.comment.is_empty() {
        line.push_str("  # ");
        line.push_str(&a.comment);
    }
    line
}

fn render_fk(fk: &ForeignKey) -> String {
    let mut line = String::from("-> ");
    if let Some(s) = &fk.parent.schema {
        line.push_str(s);
        line.push('.');
    }
    line.push_str(&fk.parent.table);
    if !fk.attribute_map.is_empty() {
        let pairs: Vec<String> =
            fk.attribute_map.iter().map(|(c, p)| format!("{c} = {p}")).collect();
        line.push_str(&format!(" ({})", pairs.join(", ")));
    }
    line
}

/// Renders a definition so that `parse_definition(render_definition(d))`
/// structurally equals `d`.
pub fn render_definition(def: &TableDef) -> String {
    let mut out = String::new();
    if !def.comment.is_empty() {
        out.push_str(&format!("# {}\n", def.comment));
    }
    for in_pk in [true, false] {
        let own = if in_pk { &def.primary_attrs } else { &def.secondary_attrs };
        let mut fks: Vec<&ForeignKey> =
            def.foreign_keys.iter().filter(|fk| fk.into_primary_key == in_pk).collect();
        fks.sort_by_key(|fk| fk.position);
        let mut fk_iter = fks.into_iter().peekable();
        for (i, a) in own.iter().enumerate() {
            while fk_iter.peek().map_or(false, |fk| fk.position <= i) {
                out.push_str(&render_fk(fk_iter.next().unwrap()));
                out.push('\n');
            }
            out.push_str(&render_attr(a));
            out.push('\n');
        }
        for fk in fk_iter {
            out.push_str(&render_fk(fk));
            out.push('\n');
        }
        if in_pk {
            out.push_str("---\n");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn src(text: &str) -> DefinitionSource {
        DefinitionSource {
            text: text.to_string(),
            schema_name: "lab".into(),
            table_name: "subject".into(),
            tier: Tier::Manual,
            master: None,
        }
    }

    #[test]
    fn parses_subject_example() {
        let def = parse_definition(&src(
            "subject_id : varchar(16)  # unique subject\n---\nspecies : varchar(32)\n",
        ))
        .unwrap();
        assert_eq!(def.primary_attrs.len(), 1);
        assert_eq!(def.primary_attrs[0].name, "subject_id");
        assert_eq!(def.primary_attrs[0].comment, "unique subject");
        assert_eq!(def.secondary_attrs.len(), 1);
        assert_eq!(def.secondary_attrs[0].name, "species");
    }

    #[test]
    fn fk_above_separator_lands_in_pk() {
        let def = parse_definition(&src(
            "-> Subject\nsession_id : int64\n---\nsession_date : datetime\n",
        ))
        .unwrap();
        assert_eq!(def.foreign_keys.len(), 1);
        assert!(def.foreign_keys[0].into_primary_key);
        assert_eq!(def.foreign_keys[0].parent.table, "subject");
        assert_eq!(def.foreign_keys[0].position, 0);
    }

    #[test]
    fn fk_below_separator_is_reference() {
        let def = parse_definition(&src("session_id : int64\n---\n-> Subject\n")).unwrap();
        assert!(!def.foreign_keys[0].into_primary_key);
    }

    #[test]
    fn missing_separator_is_an_error() {
        let e = parse_definition(&src("subject_id : varchar(16)\n")).unwrap_err();
        assert!(e.message.contains("---"), "{e}");
        assert!(e.line >= 1);
    }

    #[test]
    fn null_default_marks_nullable_and_round_trips() {
        let text = "subject_id : varchar(16)\n---\nweight = null : float64\n";
        let def = parse_definition(&src(text)).unwrap();
        assert!(def.secondary_attrs[0].nullable());
        let rendered = render_definition(&def);
        let reparsed = parse_definition(&src(&rendered)).unwrap();
        assert_eq!(def, reparsed);
    }

    #[test]
    fn rename_map_and_schema_qualifier() {
        let def = parse_definition(&src(
            "-> other.Subject (donor_id = subject_id)\nsample_id : int64\n---\n",
        ))
        .unwrap();
        let fk = &def.foreign_keys[0];
        assert_eq!(fk.parent.schema.as_deref(), Some("other"));
        assert_eq!(fk.parent.table, "subject");
        assert_eq!(fk.attribute_map, vec![("donor_id".to_string(), "subject_id".to_string())]);
    }

    #[test]
    fn part_target_uses_camel_dot_form() {
        let def =
            parse_definition(&src("-> Acquisition.Scan\npeak_id : int64\n---\n")).unwrap();
        assert_eq!(def.foreign_keys[0].parent.table, "acquisition__scan");
    }

    #[test]
    fn duplicate_attribute_is_parse_error() {
        let e = parse_definition(&src("a : int64\na : int64\n---\n")).unwrap_err();
        assert!(e.message.contains("duplicate"));
        assert_eq!(e.line, 2);
    }

    #[test]
    fn table_comment_is_first_standalone_comment() {
        let def = parse_definition(&src(
            "# subjects under study\n# second comment ignored\nsubject_id : varchar(16)\n---\n",
        ))
        .unwrap();
        assert_eq!(def.comment, "subjects under study");
    }

    #[test]
    fn camel_to_snake_conversion() {
        assert_eq!(camel_to_snake("Subject"), "subject");
        assert_eq!(camel_to_snake("InstrumentSession"), "instrument_session");
        assert_eq!(camel_to_snake("LCMSRun"), "lcms_run");
        assert_eq!(camel_to_snake("already_snake"), "already_snake");
    }

    #[test]
    fn parse_is_pure() {
        let s = src("-> Subject\nsession_id : int64\n---\nnote = \"a#b\" : varchar(64)  # x\n");
        let a = parse_definition(&s).unwrap();
        let b = parse_definition(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.secondary_attrs[0].default, Some(AttrDefault::Literal(Value::str("a#b"))));
        assert_eq!(a.secondary_attrs[0].comment, "x");
    }
}
