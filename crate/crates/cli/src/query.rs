//! The linear pipeline notation:
//!
//! ```text
//! table | restrict k=v,n>3 | join other | proj a,b,new=old,dur=t1-t0
//!       | aggr scans count->n,mean(rate)->avg | semijoin other
//!       | antijoin other | exclude k=v | union other
//! ```
//!
//! Literals are typed by the attribute they are compared against; strings
//! may be double-quoted. `->` and `→` both work in aggregate specs.

use anyhow::{anyhow, bail, Result};
use relatape::storage::Database;
use relatape::value::Value;
use relatape::{AggFunc, AggSpec, BinOp, CmpOp, Heading, Predicate, QueryExpr, ScalarExpr, TypeSpec};

pub fn parse_pipeline(db: &Database, text: &str) -> Result<QueryExpr> {
    let stages = split_stages(text);
    if stages.is_empty() {
        bail!("empty query");
    }
    let mut expr = db.table(stages[0].trim())?;
    for stage in &stages[1..] {
        let stage = stage.trim();
        let (word, rest) = match stage.split_once(char::is_whitespace) {
            Some((w, r)) => (w, r.trim()),
            None => (stage, ""),
        };
        expr = match word {
            "restrict" => expr.restrict(parse_atoms(expr.heading(), rest)?, false)?,
            "exclude" => expr.restrict(parse_atoms(expr.heading(), rest)?, true)?,
            "semijoin" => expr.restrict_rel(&db.table(rest)?, false)?,
            "antijoin" => expr.restrict_rel(&db.table(rest)?, true)?,
            "join" => expr.join(&db.table(rest)?)?,
            "union" => expr.union(&db.table(rest)?)?,
            "proj" => parse_proj(&expr, rest)?,
            "aggr" => parse_aggr(db, &expr, rest)?,
            other => bail!("unknown pipeline stage {other:?}"),
        };
    }
    Ok(expr)
}

/// Splits on `|` outside double quotes.
fn split_stages(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    for c in text.chars() {
        match c {
            '"' => {
                quoted = !quoted;
                cur.push(c);
            }
            '|' if !quoted => {
                out.push(std::mem::take(&mut cur));
            }
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out.into_iter().filter(|s| !s.trim().is_empty()).collect()
}

fn split_commas(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut depth = 0usize;
    for c in text.chars() {
        match c {
            '"' => {
                quoted = !quoted;
                cur.push(c);
            }
            '(' if !quoted => {
                depth += 1;
                cur.push(c);
            }
            ')' if !quoted => {
                depth = depth.saturating_sub(1);
                cur.push(c);
            }
            ',' if !quoted && depth == 0 => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur);
    }
    out
}

pub fn parse_literal(spec: &TypeSpec, token: &str) -> Result<Value> {
    let token = token.trim();
    let unquoted = token
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(token);
    let j: serde_json::Value = match spec {
        TypeSpec::Core(relatape::CoreType::Varchar(_)) => serde_json::Value::String(unquoted.into()),
        TypeSpec::Core(relatape::CoreType::Json) => serde_json::from_str(token)?,
        _ => match serde_json::from_str(token) {
            Ok(v) => v,
            Err(_) => serde_json::Value::String(unquoted.into()),
        },
    };
    relatape::types::json_to_value(spec, &j).map_err(|e| anyhow!("bad literal {token:?}: {e}"))
}

fn parse_atoms(heading: &Heading, text: &str) -> Result<Predicate> {
    let mut pred = Predicate::new();
    for atom in split_commas(text) {
        let atom = atom.trim();
        if atom.is_empty() {
            continue;
        }
        if let Some((attr, list)) = atom.split_once(" in ") {
            let attr = attr.trim();
            let spec = attr_spec(heading, attr)?;
            let list = list.trim().trim_start_matches('(').trim_end_matches(')');
            let values = list
                .split(',')
                .map(|t| parse_literal(&spec, t))
                .collect::<Result<Vec<_>>>()?;
            pred = pred.and_in(attr, values);
            continue;
        }
        let (attr, op, value_text) = split_cmp(atom)?;
        let spec = attr_spec(heading, attr)?;
        pred = pred.and_cmp(attr, op, parse_literal(&spec, value_text)?);
    }
    Ok(pred)
}

fn attr_spec(heading: &Heading, attr: &str) -> Result<TypeSpec> {
    heading
        .attr(attr)
        .map(|a| a.type_spec.clone())
        .ok_or_else(|| anyhow!("unknown attribute {attr}"))
}

fn split_cmp(atom: &str) -> Result<(&str, CmpOp, &str)> {
    for (sym, op) in [
        ("<=", CmpOp::Le),
        (">=", CmpOp::Ge),
        ("!=", CmpOp::Ne),
        ("=", CmpOp::Eq),
        ("<", CmpOp::Lt),
        (">", CmpOp::Gt),
    ] {
        if let Some(i) = find_outside_quotes(atom, sym) {
            let (a, b) = atom.split_at(i);
            return Ok((a.trim(), op, &b[sym.len()..]));
        }
    }
    bail!("cannot parse restriction atom {atom:?}");
}

fn find_outside_quotes(s: &str, needle: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut quoted = false;
    let mut i = 0;
    while i + needle.len() <= bytes.len() {
        if bytes[i] == b'"' {
            quoted = !quoted;
        } else if !quoted && s[i..].starts_with(needle) {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn parse_proj(expr: &QueryExpr, text: &str) -> Result<QueryExpr> {
    let mut keep: Vec<String> = Vec::new();
    let mut renames: Vec<(String, String)> = Vec::new();
    let mut computed: Vec<(String, ScalarExpr)> = Vec::new();
    for item in split_commas(text) {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        match find_outside_quotes(item, "=") {
            None => keep.push(item.to_string()),
            Some(i) => {
                let name = item[..i].trim().to_string();
                let rhs = item[i + 1..].trim();
                // a bare existing attribute is a rename; otherwise a
                // computed scalar expression
                if expr.heading().index_of(rhs).is_some() {
                    renames.push((name, rhs.to_string()));
                } else {
                    computed.push((name, parse_scalar(expr.heading(), rhs)?));
                }
            }
        }
    }
    let keep: Vec<&str> = keep.iter().map(|s| s.as_str()).collect();
    let renames: Vec<(&str, &str)> =
        renames.iter().map(|(n, o)| (n.as_str(), o.as_str())).collect();
    let computed: Vec<(&str, ScalarExpr)> =
        computed.iter().map(|(n, e)| (n.as_str(), e.clone())).collect();
    Ok(expr.project(&keep, &renames, &computed)?)
}

fn parse_aggr(db: &Database, expr: &QueryExpr, text: &str) -> Result<QueryExpr> {
    let (table, rest) = text
        .split_once(char::is_whitespace)
        .ok_or_else(|| anyhow!("aggr needs a table and at least one spec"))?;
    let other = db.table(table.trim())?;
    let mut specs = Vec::new();
    for item in split_commas(rest) {
        let item = item.trim().replace("->", "→");
        let (call, name) = item
            .split_once('→')
            .ok_or_else(|| anyhow!("aggregate spec {item:?} needs →name or ->name"))?;
        let call = call.trim();
        let name = name.trim().to_string();
        let (func, attr) = match call.split_once('(') {
            None => (AggFunc::parse(call)?, None),
            Some((f, rest)) => {
                let attr = rest.trim_end_matches(')').trim().to_string();
                (AggFunc::parse(f.trim())?, if attr.is_empty() { None } else { Some(attr) })
            }
        };
        specs.push(AggSpec { name, func, attr });
    }
    Ok(expr.aggregate(&other, &specs)?)
}

// -- scalar expressions: +,-,*,/ with parentheses ---------------------------------

fn parse_scalar(heading: &Heading, text: &str) -> Result<ScalarExpr> {
    let tokens = tokenize(text)?;
    let mut pos = 0;
    let expr = parse_sum(heading, &tokens, &mut pos)?;
    if pos != tokens.len() {
        bail!("trailing tokens in expression {text:?}");
    }
    Ok(expr)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Op(char),
    Open,
    Close,
}

fn tokenize(text: &str) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '(' => {
                out.push(Tok::Open);
                i += 1;
            }
            ')' => {
                out.push(Tok::Close);
                i += 1;
            }
            '+' | '*' | '/' => {
                out.push(Tok::Op(c));
                i += 1;
            }
            '-' => {
                // negative literal only at the start of a term
                let starts_term = matches!(out.last(), None | Some(Tok::Op(_)) | Some(Tok::Open));
                if starts_term && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                    let start = i;
                    i += 1;
                    while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                        i += 1;
                    }
                    out.push(number(&chars[start..i])?);
                } else {
                    out.push(Tok::Op('-'));
                    i += 1;
                }
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                while i < chars.len() && chars[i] != '"' {
                    s.push(chars[i]);
                    i += 1;
                }
                if i == chars.len() {
                    bail!("unterminated string in expression");
                }
                i += 1;
                out.push(Tok::Str(s));
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                out.push(number(&chars[start..i])?);
            }
            c if c.is_ascii_lowercase() => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_lowercase()
                        || chars[i].is_ascii_digit()
                        || chars[i] == '_')
                {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            other => bail!("unexpected character {other:?} in expression"),
        }
    }
    Ok(out)
}

fn number(chars: &[char]) -> Result<Tok> {
    let s: String = chars.iter().collect();
    if s.contains('.') {
        Ok(Tok::Float(s.parse()?))
    } else {
        Ok(Tok::Int(s.parse()?))
    }
}

fn parse_sum(heading: &Heading, toks: &[Tok], pos: &mut usize) -> Result<ScalarExpr> {
    let mut left = parse_product(heading, toks, pos)?;
    while let Some(Tok::Op(op @ ('+' | '-'))) = toks.get(*pos) {
        let op = if *op == '+' { BinOp::Add } else { BinOp::Sub };
        *pos += 1;
        let right = parse_product(heading, toks, pos)?;
        left = ScalarExpr::bin(op, left, right);
    }
    Ok(left)
}

fn parse_product(heading: &Heading, toks: &[Tok], pos: &mut usize) -> Result<ScalarExpr> {
    let mut left = parse_atom_expr(heading, toks, pos)?;
    while let Some(Tok::Op(op @ ('*' | '/'))) = toks.get(*pos) {
        let op = if *op == '*' { BinOp::Mul } else { BinOp::Div };
        *pos += 1;
        let right = parse_atom_expr(heading, toks, pos)?;
        left = ScalarExpr::bin(op, left, right);
    }
    Ok(left)
}

fn parse_atom_expr(heading: &Heading, toks: &[Tok], pos: &mut usize) -> Result<ScalarExpr> {
    match toks.get(*pos) {
        Some(Tok::Open) => {
            *pos += 1;
            let inner = parse_sum(heading, toks, pos)?;
            match toks.get(*pos) {
                Some(Tok::Close) => {
                    *pos += 1;
                    Ok(inner)
                }
                _ => bail!("missing closing parenthesis"),
            }
        }
        Some(Tok::Ident(name)) => {
            *pos += 1;
            if heading.index_of(name).is_none() {
                bail!("unknown attribute {name} in expression");
            }
            Ok(ScalarExpr::attr(name))
        }
        Some(Tok::Int(i)) => {
            *pos += 1;
            Ok(ScalarExpr::Lit(Value::Int(*i)))
        }
        Some(Tok::Float(f)) => {
            *pos += 1;
            Ok(ScalarExpr::Lit(Value::Float(*f)))
        }
        Some(Tok::Str(s)) => {
            *pos += 1;
            Ok(ScalarExpr::Lit(Value::Str(s.clone())))
        }
        other => bail!("unexpected token {other:?} in expression"),
    }
}
