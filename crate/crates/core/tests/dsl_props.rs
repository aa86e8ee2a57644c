//! Round-trip property for the definition language: parse ∘ render is the
//! identity on valid definitions.

use proptest::prelude::*;
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

use relatape::dsl::{parse_definition, render_definition, DefinitionSource};
use relatape::model::{Attribute, AttrDefault, ForeignKey, ParentRef, TableDef, Tier};
use relatape::types::TypeSpec;
use relatape::value::Value;

fn ident(rng: &mut ChaCha8Rng) -> String {
    let first = (b'a' + rng.gen_range(0..26)) as char;
    let len = rng.gen_range(0..6);
    let mut s = String::new();
    s.push(first);
    for _ in 0..len {
        let c = match rng.gen_range(0..3) {
            0 => (b'a' + rng.gen_range(0..26)) as char,
            1 => (b'0' + rng.gen_range(0..10)) as char,
            _ => '_',
        };
        s.push(c);
    }
    s
}

fn type_spec(rng: &mut ChaCha8Rng) -> TypeSpec {
    let tokens = [
        "int64",
        "float64",
        "varchar(12)",
        "datetime",
        "uuid",
        "json",
        "bool",
        "bytes",
        "<f64_array>",
        "<blob@schema>",
        "TEXT",
    ];
    TypeSpec::parse(tokens[rng.gen_range(0..tokens.len())]).unwrap()
}

fn literal(rng: &mut ChaCha8Rng) -> Value {
    match rng.gen_range(0..4) {
        0 => Value::Int(rng.gen_range(-1000..1000)),
        1 => Value::Float(rng.gen_range(-64..64) as f64 * 0.125),
        2 => Value::Bool(rng.gen()),
        _ => {
            let pool = ["", "plain", "with space", "quo\"te", "back\\slash", "tab\there", "line\nbreak", "ha#sh"];
            Value::Str(pool[rng.gen_range(0..pool.len())].to_string())
        }
    }
}

fn comment(rng: &mut ChaCha8Rng) -> String {
    if rng.gen_bool(0.6) {
        String::new()
    } else {
        let words = ["notes", "on", "this attribute", "x 123"];
        words[rng.gen_range(0..words.len())].to_string()
    }
}

fn random_def(seed: u64) -> TableDef {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = std::collections::BTreeSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let name = ident(rng);
        if used.insert(name.clone()) {
            return name;
        }
    };

    let n_pk = rng.gen_range(0..=2);
    let n_sec = rng.gen_range(0..=4);
    let mut primary_attrs = Vec::new();
    for _ in 0..n_pk {
        let mut a = Attribute::new(&fresh(&mut rng), type_spec(&mut rng));
        if rng.gen_bool(0.3) {
            a.default = Some(AttrDefault::Literal(literal(&mut rng)));
        }
        a.comment = comment(&mut rng);
        primary_attrs.push(a);
    }
    let mut secondary_attrs = Vec::new();
    for _ in 0..n_sec {
        let mut a = Attribute::new(&fresh(&mut rng), type_spec(&mut rng));
        match rng.gen_range(0..3) {
            0 => a.default = Some(AttrDefault::Null),
            1 => a.default = Some(AttrDefault::Literal(literal(&mut rng))),
            _ => {}
        }
        a.comment = comment(&mut rng);
        secondary_attrs.push(a);
    }

    let mut foreign_keys = Vec::new();
    for _ in 0..rng.gen_range(0..=3) {
        let into_pk = rng.gen_bool(0.5);
        let section_len = if into_pk { primary_attrs.len() } else { secondary_attrs.len() };
        let mut map = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..rng.gen_range(0..=2) {
            let parent_attr = ident(&mut rng);
            if seen.insert(parent_attr.clone()) {
                map.push((ident(&mut rng), parent_attr));
            }
        }
        foreign_keys.push(ForeignKey {
            parent: ParentRef {
                schema: if rng.gen_bool(0.25) { Some(ident(&mut rng)) } else { None },
                table: ident(&mut rng),
            },
            attribute_map: map,
            into_primary_key: into_pk,
            position: rng.gen_range(0..=section_len),
        });
    }

    TableDef {
        schema_name: "lab".into(),
        table_name: "subject".into(),
        tier: Tier::Manual,
        comment: comment(&mut rng),
        primary_attrs,
        secondary_attrs,
        foreign_keys,
        master: None,
    }
}

proptest! {
    #[test]
    fn parse_render_round_trip(seed in any::<u64>()) {
        let def = random_def(seed);
        let text = render_definition(&def);
        let reparsed = parse_definition(&DefinitionSource {
            text: text.clone(),
            schema_name: def.schema_name.clone(),
            table_name: def.table_name.clone(),
            tier: def.tier,
            master: def.master.clone(),
        })
        .unwrap_or_else(|e| panic!("rendered text failed to parse: {e}\n---\n{text}"));
        // foreign keys compare order-insensitively within a section, since
        // rendering groups them by position
        let canon = |d: &TableDef| {
            let mut d = d.clone();
            d.foreign_keys.sort_by_key(|fk| (!fk.into_primary_key, fk.position, fk.parent.table.clone()));
            d
        };
        prop_assert_eq!(canon(&def), canon(&reparsed), "text:\n{}", text);
    }
}

#[test]
fn every_parse_error_carries_a_line() {
    let bad = [
        "no separator at all\n",
        "a : int64\n---\na : int64\n",
        "x : nosuch type\n---\n",
        "-> \n---\n",
        "1bad : int64\n---\n",
        "x = : int64\n---\n",
    ];
    for text in bad {
        let err = parse_definition(&DefinitionSource {
            text: text.to_string(),
            schema_name: "lab".into(),
            table_name: "subject".into(),
            tier: Tier::Manual,
            master: None,
        })
        .unwrap_err();
        assert!(err.line >= 1, "{err}");
    }
}
