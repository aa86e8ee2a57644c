//! Object addresses: where an encoded value lives in the object store.

use serde::{Deserialize, Serialize};

/// How an object's path is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AddressScheme {
    /// Path derived solely from the content hash; identical content
    /// deduplicates to one object.
    Hash = 0,
    /// Path derived from schema, table, primary-key values and attribute
    /// name; owned by exactly one row by construction.
    Schema = 1,
}

impl AddressScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            AddressScheme::Hash => "hash",
            AddressScheme::Schema => "schema",
        }
    }
}

/// A reference to a stored object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectAddress {
    pub scheme: AddressScheme,
    /// Path relative to the object store root, `/`-separated.
    pub path: String,
    /// SHA-256 of the payload bytes.
    pub content_hash: [u8; 32],
    /// Payload size in bytes.
    pub size: u64,
}

impl ObjectAddress {
    pub fn hash_hex(&self) -> String {
        hex::encode(self.content_hash)
    }
}

/// Lowercase-hex SHA-256 of `content`.
pub fn sha256(content: &[u8]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(content);
    h.finalize().into()
}

/// Path for a hash-addressed object: `hash/<h[0:2]>/<h>`.
pub fn hash_path(content_hash: &[u8; 32]) -> String {
    let h = hex::encode(content_hash);
    format!("hash/{}/{}", &h[0..2], h)
}

/// Renders a primary-key value for use in a schema-addressed path. Strings
/// keep `[A-Za-z0-9_-]` verbatim and percent-encode everything else.
pub fn render_path_component(s: &str) -> String {
    let mut out = String::new();
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'_' | b'-' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_abc_matches_standard_vector() {
        assert_eq!(
            hex::encode(sha256(b"abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn hash_path_uses_two_char_fanout() {
        let p = hash_path(&sha256(b"abc"));
        assert_eq!(
            p,
            "hash/ba/ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn path_component_percent_encodes() {
        assert_eq!(render_path_component("s1"), "s1");
        assert_eq!(render_path_component("a b/c"), "a%20b%2Fc");
    }
}
