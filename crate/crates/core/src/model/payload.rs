use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest as _, Sha256};

use super::{Name, ObjectIdentity, Value};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Leaf,
    Map,
    RunTypes,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Leaf => "leaf",
            Kind::Map => "map",
            Kind::RunTypes => "runtypes",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        match s {
            "leaf" => Some(Kind::Leaf),
            "map" => Some(Kind::Map),
            "runtypes" => Some(Kind::RunTypes),
            _ => None,
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The content of a configuration object.
///
/// Entries live in `BTreeMap`s keyed by [`Name`], so iteration order is the
/// canonical byte-lexicographic order regardless of insertion order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Leaf(BTreeMap<Name, Value>),
    Map(BTreeMap<Name, ObjectIdentity>),
    RunTypes(BTreeMap<Name, ObjectIdentity>),
}

impl Payload {
    pub fn empty_leaf() -> Self {
        Payload::Leaf(BTreeMap::new())
    }

    pub fn empty_map() -> Self {
        Payload::Map(BTreeMap::new())
    }

    pub fn kind(&self) -> Kind {
        match self {
            Payload::Leaf(_) => Kind::Leaf,
            Payload::Map(_) => Kind::Map,
            Payload::RunTypes(_) => Kind::RunTypes,
        }
    }

    /// Linked identities of a map or run-type payload; `None` for leaves.
    pub fn links(&self) -> Option<&BTreeMap<Name, ObjectIdentity>> {
        match self {
            Payload::Map(l) | Payload::RunTypes(l) => Some(l),
            Payload::Leaf(_) => None,
        }
    }

    pub fn fields(&self) -> Option<&BTreeMap<Name, Value>> {
        match self {
            Payload::Leaf(f) => Some(f),
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        self.encode_string().into_bytes()
    }

    pub fn encode_string(&self) -> String {
        let mut out = format!("kind={}\n", self.kind());
        match self {
            Payload::Leaf(fields) => {
                for (name, value) in fields {
                    out.push_str(name.as_str());
                    out.push('=');
                    value.encode_into(&mut out);
                    out.push('\n');
                }
            }
            Payload::Map(links) | Payload::RunTypes(links) => {
                for (name, id) in links {
                    out.push_str(name.as_str());
                    out.push('=');
                    out.push_str(&id.to_string());
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Payload> {
        let bad = |why: String| Error::MalformedPayload(why);
        let text = std::str::from_utf8(bytes).map_err(|_| bad("not UTF-8".into()))?;
        let body = text
            .strip_suffix('\n')
            .ok_or_else(|| bad("missing final newline".into()))?;
        let mut lines = body.split('\n');
        let head = lines.next().unwrap_or_default();
        let kind = head
            .strip_prefix("kind=")
            .and_then(Kind::parse)
            .ok_or_else(|| bad(format!("bad kind line {head:?}")))?;

        let mut prev: Option<Name> = None;
        let mut leaf = BTreeMap::new();
        let mut links = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let (name, rest) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {lineno}: missing '='")))?;
            let name = Name::new(name).map_err(|_| bad(format!("line {lineno}: invalid name {name:?}")))?;
            if let Some(p) = &prev {
                if *p == name {
                    return Err(bad(format!("line {lineno}: duplicate name {name:?}")));
                }
                if *p > name {
                    return Err(bad(format!("line {lineno}: names not sorted at {name:?}")));
                }
            }
            match kind {
                Kind::Leaf => {
                    let value = Value::decode(rest).map_err(|e| bad(format!("line {lineno}: {e}")))?;
                    leaf.insert(name.clone(), value);
                }
                Kind::Map | Kind::RunTypes => {
                    let id = ObjectIdentity::parse(rest).map_err(|e| bad(format!("line {lineno}: {e}")))?;
                    links.insert(name.clone(), id);
                }
            }
            prev = Some(name);
        }
        Ok(match kind {
            Kind::Leaf => Payload::Leaf(leaf),
            Kind::Map => Payload::Map(links),
            Kind::RunTypes => Payload::RunTypes(links),
        })
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.encode())
    }
}

/// SHA-256 of a payload's canonical encoding.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Digest {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        if s.len() != 64 || !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, o) in out.iter_mut().enumerate() {
            *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
        }
        Some(Digest(out))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

/// Builder for leaf payloads from string names.
#[derive(Default)]
pub struct LeafBuilder(BTreeMap<Name, Value>);

impl LeafBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(mut self, name: &str, value: Value) -> Result<Self> {
        self.0.insert(Name::new(name)?, value);
        Ok(self)
    }

    pub fn build(self) -> Payload {
        Payload::Leaf(self.0)
    }
}

/// Builds a map payload from `(link name, identity)` pairs.
pub fn map_payload<'a>(links: impl IntoIterator<Item = (&'a str, ObjectIdentity)>) -> Result<Payload> {
    let mut out = BTreeMap::new();
    for (name, id) in links {
        let name = Name::new(name)?;
        if out.insert(name.clone(), id).is_some() {
            return Err(Error::InvalidPayload(format!("duplicate link {name:?}")));
        }
    }
    Ok(Payload::Map(out))
}
