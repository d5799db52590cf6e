use std::fmt;
use std::num::NonZeroU64;
use std::str::FromStr;

use crate::{Error, Result};

/// Characters that may never appear in a name-string.
const RESERVED: [char; 5] = [':', '[', ']', '/', '='];

/// A validated name-string: class names, secondary keys, link names, field
/// names, run-type names and alias names all share this grammar.
///
/// Non-empty, printable (no control characters, which covers tab and
/// newline), none of `: [ ] / =`, and no leading or trailing whitespace.
/// Ordering is byte-lexicographic.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Name(String);

impl Name {
    pub fn new(s: impl Into<String>) -> Result<Self> {
        let s = s.into();
        if Self::is_valid(&s) {
            Ok(Name(s))
        } else {
            Err(Error::InvalidName(s))
        }
    }

    pub fn is_valid(s: &str) -> bool {
        !s.is_empty() && s.trim() == s && !s.chars().any(|c| c.is_control() || RESERVED.contains(&c))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&self.0, f)
    }
}

impl FromStr for Name {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Name::new(s)
    }
}

impl TryFrom<&str> for Name {
    type Error = Error;

    fn try_from(s: &str) -> Result<Self> {
        Name::new(s)
    }
}

impl AsRef<str> for Name {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl std::borrow::Borrow<str> for Name {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// `(class, secondary key, config key)`; text form `Class:Secondary[Key]` or
/// `Class[Key]`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectIdentity {
    class: Name,
    secondary: Option<Name>,
    key: NonZeroU64,
}

impl ObjectIdentity {
    pub fn new(class: Name, secondary: Option<Name>, key: NonZeroU64) -> Self {
        ObjectIdentity { class, secondary, key }
    }

    /// Convenience constructor from raw strings; `key` must be at least 1.
    pub fn from_parts(class: &str, secondary: Option<&str>, key: u64) -> Result<Self> {
        let key =
            NonZeroU64::new(key).ok_or_else(|| Error::MalformedIdentity(format!("config key {key} must be >= 1")))?;
        Ok(ObjectIdentity {
            class: Name::new(class)?,
            secondary: secondary.map(Name::new).transpose()?,
            key,
        })
    }

    pub fn class(&self) -> &Name {
        &self.class
    }

    pub fn secondary(&self) -> Option<&Name> {
        self.secondary.as_ref()
    }

    pub fn key(&self) -> u64 {
        self.key.get()
    }

    /// The `(class, secondary)` pair that owns this identity's version
    /// sequence.
    pub fn series(&self) -> (Name, Option<Name>) {
        (self.class.clone(), self.secondary.clone())
    }

    pub fn format(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |why: &str| Error::MalformedIdentity(format!("{text:?}: {why}"));
        let body = text.strip_suffix(']').ok_or_else(|| bad("missing ']'"))?;
        let (head, key) = body.split_once('[').ok_or_else(|| bad("missing '['"))?;
        if key.is_empty() || !key.bytes().all(|b| b.is_ascii_digit()) || key.starts_with('0') {
            return Err(bad("config key must be a positive decimal integer"));
        }
        let key = key
            .parse::<u64>()
            .ok()
            .and_then(NonZeroU64::new)
            .ok_or_else(|| bad("config key out of range"))?;
        let (class, secondary) = match head.split_once(':') {
            Some((c, s)) => (c, Some(s)),
            None => (head, None),
        };
        let class = Name::new(class).map_err(|_| bad("invalid class name"))?;
        let secondary = secondary
            .map(Name::new)
            .transpose()
            .map_err(|_| bad("invalid secondary key"))?;
        Ok(ObjectIdentity { class, secondary, key })
    }
}

impl fmt::Display for ObjectIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.secondary {
            Some(sec) => write!(f, "{}:{}[{}]", self.class, sec, self.key),
            None => write!(f, "{}[{}]", self.class, self.key),
        }
    }
}

impl fmt::Debug for ObjectIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for ObjectIdentity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectIdentity::parse(s)
    }
}

/// Parses `Class` or `Class:Secondary` (no key), as used by `versions` and
/// `new-object`.
pub fn parse_series(text: &str) -> Result<(Name, Option<Name>)> {
    match text.split_once(':') {
        Some((c, s)) => Ok((Name::new(c)?, Some(Name::new(s)?))),
        None => Ok((Name::new(text)?, None)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(c: &str, s: Option<&str>, k: u64) -> ObjectIdentity {
        ObjectIdentity::from_parts(c, s, k).unwrap()
    }

    #[test]
    fn formats_both_forms() {
        assert_eq!(id("TopMap", None, 1).to_string(), "TopMap[1]");
        assert_eq!(id("DchHV", Some("sector3"), 12).to_string(), "DchHV:sector3[12]");
        assert_eq!(id("X", None, 1).to_string(), "X[1]");
        assert_eq!(id("Top Map", None, 3).to_string(), "Top Map[3]");
    }

    #[test]
    fn parses_valid() {
        assert_eq!(
            ObjectIdentity::parse("DchHV:sector3[12]").unwrap(),
            id("DchHV", Some("sector3"), 12)
        );
        assert_eq!(ObjectIdentity::parse("@runtypes[7]").unwrap(), id("@runtypes", None, 7));
    }

    #[test]
    fn rejects_malformed() {
        for text in [
            "TopMap[0]",
            "A:B:C[1]",
            "TopMap",
            "TopMap[1",
            "TopMap1]",
            "[1]",
            "A:[1]",
            "A[]",
            "A[-1]",
            "A[+1]",
            "A[01]",
            "A[1]x",
            "A\t[1]",
            "A[18446744073709551616]",
            " A[1]",
        ] {
            let err = ObjectIdentity::parse(text).unwrap_err();
            assert_eq!(err.code(), "malformed-identity", "{text}");
        }
    }

    #[test]
    fn name_grammar() {
        assert!(Name::is_valid("r12 physics"));
        assert!(Name::is_valid("@runtypes"));
        assert!(Name::is_valid("Größe"));
        for bad in [
            "", " x", "x ", "a:b", "a/b", "a[b", "a]b", "a=b", "a\tb", "a\nb", "a\u{7f}",
        ] {
            assert!(!Name::is_valid(bad), "{bad:?}");
        }
    }

    #[test]
    fn series_parsing() {
        let (c, s) = parse_series("DchHV:sector3").unwrap();
        assert_eq!((c.as_str(), s.unwrap().as_str()), ("DchHV", "sector3"));
        assert!(parse_series("DchHV").unwrap().1.is_none());
        assert!(parse_series("a:b:c").is_err());
    }
}
