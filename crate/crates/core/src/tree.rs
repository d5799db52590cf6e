//! Tree navigation and run-type activation.
//!
//! A tree is whatever is reachable from a root map; its identity is the root
//! map's identity. The highest version of the reserved `@runtypes` series
//! binds run-type names to the active roots.

use std::collections::BTreeMap;
use std::fmt;
use std::num::NonZeroU64;

use crate::model::{Kind, Name, ObjectIdentity, Payload};
use crate::store::{ObjectReader, StoredObject, WriteTransaction, RUNTYPES_CLASS};
use crate::{Error, Result};

/// Maximum map nesting `walk_tree` will follow.
pub const MAX_DEPTH: usize = 64;

/// A sequence of link names from a tree root. Text form `a/b/c`; the empty
/// path (the root) is written `""` or `/`.
#[derive(Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TreePath(Vec<Name>);

impl TreePath {
    pub fn root() -> Self {
        TreePath(Vec::new())
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.is_empty() || text == "/" {
            return Ok(Self::root());
        }
        text.split('/')
            .map(|seg| Name::new(seg).map_err(|_| Error::InvalidName(text.to_string())))
            .collect::<Result<Vec<_>>>()
            .map(TreePath)
    }

    pub fn segments(&self) -> &[Name] {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, name: &Name) -> TreePath {
        let mut v = self.0.clone();
        v.push(name.clone());
        TreePath(v)
    }

    pub fn parent(&self) -> Option<(TreePath, &Name)> {
        let (last, head) = self.0.split_last()?;
        Some((TreePath(head.to_vec()), last))
    }

    /// `/` for the root, otherwise the plain text form.
    pub fn display_root_slash(&self) -> String {
        if self.is_root() {
            "/".to_string()
        } else {
            self.to_string()
        }
    }
}

impl fmt::Display for TreePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, seg) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            f.write_str(seg.as_str())?;
        }
        Ok(())
    }
}

impl fmt::Debug for TreePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.to_string())
    }
}

/// Follows `path` from `root` one link at a time.
pub fn lookup_path(reader: &impl ObjectReader, root: &ObjectIdentity, path: &TreePath) -> Result<StoredObject> {
    let mut current = reader.get_object(root)?;
    if current.kind() != Kind::Map {
        return Err(Error::NotAMap(root.to_string()));
    }
    let mut resolved = TreePath::root();
    for segment in path.segments() {
        let next = match &current.payload {
            Payload::Map(links) => links.get(segment).cloned().ok_or_else(|| Error::NoSuchLink {
                resolved: resolved.display_root_slash(),
                segment: segment.to_string(),
            })?,
            _ => return Err(Error::NotAMap(resolved.display_root_slash())),
        };
        current = reader.get_object(&next)?;
        resolved = resolved.child(segment);
    }
    Ok(current)
}

/// Depth-first listing of a tree, children in name order. A map reachable
/// through several paths is listed (and expanded) once per path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeManifest {
    pub root: ObjectIdentity,
    pub entries: Vec<(TreePath, ObjectIdentity)>,
}

impl TreeManifest {
    /// One `<path>\t<identity>` line per entry, root path as `/`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (path, id) in &self.entries {
            out.push_str(&path.display_root_slash());
            out.push('\t');
            out.push_str(&id.to_string());
            out.push('\n');
        }
        out
    }
}

pub fn walk_tree(reader: &impl ObjectReader, root: &ObjectIdentity) -> Result<TreeManifest> {
    let root_obj = reader.get_object(root)?;
    if root_obj.kind() != Kind::Map {
        return Err(Error::NotAMap(root.to_string()));
    }
    let mut entries = Vec::new();
    walk(reader, TreePath::root(), root_obj, 0, &mut entries)?;
    Ok(TreeManifest {
        root: root.clone(),
        entries,
    })
}

fn walk(
    reader: &impl ObjectReader,
    path: TreePath,
    obj: StoredObject,
    depth: usize,
    out: &mut Vec<(TreePath, ObjectIdentity)>,
) -> Result<()> {
    if depth > MAX_DEPTH {
        return Err(Error::DepthExceeded(MAX_DEPTH));
    }
    out.push((path.clone(), obj.identity));
    if let Payload::Map(links) = obj.payload {
        for (name, target) in links {
            let child = path.child(&name);
            match reader.kind_of(&target) {
                Some(Kind::Map) => walk(reader, child, reader.get_object(&target)?, depth + 1, out)?,
                Some(_) => out.push((child, target)),
                None => return Err(Error::NotFound(target)),
            }
        }
    }
    Ok(())
}

fn runtypes_class() -> Name {
    Name::new(RUNTYPES_CLASS).expect("reserved class name is valid")
}

/// Identity of version `key` of the run-type map.
pub fn runtypes_identity(key: u64) -> Option<ObjectIdentity> {
    NonZeroU64::new(key).map(|k| ObjectIdentity::new(runtypes_class(), None, k))
}

/// Writes a new run-type map version holding exactly `bindings`.
pub fn activate(txn: &mut WriteTransaction, bindings: BTreeMap<Name, ObjectIdentity>) -> Result<ObjectIdentity> {
    for target in bindings.values() {
        match txn.kind_of(target) {
            None => return Err(Error::DanglingLink(target.clone())),
            Some(Kind::Map) => {}
            Some(_) => return Err(Error::NotAMap(target.to_string())),
        }
    }
    txn.create_object(&runtypes_class(), None, Payload::RunTypes(bindings))
}

/// The highest `@runtypes` version, if any.
pub fn active_runtypes_identity(reader: &impl ObjectReader) -> Option<ObjectIdentity> {
    reader.latest_key(&runtypes_class(), None).and_then(runtypes_identity)
}

/// Bindings of a specific run-type map version.
pub fn runtypes_bindings(reader: &impl ObjectReader, id: &ObjectIdentity) -> Result<BTreeMap<Name, ObjectIdentity>> {
    match reader.get_object(id)?.payload {
        Payload::RunTypes(b) => Ok(b),
        _ => Err(Error::InvalidPayload(format!("{id} is not a run-type map"))),
    }
}

/// Full binding set of the active run-type map; empty if there is none.
pub fn active_trees(reader: &impl ObjectReader) -> Result<BTreeMap<Name, ObjectIdentity>> {
    match active_runtypes_identity(reader) {
        Some(id) => runtypes_bindings(reader, &id),
        None => Ok(BTreeMap::new()),
    }
}

pub fn resolve_run_type(reader: &impl ObjectReader, run_type: &str) -> Result<ObjectIdentity> {
    let active = active_runtypes_identity(reader).ok_or(Error::NoActiveMap)?;
    let bindings = runtypes_bindings(reader, &active)?;
    bindings
        .get(run_type)
        .cloned()
        .ok_or_else(|| Error::UnknownRunType(run_type.to_string()))
}
