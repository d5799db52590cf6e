//! Alias trees: the mutable editing layer over immutable numeric trees.
//!
//! Map aliases are placeholders; object aliases pin a full identity. Alias
//! trees are stored in `aliases.dat`, rewritten whole on every save, apart
//! from the append-only object log. Only the latest state is kept.
//!
//! Text form (also the on-disk section format):
//!
//! ```text
//! alias golden root_class TopMap
//! map dch
//!   obj hv = DchHV:sector3[4]
//! map emc
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::model::{Name, ObjectIdentity};
use crate::store::{Store, WriteTransaction};
use crate::tree::TreePath;
use crate::{Error, Result};

pub const ALIAS_FILE: &str = "aliases.dat";
const HEADER_SEP: &str = " root_class ";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AliasNode {
    Map(BTreeMap<Name, AliasNode>),
    Object(ObjectIdentity),
}

impl AliasNode {
    pub fn is_map(&self) -> bool {
        matches!(self, AliasNode::Map(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AliasTree {
    name: Name,
    root_class: Name,
    root: BTreeMap<Name, AliasNode>,
}

impl AliasTree {
    pub fn new(alias_name: &str, root_class: &str) -> Result<AliasTree> {
        let name = Name::new(alias_name)?;
        let root_class = Name::new(root_class)?;
        // Keeps the header line unambiguous.
        if name.as_str().contains(HEADER_SEP.trim_end()) {
            return Err(Error::InvalidName(name.to_string()));
        }
        if root_class.as_str().starts_with('@') {
            return Err(Error::InvalidName(root_class.to_string()));
        }
        Ok(AliasTree {
            name,
            root_class,
            root: BTreeMap::new(),
        })
    }

    pub fn name(&self) -> &Name {
        &self.name
    }

    pub fn root_class(&self) -> &Name {
        &self.root_class
    }

    /// Children of the root map alias.
    pub fn root(&self) -> &BTreeMap<Name, AliasNode> {
        &self.root
    }

    /// `None` for a missing path; the root is reported as a map alias.
    pub fn node(&self, path: &TreePath) -> Option<AliasNodeRef<'_>> {
        let mut children = &self.root;
        let mut node = AliasNodeRef::Map(children);
        for seg in path.segments() {
            let AliasNodeRef::Map(_) = node else { return None };
            let next = children.get(seg)?;
            node = match next {
                AliasNode::Map(c) => {
                    children = c;
                    AliasNodeRef::Map(c)
                }
                AliasNode::Object(id) => AliasNodeRef::Object(id),
            };
        }
        Some(node)
    }

    fn children_mut(&mut self, parent: &TreePath) -> Result<&mut BTreeMap<Name, AliasNode>> {
        let mut children = &mut self.root;
        let mut walked = TreePath::root();
        for seg in parent.segments() {
            walked = walked.child(seg);
            match children.get_mut(seg) {
                None => return Err(Error::NoSuchNode(walked.to_string())),
                Some(AliasNode::Object(_)) => return Err(Error::NotAMapAlias(walked.to_string())),
                Some(AliasNode::Map(c)) => children = c,
            }
        }
        Ok(children)
    }

    pub fn add_map_alias(&mut self, parent: &TreePath, name: &str) -> Result<()> {
        let name = Name::new(name)?;
        let children = self.children_mut(parent)?;
        if children.contains_key(&name) {
            return Err(Error::DuplicateName(parent.child(&name).to_string()));
        }
        children.insert(name, AliasNode::Map(BTreeMap::new()));
        Ok(())
    }

    /// Creates or retargets an object alias. The target is not checked
    /// against any store here.
    pub fn set_object_alias(&mut self, parent: &TreePath, name: &str, target: ObjectIdentity) -> Result<()> {
        let name = Name::new(name)?;
        let children = self.children_mut(parent)?;
        if let Some(AliasNode::Map(_)) = children.get(&name) {
            return Err(Error::NameIsMapAlias(parent.child(&name).to_string()));
        }
        children.insert(name, AliasNode::Object(target));
        Ok(())
    }

    pub fn remove_node(&mut self, path: &TreePath) -> Result<()> {
        let (parent, name) = path.parent().ok_or(Error::CannotRemoveRoot)?;
        let children = self
            .children_mut(&parent)
            .map_err(|_| Error::NoSuchNode(path.to_string()))?;
        children
            .remove(name)
            .map(|_| ())
            .ok_or_else(|| Error::NoSuchNode(path.to_string()))
    }

    /// Checks name validity at every node. Uniqueness and strict-tree shape
    /// are guaranteed by the representation.
    pub fn audit(&self) -> Result<()> {
        fn check(children: &BTreeMap<Name, AliasNode>) -> Result<()> {
            for (name, node) in children {
                if !Name::is_valid(name.as_str()) {
                    return Err(Error::InvalidName(name.to_string()));
                }
                if let AliasNode::Map(c) = node {
                    check(c)?;
                }
            }
            Ok(())
        }
        check(&self.root)
    }

    /// Every node in depth-first name order, with its path.
    pub fn nodes(&self) -> Vec<(TreePath, &AliasNode)> {
        fn go<'a>(path: &TreePath, children: &'a BTreeMap<Name, AliasNode>, out: &mut Vec<(TreePath, &'a AliasNode)>) {
            for (name, node) in children {
                let p = path.child(name);
                out.push((p.clone(), node));
                if let AliasNode::Map(c) = node {
                    go(&p, c, out);
                }
            }
        }
        let mut out = Vec::new();
        go(&TreePath::root(), &self.root, &mut out);
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("alias {}{HEADER_SEP}{}\n", self.name, self.root_class);
        for (path, node) in self.nodes() {
            let depth = path.segments().len() - 1;
            let name = path.segments().last().unwrap();
            out.push_str(&"  ".repeat(depth));
            match node {
                AliasNode::Map(_) => {
                    out.push_str("map ");
                    out.push_str(name.as_str());
                }
                AliasNode::Object(id) => {
                    out.push_str("obj ");
                    out.push_str(name.as_str());
                    out.push_str(" = ");
                    out.push_str(&id.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<AliasTree> {
        let bad = |line: usize, why: &str| Error::MalformedAlias(format!("line {line}: {why}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty"))?;
        let (name, class) = header
            .strip_prefix("alias ")
            .and_then(|h| h.split_once(HEADER_SEP))
            .ok_or_else(|| bad(1, "bad header"))?;
        let mut tree = AliasTree::new(name, class).map_err(|_| bad(1, "bad header names"))?;

        // Path of the most recent map alias at each depth.
        let mut stack: Vec<Name> = Vec::new();
        for (no, line) in lines {
            let body = line.trim_start_matches(' ');
            let indent = line.len() - body.len();
            if indent % 2 != 0 || indent / 2 > stack.len() {
                return Err(bad(no, "bad indentation"));
            }
            stack.truncate(indent / 2);
            let parent = TreePath::parse(&stack.iter().map(Name::as_str).collect::<Vec<_>>().join("/"))
                .map_err(|_| bad(no, "bad parent path"))?;
            if let Some(name) = body.strip_prefix("map ") {
                tree.add_map_alias(&parent, name).map_err(|e| bad(no, &e.to_string()))?;
                stack.push(Name::new(name)?);
            } else if let Some(rest) = body.strip_prefix("obj ") {
                let (name, id) = rest.split_once(" = ").ok_or_else(|| bad(no, "missing ' = '"))?;
                let id = ObjectIdentity::parse(id).map_err(|e| bad(no, &e.to_string()))?;
                let children = tree.children_mut(&parent).map_err(|e| bad(no, &e.to_string()))?;
                let name = Name::new(name).map_err(|e| bad(no, &e.to_string()))?;
                if children.contains_key(&name) {
                    return Err(bad(no, "duplicate name"));
                }
                children.insert(name, AliasNode::Object(id));
            } else {
                return Err(bad(no, "expected 'map' or 'obj'"));
            }
        }
        Ok(tree)
    }
}

/// Borrowed view of a node; the root has no `AliasNode` of its own.
#[derive(Clone, Copy, Debug)]
pub enum AliasNodeRef<'a> {
    Map(&'a BTreeMap<Name, AliasNode>),
    Object(&'a ObjectIdentity),
}

/// Splits `aliases.dat` into `name -> section text`.
fn read_sections(dir: &Path) -> Result<BTreeMap<String, String>> {
    let text = match fs::read_to_string(dir.join(ALIAS_FILE)) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(e.into()),
    };
    let mut sections = BTreeMap::new();
    let mut current: Option<(String, String)> = None;
    for line in text.lines() {
        if let Some(h) = line.strip_prefix("alias ") {
            if let Some((name, text)) = current.take() {
                sections.insert(name, text);
            }
            let name = h
                .split_once(HEADER_SEP)
                .map(|(n, _)| n.to_string())
                .ok_or_else(|| Error::MalformedAlias(format!("bad header {line:?}")))?;
            current = Some((name, String::new()));
        }
        match &mut current {
            Some((_, text)) => {
                text.push_str(line);
                text.push('\n');
            }
            None => return Err(Error::MalformedAlias("content before first header".into())),
        }
    }
    if let Some((name, text)) = current {
        sections.insert(name, text);
    }
    Ok(sections)
}

/// Rewrites `aliases.dat` with `saves` applied, via temp file and rename.
pub(crate) fn apply_saves(dir: &Path, saves: &BTreeMap<String, String>) -> Result<()> {
    let mut sections = read_sections(dir)?;
    for (name, text) in saves {
        sections.insert(name.clone(), text.clone());
    }
    let tmp = dir.join(format!("{ALIAS_FILE}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        for text in sections.values() {
            f.write_all(text.as_bytes())?;
        }
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(ALIAS_FILE))?;
    fs::File::open(dir)?.sync_all()?;
    Ok(())
}

/// Saves under the store's writer lock.
pub fn save_alias_tree(store: &Store, tree: &AliasTree) -> Result<()> {
    let mut txn = store.begin()?;
    save_alias_tree_in(&mut txn, tree);
    txn.commit().map(|_| ())
}

/// Stages a save that is written when `txn` commits.
pub fn save_alias_tree_in(txn: &mut WriteTransaction, tree: &AliasTree) {
    txn.stage_alias_save(tree.name.as_str(), tree.to_text());
}

pub fn load_alias_tree(store: &Store, alias_name: &str) -> Result<AliasTree> {
    let sections = read_sections(store.dir())?;
    let text = sections
        .get(alias_name)
        .ok_or_else(|| Error::NoSuchAlias(alias_name.to_string()))?;
    AliasTree::parse(text)
}

/// Like [`load_alias_tree`], but sees saves staged in `txn`.
pub fn load_alias_tree_in(txn: &WriteTransaction, alias_name: &str) -> Result<AliasTree> {
    match txn.staged_alias(alias_name) {
        Some(text) => AliasTree::parse(text),
        None => load_alias_tree(txn.store(), alias_name),
    }
}

pub fn list_alias_trees(store: &Store) -> Result<Vec<String>> {
    Ok(read_sections(store.dir())?.into_keys().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> TreePath {
        TreePath::parse(s).unwrap()
    }

    fn id(s: &str) -> ObjectIdentity {
        ObjectIdentity::parse(s).unwrap()
    }

    #[test]
    fn new_tree_names() {
        assert!(AliasTree::new("golden", "TopMap").unwrap().root().is_empty());
        assert_eq!(AliasTree::new("", "TopMap").unwrap_err().code(), "invalid-name");
        assert!(AliasTree::new("r12 physics", "TopMap").is_ok());
        assert!(AliasTree::new("a root_class b", "TopMap").is_err());
    }

    #[test]
    fn add_map_alias_cases() {
        let mut t = AliasTree::new("g", "TopMap").unwrap();
        t.add_map_alias(&p("/"), "dch").unwrap();
        t.add_map_alias(&p("dch"), "fee").unwrap();
        assert!(matches!(t.node(&p("dch/fee")), Some(AliasNodeRef::Map(_))));
        assert_eq!(t.add_map_alias(&p("/"), "dch").unwrap_err().code(), "duplicate-name");
        t.set_object_alias(&p("dch"), "hv", id("DchHV:sector3[3]")).unwrap();
        assert_eq!(
            t.add_map_alias(&p("dch/hv"), "x").unwrap_err().code(),
            "not-a-map-alias"
        );
        assert_eq!(t.add_map_alias(&p("nope"), "x").unwrap_err().code(), "no-such-node");
    }

    #[test]
    fn set_object_alias_cases() {
        let mut t = AliasTree::new("g", "TopMap").unwrap();
        t.add_map_alias(&p("/"), "dch").unwrap();
        t.set_object_alias(&p("dch"), "hv", id("DchHV:sector3[3]")).unwrap();
        t.set_object_alias(&p("dch"), "hv", id("DchHV:sector3[4]")).unwrap();
        assert!(matches!(t.node(&p("dch/hv")), Some(AliasNodeRef::Object(i)) if *i == id("DchHV:sector3[4]")));
        t.set_object_alias(&p("/"), "graft", id("EmcMap[2]")).unwrap();
        assert_eq!(
            t.set_object_alias(&p("missing"), "x", id("A[1]")).unwrap_err().code(),
            "no-such-node"
        );
        assert_eq!(
            t.set_object_alias(&p("/"), "dch", id("A[1]")).unwrap_err().code(),
            "name-is-map-alias"
        );
    }

    #[test]
    fn remove_cases() {
        let mut t = AliasTree::new("g", "TopMap").unwrap();
        t.add_map_alias(&p("/"), "dch").unwrap();
        t.add_map_alias(&p("dch"), "fee").unwrap();
        t.set_object_alias(&p("dch"), "hv", id("A[1]")).unwrap();
        t.remove_node(&p("dch/hv")).unwrap();
        assert!(t.node(&p("dch/hv")).is_none());
        assert!(t.node(&p("dch")).is_some());
        assert_eq!(t.remove_node(&p("")).unwrap_err().code(), "cannot-remove-root");
        assert_eq!(t.remove_node(&p("dch/hv")).unwrap_err().code(), "no-such-node");
        t.remove_node(&p("dch")).unwrap();
        assert!(t.root().is_empty());
        t.audit().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut t = AliasTree::new("r12 physics", "Top Map").unwrap();
        t.add_map_alias(&p("/"), "dch").unwrap();
        t.add_map_alias(&p("dch"), "fee").unwrap();
        t.set_object_alias(&p("dch/fee"), "thr", id("Thr:a b[2]")).unwrap();
        t.set_object_alias(&p("dch"), "hv", id("DchHV:sector3[3]")).unwrap();
        t.add_map_alias(&p("/"), "emc").unwrap();
        let text = t.to_text();
        assert_eq!(
            text,
            "alias r12 physics root_class Top Map\nmap dch\n  map fee\n    obj thr = Thr:a b[2]\n  obj hv = DchHV:sector3[3]\nmap emc\n"
        );
        let back = AliasTree::parse(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn parse_rejects_bad_text() {
        for bad in [
            "",
            "alias x\n",
            "alias x root_class T\n   map a\n",
            "alias x root_class T\n  map a\n",
            "alias x root_class T\nobj a A[1]\n",
            "alias x root_class T\nthing a\n",
            "alias x root_class T\nmap a\nmap a\n",
        ] {
            assert!(AliasTree::parse(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let mut t = AliasTree::new("golden", "TopMap").unwrap();
        t.add_map_alias(&p("/"), "dch").unwrap();
        save_alias_tree(&store, &t).unwrap();
        let other = AliasTree::new("other", "TopMap").unwrap();
        save_alias_tree(&store, &other).unwrap();
        assert_eq!(load_alias_tree(&store, "golden").unwrap(), t);

        t.set_object_alias(&p("dch"), "hv", id("A[1]")).unwrap();
        save_alias_tree(&store, &t).unwrap();
        assert_eq!(load_alias_tree(&store, "golden").unwrap(), t);
        assert_eq!(load_alias_tree(&store, "other").unwrap(), other);
        assert_eq!(
            load_alias_tree(&store, "nonexistent").unwrap_err().code(),
            "no-such-alias"
        );
        assert_eq!(list_alias_trees(&store).unwrap(), vec!["golden", "other"]);
        assert_eq!(store.log_len().unwrap(), 0);
    }

    #[test]
    fn staged_saves_apply_on_commit_only() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let t = AliasTree::new("golden", "TopMap").unwrap();
        let mut txn = store.begin().unwrap();
        save_alias_tree_in(&mut txn, &t);
        assert_eq!(load_alias_tree_in(&txn, "golden").unwrap(), t);
        txn.abort();
        assert!(load_alias_tree(&store, "golden").is_err());
        let mut txn = store.begin().unwrap();
        save_alias_tree_in(&mut txn, &t);
        txn.commit().unwrap();
        assert_eq!(load_alias_tree(&store, "golden").unwrap(), t);
    }
}
