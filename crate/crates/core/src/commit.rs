//! Turning an edited alias tree into a new numeric tree.
//!
//! The alias tree is compared node by node, keyed by link name, with the
//! numeric tree currently bound to the first requested run type. Maps are
//! then rebuilt bottom-up: a map whose rebuilt content equals its numeric
//! counterpart (the map the committed parent links under the same name) is
//! reused by identity, so only maps on a root-to-change path get new
//! versions. Unedited trees commit to nothing at all.

use std::collections::BTreeMap;
use std::fmt;

use crate::alias::{AliasNode, AliasTree};
use crate::model::{Kind, Name, ObjectIdentity, Payload};
use crate::store::{ObjectReader, Store, StoredObject, WriteTransaction};
use crate::tree::{self, TreePath};
use crate::{Error, Result};

/// Class of interior maps built from map aliases.
pub const INTERIOR_MAP_CLASS: &str = "Map";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Unchanged,
    Changed,
    Added,
    Removed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Unchanged => "unchanged",
            Status::Changed => "changed",
            Status::Added => "added",
            Status::Removed => "removed",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Change {
    pub path: TreePath,
    pub status: Status,
    /// Whether the alias side of this entry is a map alias. `false` for
    /// `Removed` entries.
    pub is_map: bool,
    /// Identity the numeric tree holds at this path.
    pub old: Option<ObjectIdentity>,
    /// Target of an object alias; `None` for map aliases, whose identity is
    /// only known after the rebuild.
    pub new: Option<ObjectIdentity>,
}

/// Per-path comparison result, root first, depth-first in name order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChangeSet {
    pub entries: Vec<Change>,
}

impl ChangeSet {
    /// True when nothing differs from the numeric tree.
    pub fn is_fixed_point(&self) -> bool {
        self.entries.iter().all(|c| c.status == Status::Unchanged)
    }

    pub fn get(&self, path: &TreePath) -> Option<&Change> {
        self.entries
            .iter()
            .find(|c| &c.path == path && c.status != Status::Removed)
    }

    /// `<status>\t<path>\t<old|->\t<new|->` per entry.
    pub fn report(&self) -> String {
        let opt = |id: &Option<ObjectIdentity>| id.as_ref().map_or("-".to_string(), |i| i.to_string());
        let mut out = String::new();
        for c in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                c.status,
                c.path.display_root_slash(),
                opt(&c.old),
                opt(&c.new)
            ));
        }
        out
    }
}

/// Compares `tree` against the numeric tree rooted at `numeric_root`
/// (`None` means bootstrap: everything is added).
pub fn diff_alias_vs_numeric(
    reader: &impl ObjectReader,
    tree: &AliasTree,
    numeric_root: Option<&ObjectIdentity>,
) -> Result<ChangeSet> {
    let numeric = match numeric_root {
        Some(id) => {
            let obj = reader.get_object(id)?;
            if obj.kind() != Kind::Map {
                return Err(Error::NotAMap(id.to_string()));
            }
            Some(obj)
        }
        None => None,
    };
    let mut out = ChangeSet::default();
    diff_map(reader, &TreePath::root(), tree.root(), numeric.as_ref(), &mut out)?;
    Ok(out)
}

fn diff_map(
    reader: &impl ObjectReader,
    path: &TreePath,
    children: &BTreeMap<Name, AliasNode>,
    numeric: Option<&StoredObject>,
    out: &mut ChangeSet,
) -> Result<Status> {
    let slot = out.entries.len();
    out.entries.push(Change {
        path: path.clone(),
        status: Status::Unchanged,
        is_map: true,
        old: numeric.map(|o| o.identity.clone()),
        new: None,
    });
    let empty = BTreeMap::new();
    let links = numeric.and_then(|o| o.payload.links()).unwrap_or(&empty);

    let mut all_unchanged = true;
    for (name, node) in children {
        let child_path = path.child(name);
        let old = links.get(name);
        let status = match node {
            AliasNode::Object(target) => {
                if reader.kind_of(target).is_none() {
                    return Err(Error::DanglingAliasTarget(target.clone()));
                }
                let status = match old {
                    None => Status::Added,
                    Some(o) if o == target => Status::Unchanged,
                    Some(_) => Status::Changed,
                };
                out.entries.push(Change {
                    path: child_path,
                    status,
                    is_map: false,
                    old: old.cloned(),
                    new: Some(target.clone()),
                });
                status
            }
            AliasNode::Map(grandchildren) => {
                let counterpart = match old {
                    Some(o) if reader.kind_of(o) == Some(Kind::Map) => Some(reader.get_object(o)?),
                    Some(o) => {
                        // Kind flip: the leaf goes away, a new map arrives.
                        out.entries.push(Change {
                            path: child_path.clone(),
                            status: Status::Removed,
                            is_map: false,
                            old: Some(o.clone()),
                            new: None,
                        });
                        None
                    }
                    None => None,
                };
                diff_map(reader, &child_path, grandchildren, counterpart.as_ref(), out)?
            }
        };
        all_unchanged &= status == Status::Unchanged;
    }
    for (name, old) in links {
        if !children.contains_key(name) {
            all_unchanged = false;
            out.entries.push(Change {
                path: path.child(name),
                status: Status::Removed,
                is_map: false,
                old: Some(old.clone()),
                new: None,
            });
        }
    }

    let status = match numeric {
        None => Status::Added,
        Some(_) if all_unchanged => Status::Unchanged,
        Some(_) => Status::Changed,
    };
    out.entries[slot].status = status;
    Ok(status)
}

/// What a commit produced.
#[derive(Clone, Debug)]
pub struct CommitOutcome {
    /// The new or reused root identity.
    pub root: ObjectIdentity,
    /// New map records, in creation order (children before parents).
    pub maps_created: Vec<ObjectIdentity>,
    /// The new `@runtypes` version, if bindings changed.
    pub runtypes: Option<ObjectIdentity>,
    pub changes: ChangeSet,
}

impl CommitOutcome {
    pub fn records_created(&self) -> usize {
        self.maps_created.len() + self.runtypes.is_some() as usize
    }

    pub fn is_fixed_point(&self) -> bool {
        self.records_created() == 0
    }
}

/// Secondary key of the interior map at `path`; `/` is not legal in names,
/// so segments are joined with `.`.
pub fn interior_secondary(path: &TreePath) -> Name {
    let text = path.segments().iter().map(Name::as_str).collect::<Vec<_>>().join(".");
    Name::new(text).expect("joined segment names form a valid name")
}

/// Commits inside an existing transaction. On error the caller must abort.
pub fn commit_alias_tree_in(
    txn: &mut WriteTransaction,
    tree: &AliasTree,
    bind_run_types: &[Name],
) -> Result<CommitOutcome> {
    let active = tree::active_trees(txn)?;
    let baseline = bind_run_types.first().and_then(|rt| active.get(rt)).cloned();
    let changes = diff_alias_vs_numeric(txn, tree, baseline.as_ref())?;

    let numeric = baseline.as_ref().map(|id| txn.get_object(id)).transpose()?;
    let mut maps_created = Vec::new();
    let root = rebuild(
        txn,
        &TreePath::root(),
        tree.root(),
        numeric,
        (tree.root_class(), None),
        &mut maps_created,
    )?;

    let mut runtypes = None;
    if !bind_run_types.is_empty() {
        let mut bindings = active.clone();
        for rt in bind_run_types {
            bindings.insert(rt.clone(), root.clone());
        }
        if bindings != active {
            runtypes = Some(tree::activate(txn, bindings)?);
        }
    }
    Ok(CommitOutcome {
        root,
        maps_created,
        runtypes,
        changes,
    })
}

fn rebuild(
    txn: &mut WriteTransaction,
    path: &TreePath,
    children: &BTreeMap<Name, AliasNode>,
    numeric: Option<StoredObject>,
    identity_series: (&Name, Option<&Name>),
    created: &mut Vec<ObjectIdentity>,
) -> Result<ObjectIdentity> {
    let empty = BTreeMap::new();
    let old_links = numeric
        .as_ref()
        .and_then(|o| o.payload.links())
        .unwrap_or(&empty)
        .clone();
    let map_class = Name::new(INTERIOR_MAP_CLASS).expect("valid class");

    let mut links = BTreeMap::new();
    for (name, node) in children {
        let id = match node {
            AliasNode::Object(target) => target.clone(),
            AliasNode::Map(grandchildren) => {
                let child_path = path.child(name);
                let counterpart = match old_links.get(name) {
                    Some(o) if txn.kind_of(o) == Some(Kind::Map) => Some(txn.get_object(o)?),
                    _ => None,
                };
                let secondary = interior_secondary(&child_path);
                rebuild(
                    txn,
                    &child_path,
                    grandchildren,
                    counterpart,
                    (&map_class, Some(&secondary)),
                    created,
                )?
            }
        };
        links.insert(name.clone(), id);
    }

    let candidate = Payload::Map(links);
    if let Some(existing) = numeric {
        if existing.payload == candidate {
            return Ok(existing.identity);
        }
    }
    let (class, secondary) = identity_series;
    let id = txn.create_object(class, secondary, candidate)?;
    created.push(id.clone());
    Ok(id)
}

/// Runs [`commit_alias_tree_in`] in its own transaction; nothing is
/// committed if it fails.
pub fn commit_alias_tree(store: &Store, tree: &AliasTree, bind_run_types: &[Name]) -> Result<CommitOutcome> {
    let mut txn = store.begin()?;
    let outcome = commit_alias_tree_in(&mut txn, tree, bind_run_types)?;
    txn.commit()?;
    Ok(outcome)
}
