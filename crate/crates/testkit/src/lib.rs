//! Random generators and reference oracles shared by the confdb test suites.
//!
//! Nothing in here calls the commit or diff code: the oracles rebuild trees
//! naively from the alias structure and read the store only through its
//! public read API.

use std::collections::{BTreeMap, HashMap};

use confdb::alias::{AliasNode, AliasTree};
use confdb::model::{Kind, Name, ObjectIdentity, Payload, Value};
use confdb::store::{ObjectReader, Store};
use confdb::tree::{walk_tree, TreePath};
use rand::seq::SliceRandom;
use rand::Rng;

// ---------------------------------------------------------------------------
// Codec generators

const NAME_CHARS: &[char] = &[
    'a', 'b', 'c', 'x', 'Y', 'Z', '0', '7', '_', '-', '.', ',', '@', '#', '"', '\\', ' ', 'é', '漢', '✓',
];

pub fn random_name(rng: &mut impl Rng) -> Name {
    loop {
        let len = rng.gen_range(1..=8);
        let s: String = (0..len).map(|_| *NAME_CHARS.choose(rng).unwrap()).collect();
        if let Ok(n) = Name::new(s) {
            return n;
        }
    }
}

pub fn random_identity(rng: &mut impl Rng) -> ObjectIdentity {
    let class = random_name(rng);
    let secondary = rng.gen_bool(0.5).then(|| random_name(rng));
    let key = match rng.gen_range(0..4) {
        0 => 1,
        1 => u64::MAX,
        _ => rng.gen_range(1..1_000_000),
    };
    ObjectIdentity::new(class, secondary, std::num::NonZeroU64::new(key).unwrap())
}

pub fn random_f64(rng: &mut impl Rng) -> f64 {
    const SPECIAL: &[u64] = &[
        0x0000_0000_0000_0000, // +0
        0x8000_0000_0000_0000, // -0
        0x0000_0000_0000_0001, // smallest subnormal
        0x000f_ffff_ffff_ffff, // largest subnormal
        0x8000_0000_0000_0001,
        0x0010_0000_0000_0000, // smallest normal
        0x7ff0_0000_0000_0000, // +inf
        0xfff0_0000_0000_0000, // -inf
        0x7ff8_0000_0000_0000, // quiet NaN
        0xfff8_0000_0000_0001, // negative NaN with payload
        0x7ff0_0000_0000_0001, // signalling NaN
        0x7fef_ffff_ffff_ffff, // MAX
    ];
    match rng.gen_range(0..4) {
        0 => f64::from_bits(*SPECIAL.choose(rng).unwrap()),
        1 => f64::from_bits(rng.gen()),
        2 => rng.gen_range(-1e6..1e6),
        _ => rng.gen_range(-100i32..100) as f64 * 0.5,
    }
}

pub fn random_string(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(0..10);
    (0..len)
        .map(|_| match rng.gen_range(0..5) {
            0 => char::from_u32(rng.gen_range(0..0x20)).unwrap(),
            1 => *['"', '\\', ',', ']', '[', '\u{7f}', 'ß', '🚀'].choose(rng).unwrap(),
            _ => rng.gen_range(b' '..=b'~') as char,
        })
        .collect()
}

fn random_bytes(rng: &mut impl Rng) -> Vec<u8> {
    let len = rng.gen_range(0..6);
    (0..len).map(|_| rng.gen()).collect()
}

pub fn random_value(rng: &mut impl Rng) -> Value {
    let n = rng.gen_range(0..4);
    match rng.gen_range(0..8) {
        0 => Value::Int(rng.gen()),
        1 => Value::Float(random_f64(rng)),
        2 => Value::Str(random_string(rng)),
        3 => Value::Bytes(random_bytes(rng)),
        4 => Value::IntArray((0..n).map(|_| rng.gen()).collect()),
        5 => Value::FloatArray((0..n).map(|_| random_f64(rng)).collect()),
        6 => Value::StrArray((0..n).map(|_| random_string(rng)).collect()),
        _ => Value::BytesArray((0..n).map(|_| random_bytes(rng)).collect()),
    }
}

pub fn random_payload(rng: &mut impl Rng) -> Payload {
    let n = rng.gen_range(0..6);
    match rng.gen_range(0..3) {
        0 => Payload::Leaf((0..n).map(|_| (random_name(rng), random_value(rng))).collect()),
        1 => Payload::Map((0..n).map(|_| (random_name(rng), random_identity(rng))).collect()),
        _ => Payload::RunTypes((0..n).map(|_| (random_name(rng), random_identity(rng))).collect()),
    }
}

/// Hex-float text computed by repeated scaling and digit extraction, as an
/// independent check on the bit-slicing formatter.
pub fn hex_float_oracle(v: f64) -> String {
    if v.is_nan() {
        return format!("nan:{:016x}", v.to_bits());
    }
    let sign = if v.is_sign_negative() { "-" } else { "" };
    if v.is_infinite() {
        return format!("{sign}inf");
    }
    let mut m = v.abs();
    if m == 0.0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if m < f64::MIN_POSITIVE {
        // Subnormal: scale by 2^1022 (exact) and keep the leading 0.
        m *= 2f64.powi(1022);
        (0u32, -1022)
    } else {
        let mut e = 0i32;
        while m >= 2.0 {
            m /= 2.0;
            e += 1;
        }
        while m < 1.0 {
            m *= 2.0;
            e -= 1;
        }
        (1, e)
    };
    let mut frac = m - lead as f64;
    let mut digits = String::new();
    while frac != 0.0 {
        frac *= 16.0;
        let d = frac.floor();
        digits.push(std::char::from_digit(d as u32, 16).unwrap());
        frac -= d;
    }
    let exp = if exp >= 0 { format!("+{exp}") } else { exp.to_string() };
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp}")
    } else {
        format!("{sign}0x{lead}.{digits}p{exp}")
    }
}

// ---------------------------------------------------------------------------
// Alias tree generators

pub fn name(s: &str) -> Name {
    Name::new(s).unwrap()
}

pub fn path(s: &str) -> TreePath {
    TreePath::parse(s).unwrap()
}

/// Creates `series` leaf series with `versions` versions each and returns
/// every identity created.
pub fn leaf_pool(store: &Store, series: usize, versions: usize) -> Vec<ObjectIdentity> {
    let mut txn = store.begin().unwrap();
    let mut out = Vec::new();
    for s in 0..series {
        for v in 0..versions {
            let p = Payload::Leaf([(name("v"), Value::Int((s * 1000 + v) as i64))].into());
            out.push(txn.create_object(&name(&format!("Leaf{s}")), None, p).unwrap());
        }
    }
    txn.commit().unwrap();
    out
}

/// Creates one fresh leaf version and returns it.
pub fn fresh_leaf(store: &Store, class: &str) -> ObjectIdentity {
    let mut txn = store.begin().unwrap();
    let key = txn.latest_key(&name(class), None).unwrap_or(0) + 1;
    let p = Payload::Leaf([(name("v"), Value::Int(key as i64))].into());
    let id = txn.create_object(&name(class), None, p).unwrap();
    txn.commit().unwrap();
    id
}

const CHILD_NAMES: &[&str] = &["a", "b", "c", "d", "e", "f", "g", "h"];

/// Random alias tree with at most `max_depth` levels below the root, at most
/// 8 children per map alias and roughly `budget` nodes.
pub fn random_alias_tree(rng: &mut impl Rng, pool: &[ObjectIdentity], max_depth: usize, budget: usize) -> AliasTree {
    let mut tree = AliasTree::new("rand", "Top").unwrap();
    let mut left = budget;
    fill(rng, &mut tree, &TreePath::root(), 0, max_depth, pool, &mut left);
    tree
}

fn fill(
    rng: &mut impl Rng,
    tree: &mut AliasTree,
    at: &TreePath,
    depth: usize,
    max_depth: usize,
    pool: &[ObjectIdentity],
    left: &mut usize,
) {
    let n = rng.gen_range(0..=CHILD_NAMES.len().min(*left));
    let mut names = CHILD_NAMES.to_vec();
    names.shuffle(rng);
    for child in names.into_iter().take(n) {
        if *left == 0 {
            return;
        }
        *left -= 1;
        if depth + 1 < max_depth && rng.gen_bool(0.4) {
            tree.add_map_alias(at, child).unwrap();
            fill(rng, tree, &at.child(&name(child)), depth + 1, max_depth, pool, left);
        } else {
            tree.set_object_alias(at, child, pool.choose(rng).unwrap().clone())
                .unwrap();
        }
    }
}

/// Map-alias paths (including the root) of `tree`.
pub fn map_alias_paths(tree: &AliasTree) -> Vec<TreePath> {
    let mut out = vec![TreePath::root()];
    out.extend(tree.nodes().into_iter().filter(|(_, n)| n.is_map()).map(|(p, _)| p));
    out
}

pub fn object_alias_paths(tree: &AliasTree) -> Vec<TreePath> {
    tree.nodes()
        .into_iter()
        .filter(|(_, n)| !n.is_map())
        .map(|(p, _)| p)
        .collect()
}

/// Applies one random edit: retarget, add object, add map, remove, or graft
/// an existing map from `grafts`.
pub fn random_edit(
    rng: &mut impl Rng,
    tree: &mut AliasTree,
    pool: &[ObjectIdentity],
    grafts: &[ObjectIdentity],
    max_depth: usize,
) {
    let objects = object_alias_paths(tree);
    let maps = map_alias_paths(tree);
    let all: Vec<TreePath> = tree.nodes().into_iter().map(|(p, _)| p).collect();
    let free_name = |tree: &AliasTree, parent: &TreePath, rng: &mut dyn rand::RngCore| {
        let mut names = CHILD_NAMES.to_vec();
        names.shuffle(rng);
        names.into_iter().find(|n| tree.node(&parent.child(&name(n))).is_none())
    };
    match rng.gen_range(0..5) {
        0 if !objects.is_empty() => {
            let p = objects.choose(rng).unwrap();
            let (parent, last) = p.parent().unwrap();
            tree.set_object_alias(&parent, last.as_str(), pool.choose(rng).unwrap().clone())
                .unwrap();
        }
        1 | 2 => {
            let parent = maps.choose(rng).unwrap().clone();
            if let Some(n) = free_name(tree, &parent, rng) {
                if parent.segments().len() + 1 < max_depth && rng.gen_bool(0.5) {
                    tree.add_map_alias(&parent, n).unwrap();
                } else {
                    tree.set_object_alias(&parent, n, pool.choose(rng).unwrap().clone())
                        .unwrap();
                }
            }
        }
        3 if !all.is_empty() => {
            tree.remove_node(all.choose(rng).unwrap()).unwrap();
        }
        4 if !grafts.is_empty() => {
            let parent = maps.choose(rng).unwrap().clone();
            if let Some(n) = free_name(tree, &parent, rng) {
                tree.set_object_alias(&parent, n, grafts.choose(rng).unwrap().clone())
                    .unwrap();
            }
        }
        _ => {
            let parent = maps.choose(rng).unwrap().clone();
            if let Some(n) = free_name(tree, &parent, rng) {
                tree.set_object_alias(&parent, n, pool.choose(rng).unwrap().clone())
                    .unwrap();
            }
        }
    }
}

/// Balanced alias tree: `fanout` map aliases per level for `depth` levels,
/// each bottom map alias holding `leaves` object aliases. Object aliases sit
/// at depth `depth + 1`.
pub fn balanced_alias_tree(pool: &[ObjectIdentity], depth: usize, fanout: usize, leaves: usize) -> AliasTree {
    let mut tree = AliasTree::new("balanced", "Top").unwrap();
    let mut frontier = vec![TreePath::root()];
    let mut k = 0;
    for _ in 0..depth {
        let mut next = Vec::new();
        for p in &frontier {
            for c in CHILD_NAMES.iter().take(fanout) {
                tree.add_map_alias(p, c).unwrap();
                next.push(p.child(&name(c)));
            }
        }
        frontier = next;
    }
    for p in &frontier {
        for c in CHILD_NAMES.iter().take(leaves) {
            tree.set_object_alias(p, &format!("o{c}"), pool[k % pool.len()].clone())
                .unwrap();
            k += 1;
        }
    }
    tree
}

// ---------------------------------------------------------------------------
// Naive rebuild oracle

/// How the naive rebuild decides that a map already exists.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dedup {
    /// Reuse the prior tree's map at the same path if its content matches.
    PriorTreeByPath,
    /// Reuse any stored map in the same `(class, secondary)` series with the
    /// same content.
    StoreSeries,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expected {
    pub root: ObjectIdentity,
    pub manifest: String,
    pub new_maps: usize,
    /// Paths (map aliases) that need a new map version.
    pub new_paths: Vec<TreePath>,
}

/// Rebuilds every map of `tree` from scratch, deduplicates against the
/// store, and predicts the identities, manifest and record count of a commit.
pub fn naive_commit(store: &Store, tree: &AliasTree, prior_root: Option<&ObjectIdentity>, dedup: Dedup) -> Expected {
    let mut prior_by_path: HashMap<String, ObjectIdentity> = HashMap::new();
    if let Some(root) = prior_root {
        for (p, id) in walk_tree(store, root).unwrap().entries {
            if store.kind_of(&id) == Some(Kind::Map) {
                prior_by_path.insert(p.to_string(), id);
            }
        }
    }
    let mut by_series_content: HashMap<(String, String), ObjectIdentity> = HashMap::new();
    if dedup == Dedup::StoreSeries {
        for id in store.identities() {
            if store.kind_of(&id) == Some(Kind::Map) {
                let text = map_text(store.get_object(&id).unwrap().payload.links().unwrap());
                let series = series_text(&id);
                let slot = by_series_content.entry((series, text)).or_insert(id.clone());
                if id.key() > slot.key() {
                    *slot = id;
                }
            }
        }
    }

    let mut st = OracleState {
        store,
        dedup,
        prior_by_path,
        by_series_content,
        allocated: HashMap::new(),
        new_paths: Vec::new(),
    };
    let root = st.build(tree.root(), &TreePath::root(), tree.root_class().as_str(), None);

    let mut manifest = String::new();
    st.expand(&mut manifest, &TreePath::root(), &root);
    Expected {
        root: root.id().clone(),
        manifest,
        new_maps: st.new_paths.len(),
        new_paths: st.new_paths,
    }
}

/// Predicted numeric tree: rebuilt maps keep their alias children, plain
/// targets are expanded from the store.
enum Predicted {
    Map(ObjectIdentity, Vec<(Name, Predicted)>),
    Stored(ObjectIdentity),
}

impl Predicted {
    fn id(&self) -> &ObjectIdentity {
        match self {
            Predicted::Map(id, _) | Predicted::Stored(id) => id,
        }
    }
}

fn map_text(links: &BTreeMap<Name, ObjectIdentity>) -> String {
    let mut sorted: Vec<(&str, String)> = links.iter().map(|(n, i)| (n.as_str(), i.to_string())).collect();
    sorted.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
    let mut s = String::from("kind=map\n");
    for (n, i) in sorted {
        s.push_str(&format!("{n}={i}\n"));
    }
    s
}

fn series_text(id: &ObjectIdentity) -> String {
    match id.secondary() {
        Some(s) => format!("{}:{}", id.class(), s),
        None => id.class().to_string(),
    }
}

struct OracleState<'a> {
    store: &'a Store,
    dedup: Dedup,
    prior_by_path: HashMap<String, ObjectIdentity>,
    by_series_content: HashMap<(String, String), ObjectIdentity>,
    allocated: HashMap<String, u64>,
    new_paths: Vec<TreePath>,
}

impl OracleState<'_> {
    fn build(
        &mut self,
        children: &BTreeMap<Name, AliasNode>,
        at: &TreePath,
        class: &str,
        secondary: Option<String>,
    ) -> Predicted {
        let mut built = Vec::new();
        let mut links = BTreeMap::new();
        for (n, node) in children {
            let child = match node {
                AliasNode::Object(t) => Predicted::Stored(t.clone()),
                AliasNode::Map(c) => {
                    let p = at.child(n);
                    let sec = p.segments().iter().map(Name::as_str).collect::<Vec<_>>().join(".");
                    self.build(c, &p, "Map", Some(sec))
                }
            };
            links.insert(n.clone(), child.id().clone());
            built.push((n.clone(), child));
        }
        let text = map_text(&links);
        let series = match &secondary {
            Some(s) => format!("{class}:{s}"),
            None => class.to_string(),
        };
        let reuse = match self.dedup {
            Dedup::PriorTreeByPath => self
                .prior_by_path
                .get(&at.to_string())
                .filter(|id| map_text(self.store.get_object(id).unwrap().payload.links().unwrap()) == text)
                .cloned(),
            Dedup::StoreSeries => self.by_series_content.get(&(series.clone(), text)).cloned(),
        };
        let id = match reuse {
            Some(id) => id,
            None => {
                let cls = name(class);
                let sec = secondary.as_deref().map(name);
                let base = self.store.latest_key(&cls, sec.as_ref()).unwrap_or(0);
                let n = self.allocated.entry(series).or_insert(0);
                *n += 1;
                self.new_paths.push(at.clone());
                ObjectIdentity::new(cls, sec, std::num::NonZeroU64::new(base + *n).unwrap())
            }
        };
        Predicted::Map(id, built)
    }

    fn expand(&self, out: &mut String, at: &TreePath, node: &Predicted) {
        match node {
            Predicted::Map(id, children) => {
                out.push_str(&format!("{}\t{id}\n", at.display_root_slash()));
                for (n, c) in children {
                    self.expand(out, &at.child(n), c);
                }
            }
            Predicted::Stored(id) => self.expand_stored(out, at, id),
        }
    }

    fn expand_stored(&self, out: &mut String, at: &TreePath, id: &ObjectIdentity) {
        if self.store.kind_of(id) == Some(Kind::Map) {
            for (p, i) in walk_tree(self.store, id).unwrap().entries {
                let full = p.segments().iter().fold(at.clone(), |acc, s| acc.child(s));
                out.push_str(&format!("{}\t{i}\n", full.display_root_slash()));
            }
        } else {
            out.push_str(&format!("{}\t{id}\n", at.display_root_slash()));
        }
    }
}
