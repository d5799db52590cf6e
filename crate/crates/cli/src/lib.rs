//! The `confdb` command language.
//!
//! A [`Session`] owns an open store and at most one explicit transaction.
//! Mutating verbs outside a `begin`..`commit` block run in their own
//! transaction; inside a block they share it, and queries see its pending
//! objects and staged alias edits.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use confdb::alias::{self, AliasTree};
use confdb::commit;
use confdb::model::{parse_series, Kind, Name, ObjectIdentity, Payload};
use confdb::service::Server;
use confdb::store::{ObjectReader, Store, StoredObject, WriteTransaction};
use confdb::tree::{self, TreePath};

/// One command of the language.
#[derive(Subcommand, Debug, Clone, PartialEq, Eq)]
pub enum Verb {
    /// Create the next version of a leaf series from a canonical payload file
    NewObject {
        /// `Class` or `Class:Secondary`
        series: String,
        #[arg(long)]
        from: PathBuf,
    },
    /// Print an object's bookkeeping and payload
    Show { identity: String },
    /// List every version of a series
    Versions { series: String },
    /// Print the manifest of the tree rooted at a map
    Manifest { identity: String },
    /// Resolve a path below a root map
    Lookup { identity: String, path: String },
    /// Create an empty alias tree
    NewAlias { name: String, root_class: String },
    /// Add a map alias under a parent map alias (`/` is the root)
    AliasMap {
        alias: String,
        parent: String,
        name: String,
    },
    /// Add or retarget an object alias
    AliasSet {
        alias: String,
        parent: String,
        name: String,
        identity: String,
    },
    /// Remove an alias node and its subtree
    AliasRm { alias: String, path: String },
    /// Print an alias tree
    AliasShow { alias: String },
    /// Compare an alias tree with the tree bound to a run type
    Diff { alias: String, run_type: Option<String> },
    /// Rebuild the numeric tree for an alias tree and bind it
    CommitAlias {
        alias: String,
        #[arg(long, value_delimiter = ',', required = true)]
        bind: Vec<String>,
    },
    /// Bind run types to roots (`RT=Identity`), keeping other bindings
    Activate {
        #[arg(value_delimiter = ',', required = true)]
        bindings: Vec<String>,
    },
    /// List the active run-type bindings
    Runtypes,
    /// Print the tree identity bound to a run type
    Resolve { run_type: String },
    /// Serve the store read-only over TCP
    Serve {
        #[arg(long, env = "CONFDB_LISTEN")]
        listen: String,
    },
    /// Open a transaction block
    Begin,
    /// Commit the open block
    Commit,
    /// Discard the open block
    Abort,
}

#[derive(Parser, Debug)]
#[command(no_binary_name = true, disable_help_subcommand = true)]
struct Line {
    #[command(subcommand)]
    verb: Verb,
}

/// A failed command: a stable code plus a human message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    fn new(code: &str, message: impl Into<String>) -> Self {
        CliError {
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn parse(message: impl Into<String>) -> Self {
        CliError::new("parse-error", message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<confdb::Error> for CliError {
    fn from(e: confdb::Error) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::new("io-error", e.to_string())
    }
}

/// A script failure and the 1-based line it happened on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptError {
    pub line: usize,
    pub error: CliError,
}

impl fmt::Display for ScriptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.error)
    }
}

impl std::error::Error for ScriptError {}

/// Splits a command line into a verb. Blank and `#` lines give `None`.
pub fn parse_line(line: &str) -> Result<Option<Verb>, CliError> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let words = shlex::split(trimmed).ok_or_else(|| CliError::parse("unbalanced quotes"))?;
    let parsed = Line::try_parse_from(words).map_err(|e| {
        let text = e.to_string();
        let first = text.lines().next().unwrap_or_default();
        CliError::parse(first.trim_start_matches("error: "))
    })?;
    Ok(Some(parsed.verb))
}

enum Reader<'a> {
    Store(&'a Store),
    Txn(&'a WriteTransaction),
}

impl ObjectReader for Reader<'_> {
    fn get_object(&self, id: &ObjectIdentity) -> confdb::Result<StoredObject> {
        match self {
            Reader::Store(s) => s.get_object(id),
            Reader::Txn(t) => t.get_object(id),
        }
    }

    fn kind_of(&self, id: &ObjectIdentity) -> Option<Kind> {
        match self {
            Reader::Store(s) => s.kind_of(id),
            Reader::Txn(t) => t.kind_of(id),
        }
    }

    fn latest_key(&self, class: &Name, secondary: Option<&Name>) -> Option<u64> {
        match self {
            Reader::Store(s) => s.latest_key(class, secondary),
            Reader::Txn(t) => t.latest_key(class, secondary),
        }
    }
}

pub struct Session {
    store: Store,
    txn: Option<WriteTransaction>,
    base_dir: PathBuf,
}

impl Session {
    pub fn new(store: Store) -> Session {
        Session {
            store,
            txn: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// Directory that relative `--from` paths are resolved against.
    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.base_dir = dir.into();
    }

    pub fn in_block(&self) -> bool {
        self.txn.is_some()
    }

    /// Parses and runs one line, writing its output to `out`.
    pub fn execute_line(&mut self, line: &str, out: &mut dyn Write) -> Result<(), CliError> {
        match parse_line(line)? {
            Some(verb) => self.execute(verb, out),
            None => Ok(()),
        }
    }

    /// Runs one command. A failure inside a block aborts the block.
    pub fn execute(&mut self, verb: Verb, out: &mut dyn Write) -> Result<(), CliError> {
        let result = self.run(verb, out);
        if let Err(e) = result {
            if self.txn.take().is_some() {
                return Err(CliError::new(&e.code, format!("{} (open block aborted)", e.message)));
            }
            return Err(e);
        }
        Ok(())
    }

    /// Runs `text` line by line, stopping at the first error. A block still
    /// open at the end is aborted and reported as an error.
    pub fn execute_script(&mut self, text: &str, out: &mut dyn Write) -> Result<(), ScriptError> {
        let mut begin_line = 0;
        let mut last = 0;
        for (i, line) in text.lines().enumerate() {
            last = i + 1;
            let was_open = self.in_block();
            self.execute_line(line, out)
                .map_err(|error| ScriptError { line: i + 1, error })?;
            if !was_open && self.in_block() {
                begin_line = i + 1;
            }
        }
        self.finish().map_err(|error| ScriptError {
            line: if begin_line > 0 { begin_line } else { last },
            error,
        })
    }

    /// Aborts a block left open; that is an error.
    pub fn finish(&mut self) -> Result<(), CliError> {
        match self.txn.take() {
            Some(_) => Err(CliError::new("txn-open", "begin without commit; block aborted")),
            None => Ok(()),
        }
    }

    fn reader(&self) -> Reader<'_> {
        match &self.txn {
            Some(t) => Reader::Txn(t),
            None => Reader::Store(&self.store),
        }
    }

    /// Runs `f` in the open block, or in a transaction of its own.
    fn mutate<T>(&mut self, f: impl FnOnce(&mut WriteTransaction) -> confdb::Result<T>) -> Result<T, CliError> {
        match &mut self.txn {
            Some(txn) => Ok(f(txn)?),
            None => {
                let mut txn = self.store.begin()?;
                let value = f(&mut txn)?;
                txn.commit()?;
                Ok(value)
            }
        }
    }

    fn load_alias(&self, name: &str) -> confdb::Result<AliasTree> {
        match &self.txn {
            Some(txn) => alias::load_alias_tree_in(txn, name),
            None => alias::load_alias_tree(&self.store, name),
        }
    }

    fn edit_alias(&mut self, name: &str, f: impl FnOnce(&mut AliasTree) -> confdb::Result<()>) -> Result<(), CliError> {
        self.mutate(|txn| {
            let mut tree = alias::load_alias_tree_in(txn, name)?;
            f(&mut tree)?;
            alias::save_alias_tree_in(txn, &tree);
            Ok(())
        })
    }

    fn run(&mut self, verb: Verb, out: &mut dyn Write) -> Result<(), CliError> {
        match verb {
            Verb::NewObject { series, from } => {
                let (class, secondary) = parse_series(&series)?;
                let payload = read_leaf(&self.base_dir.join(&from))?;
                let id = self.mutate(|txn| txn.create_object(&class, secondary.as_ref(), payload))?;
                writeln!(out, "created {id}")?;
            }
            Verb::Show { identity } => {
                let obj = self.reader().get_object(&parse_id(&identity)?)?;
                writeln!(out, "identity {}", obj.identity)?;
                writeln!(out, "created_at {}", obj.created_at)?;
                writeln!(out, "digest {}", obj.digest)?;
                out.write_all(&obj.payload.encode())?;
            }
            Verb::Versions { series } => {
                let (class, secondary) = parse_series(&series)?;
                for key in self.reader().list_versions(&class, secondary.as_ref()) {
                    let id = ObjectIdentity::from_parts(class.as_str(), secondary.as_ref().map(Name::as_str), key)?;
                    writeln!(out, "{id}")?;
                }
            }
            Verb::Manifest { identity } => {
                let manifest = tree::walk_tree(&self.reader(), &parse_id(&identity)?)?;
                out.write_all(manifest.to_text().as_bytes())?;
            }
            Verb::Lookup { identity, path } => {
                let obj = tree::lookup_path(&self.reader(), &parse_id(&identity)?, &TreePath::parse(&path)?)?;
                writeln!(out, "{}", obj.identity)?;
            }
            Verb::NewAlias { name, root_class } => {
                let tree = AliasTree::new(&name, &root_class)?;
                self.mutate(|txn| {
                    match alias::load_alias_tree_in(txn, &name) {
                        Ok(_) => return Err(confdb::Error::DuplicateName(name.clone())),
                        Err(confdb::Error::NoSuchAlias(_)) => {}
                        Err(e) => return Err(e),
                    }
                    alias::save_alias_tree_in(txn, &tree);
                    Ok(())
                })?;
            }
            Verb::AliasMap { alias, parent, name } => {
                let parent = TreePath::parse(&parent)?;
                self.edit_alias(&alias, |t| t.add_map_alias(&parent, &name))?;
            }
            Verb::AliasSet {
                alias,
                parent,
                name,
                identity,
            } => {
                let parent = TreePath::parse(&parent)?;
                let target = parse_id(&identity)?;
                self.edit_alias(&alias, |t| t.set_object_alias(&parent, &name, target))?;
            }
            Verb::AliasRm { alias, path } => {
                let path = TreePath::parse(&path)?;
                self.edit_alias(&alias, |t| t.remove_node(&path))?;
            }
            Verb::AliasShow { alias } => {
                out.write_all(self.load_alias(&alias)?.to_text().as_bytes())?;
            }
            Verb::Diff { alias, run_type } => {
                let tree = self.load_alias(&alias)?;
                let reader = self.reader();
                let baseline = run_type.map(|rt| tree::resolve_run_type(&reader, &rt)).transpose()?;
                let changes = commit::diff_alias_vs_numeric(&reader, &tree, baseline.as_ref())?;
                out.write_all(changes.report().as_bytes())?;
            }
            Verb::CommitAlias { alias, bind } => {
                let binds = bind.iter().map(Name::new).collect::<confdb::Result<Vec<_>>>()?;
                let outcome = self.mutate(|txn| {
                    let tree = alias::load_alias_tree_in(txn, &alias)?;
                    commit::commit_alias_tree_in(txn, &tree, &binds)
                })?;
                if outcome.is_fixed_point() {
                    writeln!(out, "fixed point: 0 objects created")?;
                } else {
                    writeln!(
                        out,
                        "committed {}: {} objects created",
                        outcome.root,
                        outcome.records_created()
                    )?;
                }
            }
            Verb::Activate { bindings } => {
                let mut parsed = BTreeMap::new();
                for b in &bindings {
                    let (rt, id) = b
                        .split_once('=')
                        .ok_or_else(|| CliError::parse(format!("expected RT=Identity, got {b:?}")))?;
                    parsed.insert(Name::new(rt)?, parse_id(id)?);
                }
                let id = self.mutate(|txn| {
                    let mut all = tree::active_trees(txn)?;
                    all.extend(parsed);
                    tree::activate(txn, all)
                })?;
                writeln!(out, "activated {id}")?;
            }
            Verb::Runtypes => {
                for (rt, id) in tree::active_trees(&self.reader())? {
                    writeln!(out, "{rt}\t{id}")?;
                }
            }
            Verb::Resolve { run_type } => {
                writeln!(out, "{}", tree::resolve_run_type(&self.reader(), &run_type)?)?;
            }
            Verb::Serve { listen } => {
                if self.in_block() {
                    return Err(CliError::new("txn-open", "cannot serve inside a block"));
                }
                let server = Server::bind(self.store.clone(), &listen)?;
                writeln!(out, "listening on {}", server.local_addr()?)?;
                out.flush()?;
                server.run()?;
            }
            Verb::Begin => {
                if self.in_block() {
                    return Err(CliError::new("txn-open", "a block is already open"));
                }
                self.txn = Some(self.store.begin()?);
            }
            Verb::Commit => {
                let txn = self.txn.take().ok_or(confdb::Error::TxnClosed)?;
                let created = txn.commit()?;
                writeln!(out, "committed {} objects", created.len())?;
            }
            Verb::Abort => {
                self.txn.take().ok_or(confdb::Error::TxnClosed)?.abort();
                writeln!(out, "aborted")?;
            }
        }
        Ok(())
    }
}

fn parse_id(text: &str) -> Result<ObjectIdentity, CliError> {
    Ok(ObjectIdentity::parse(text)?)
}

/// Reads a `--from` file: the canonical text of a leaf payload.
fn read_leaf(path: &Path) -> Result<Payload, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::new("io-error", format!("{}: {e}", path.display())))?;
    let payload = Payload::decode(&bytes)?;
    if payload.kind() != Kind::Leaf {
        return Err(confdb::Error::InvalidPayload(format!(
            "{} holds a {} payload, not a leaf",
            path.display(),
            payload.kind()
        ))
        .into());
    }
    Ok(payload)
}
