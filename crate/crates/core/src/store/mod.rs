//! Durable append-only object store.
//!
//! All objects live in one log file, `objects.log`, inside the store
//! directory. The index from identity to record offset is rebuilt from the
//! log on open and kept in memory only. Writers serialize through an
//! in-process mutex plus an exclusive lock on the `LOCK` file, so several
//! processes may share a store directory.

mod log;

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use self::log::{Entry, Scan, ScanError};
use crate::model::{Digest, Kind, Name, ObjectIdentity, Payload};
use crate::{Error, Result};

pub const LOG_FILE: &str = "objects.log";
pub const LOCK_FILE: &str = "LOCK";
/// Reserved class of run-type maps.
pub const RUNTYPES_CLASS: &str = "@runtypes";

/// Failpoint: when set to a number of microseconds, commits write their
/// buffer in 64-byte chunks and sleep between chunks.
pub const SLOW_COMMIT_ENV: &str = "CONFDB_SLOW_COMMIT_US";

type Series = (Name, Option<Name>);

/// A committed (or, inside a transaction, pending) configuration object.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredObject {
    pub identity: ObjectIdentity,
    pub payload: Payload,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub digest: Digest,
}

impl StoredObject {
    pub fn kind(&self) -> Kind {
        self.payload.kind()
    }
}

/// Read access shared by a [`Store`] (committed state) and a
/// [`WriteTransaction`] (committed state plus its own pending creations).
pub trait ObjectReader {
    fn get_object(&self, id: &ObjectIdentity) -> Result<StoredObject>;

    /// Kind of an existing object, or `None` if it does not exist.
    fn kind_of(&self, id: &ObjectIdentity) -> Option<Kind>;

    /// Highest config key in use for the series, if any.
    fn latest_key(&self, class: &Name, secondary: Option<&Name>) -> Option<u64>;

    /// Ascending, dense `1..=N`; empty for unknown series.
    fn list_versions(&self, class: &Name, secondary: Option<&Name>) -> Vec<u64> {
        (1..=self.latest_key(class, secondary).unwrap_or(0)).collect()
    }
}

#[derive(Default)]
struct Index {
    entries: HashMap<ObjectIdentity, Entry>,
    highs: HashMap<Series, u64>,
    /// Bytes of the log covered by committed transactions.
    len: u64,
}

impl Index {
    fn apply(&mut self, txn: Vec<(ObjectIdentity, Entry)>) -> std::result::Result<(), String> {
        for (id, entry) in txn {
            let high = self.highs.entry(id.series()).or_insert(0);
            if id.key() != *high + 1 {
                return Err(format!("{id} breaks key density (previous {high})"));
            }
            *high = id.key();
            self.entries.insert(id, entry);
        }
        Ok(())
    }
}

struct Inner {
    dir: PathBuf,
    log: File,
    index: RwLock<Index>,
    writer_busy: Mutex<bool>,
    writer_cv: Condvar,
    epoch: Mutex<Option<u64>>,
    verify: AtomicBool,
}

/// Handle to an open store. Cheap to clone; clones share the index.
#[derive(Clone)]
pub struct Store {
    inner: Arc<Inner>,
}

impl Store {
    /// Opens (creating if needed) the store at `dir`, replaying the log.
    /// A torn tail is ignored, and truncated if no writer holds the lock.
    pub fn open(dir: impl AsRef<Path>) -> Result<Store> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let log = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(dir.join(LOG_FILE))?;
        let store = Store {
            inner: Arc::new(Inner {
                dir,
                log,
                index: RwLock::new(Index::default()),
                writer_busy: Mutex::new(false),
                writer_cv: Condvar::new(),
                epoch: Mutex::new(None),
                verify: AtomicBool::new(false),
            }),
        };
        let torn = store.refresh_inner()?;
        if torn {
            let lock = store.lock_file()?;
            if lock.try_lock().is_ok() {
                store.refresh_inner()?;
                store.truncate_torn_tail()?;
                let _ = lock.unlock();
            }
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.inner.dir
    }

    /// Pins the `created_at` of subsequently created objects.
    pub fn set_epoch(&self, epoch: Option<u64>) {
        *self.inner.epoch.lock().unwrap() = epoch;
    }

    /// When enabled, every read recomputes the payload digest and compares
    /// it with the one recorded at creation.
    pub fn set_verify(&self, on: bool) {
        self.inner.verify.store(on, Ordering::Relaxed);
    }

    /// Current length of `objects.log` on disk.
    pub fn log_len(&self) -> Result<u64> {
        Ok(self.inner.log.metadata()?.len())
    }

    pub fn object_count(&self) -> usize {
        self.inner.index.read().unwrap().entries.len()
    }

    /// All committed identities, sorted.
    pub fn identities(&self) -> Vec<ObjectIdentity> {
        let mut ids: Vec<_> = self.inner.index.read().unwrap().entries.keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Ingests transactions appended by other processes since the last
    /// refresh. Cheap when nothing changed.
    pub fn refresh(&self) -> Result<()> {
        self.refresh_inner().map(|_| ())
    }

    /// Returns whether the log has bytes past the committed end.
    fn refresh_inner(&self) -> Result<bool> {
        let file_len = self.log_len()?;
        let start = self.inner.index.read().unwrap().len;
        if file_len == start {
            return Ok(false);
        }
        let mut index = self.inner.index.write().unwrap();
        let start = index.len;
        if file_len < start {
            return Err(Error::CorruptLog {
                offset: file_len,
                reason: "log shrank below its committed length".into(),
            });
        }
        let mut bytes = vec![0u8; (file_len - start) as usize];
        self.inner.log.read_exact_at(&mut bytes, start)?;
        let Scan {
            txns,
            committed_end,
            torn,
        } = log::scan(&bytes, start)
            .map_err(|ScanError::Corrupt { offset, reason }| Error::CorruptLog { offset, reason })?;
        for txn in txns {
            let at = txn.first().map(|(_, e)| e.offset).unwrap_or(start);
            index
                .apply(txn)
                .map_err(|reason| Error::CorruptLog { offset: at, reason })?;
        }
        index.len = committed_end;
        Ok(torn)
    }

    fn truncate_torn_tail(&self) -> Result<()> {
        let committed = self.inner.index.read().unwrap().len;
        if self.log_len()? > committed {
            self.inner.log.set_len(committed)?;
            self.inner.log.sync_all()?;
        }
        Ok(())
    }

    fn lock_file(&self) -> Result<File> {
        Ok(OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(self.inner.dir.join(LOCK_FILE))?)
    }

    fn read_entry(&self, id: &ObjectIdentity, entry: Entry) -> Result<StoredObject> {
        let total = log::HEADER_LEN + entry.body_len as usize + log::TRAILER_LEN;
        let mut buf = vec![0u8; total];
        self.inner.log.read_exact_at(&mut buf, entry.offset)?;
        let corrupt = |reason: String| Error::CorruptLog {
            offset: entry.offset,
            reason,
        };
        let body = &buf[log::HEADER_LEN..total - log::TRAILER_LEN];
        let crc = u32::from_be_bytes(buf[total - log::TRAILER_LEN..].try_into().unwrap());
        if crc32fast::hash(body) != crc {
            return Err(corrupt("CRC mismatch on read".into()));
        }
        let header = log::parse_object_body(body).map_err(corrupt)?;
        if header.identity != *id {
            return Err(corrupt(format!("record holds {} instead of {id}", header.identity)));
        }
        let payload = Payload::decode(header.payload).map_err(|e| corrupt(e.to_string()))?;
        if self.inner.verify.load(Ordering::Relaxed) && payload.digest() != header.digest {
            return Err(corrupt(format!("digest mismatch for {id}")));
        }
        Ok(StoredObject {
            identity: header.identity,
            payload,
            created_at: header.created_at,
            digest: header.digest,
        })
    }

    /// Starts the single write transaction, blocking until any other writer
    /// (in this or another process) finishes.
    pub fn begin(&self) -> Result<WriteTransaction> {
        {
            let mut busy = self.inner.writer_busy.lock().unwrap();
            while *busy {
                busy = self.inner.writer_cv.wait(busy).unwrap();
            }
            *busy = true;
        }
        let mut guard = WriterGuard {
            store: self.clone(),
            lock: None,
        };
        let lock = self.lock_file()?;
        lock.lock()?;
        guard.lock = Some(lock);
        self.refresh_inner()?;
        self.truncate_torn_tail()?;
        Ok(WriteTransaction {
            store: self.clone(),
            guard: Some(guard),
            pending: Vec::new(),
            pending_ids: HashMap::new(),
            pending_highs: HashMap::new(),
            alias_saves: BTreeMap::new(),
        })
    }

    fn now(&self) -> u64 {
        match *self.inner.epoch.lock().unwrap() {
            Some(e) => e,
            None => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

impl ObjectReader for Store {
    fn get_object(&self, id: &ObjectIdentity) -> Result<StoredObject> {
        let entry = self.inner.index.read().unwrap().entries.get(id).copied();
        match entry {
            Some(entry) => self.read_entry(id, entry),
            None => Err(Error::NotFound(id.clone())),
        }
    }

    fn kind_of(&self, id: &ObjectIdentity) -> Option<Kind> {
        self.inner.index.read().unwrap().entries.get(id).map(|e| e.kind)
    }

    fn latest_key(&self, class: &Name, secondary: Option<&Name>) -> Option<u64> {
        let index = self.inner.index.read().unwrap();
        index.highs.get(&(class.clone(), secondary.cloned())).copied()
    }
}

/// Releases the writer slot on drop.
struct WriterGuard {
    store: Store,
    lock: Option<File>,
}

impl Drop for WriterGuard {
    fn drop(&mut self) {
        if let Some(lock) = self.lock.take() {
            let _ = lock.unlock();
        }
        *self.store.inner.writer_busy.lock().unwrap() = false;
        self.store.inner.writer_cv.notify_one();
    }
}

/// The store's single open write transaction.
///
/// Creations are invisible to every other reader until [`commit`]. Keys are
/// computed against committed state plus earlier creations in this
/// transaction; since no other writer can run concurrently, the keys handed
/// out are exactly those assigned at commit, and an abort leaves no gap.
/// Dropping an open transaction aborts it.
///
/// [`commit`]: WriteTransaction::commit
pub struct WriteTransaction {
    store: Store,
    guard: Option<WriterGuard>,
    pending: Vec<StoredObject>,
    pending_ids: HashMap<ObjectIdentity, usize>,
    pending_highs: HashMap<Series, u64>,
    alias_saves: BTreeMap<String, String>,
}

impl WriteTransaction {
    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn is_open(&self) -> bool {
        self.guard.is_some()
    }

    /// Objects created so far in this transaction, in creation order.
    pub fn pending(&self) -> &[StoredObject] {
        &self.pending
    }

    pub fn create_object(
        &mut self,
        class: &Name,
        secondary: Option<&Name>,
        payload: Payload,
    ) -> Result<ObjectIdentity> {
        if !self.is_open() {
            return Err(Error::TxnClosed);
        }
        let is_runtypes_class = class.as_str() == RUNTYPES_CLASS;
        match payload.kind() {
            Kind::RunTypes if !is_runtypes_class || secondary.is_some() => {
                return Err(Error::InvalidPayload(format!(
                    "run-type maps must use class {RUNTYPES_CLASS} with no secondary key"
                )));
            }
            Kind::Leaf | Kind::Map if class.as_str().starts_with('@') => {
                return Err(Error::InvalidPayload(format!("class {class:?} is reserved")));
            }
            _ => {}
        }
        if let Some(links) = payload.links() {
            for target in links.values() {
                match self.kind_of(target) {
                    None => return Err(Error::DanglingLink(target.clone())),
                    Some(k) if payload.kind() == Kind::RunTypes && k != Kind::Map => {
                        return Err(Error::NotAMap(target.to_string()));
                    }
                    _ => {}
                }
            }
        }

        let series = (class.clone(), secondary.cloned());
        let key = self.latest_key(class, secondary).unwrap_or(0) + 1;
        let identity = ObjectIdentity::new(
            class.clone(),
            secondary.cloned(),
            std::num::NonZeroU64::new(key).unwrap(),
        );
        self.pending_highs.insert(series, key);
        self.pending_ids.insert(identity.clone(), self.pending.len());
        self.pending.push(StoredObject {
            identity: identity.clone(),
            digest: payload.digest(),
            payload,
            created_at: self.store.now(),
        });
        Ok(identity)
    }

    /// Queues a full rewrite of one alias tree entry, applied after the log
    /// commit.
    pub(crate) fn stage_alias_save(&mut self, name: &str, text: String) {
        self.alias_saves.insert(name.to_string(), text);
    }

    pub(crate) fn staged_alias(&self, name: &str) -> Option<&str> {
        self.alias_saves.get(name).map(String::as_str)
    }

    /// Makes every pending creation durable and visible atomically.
    /// Returns the identities created.
    pub fn commit(mut self) -> Result<Vec<ObjectIdentity>> {
        if !self.is_open() {
            return Err(Error::TxnClosed);
        }
        let created: Vec<ObjectIdentity> = self.pending.iter().map(|o| o.identity.clone()).collect();
        if !self.pending.is_empty() {
            self.append_pending()?;
        }
        if !self.alias_saves.is_empty() {
            let saves = std::mem::take(&mut self.alias_saves);
            crate::alias::apply_saves(self.store.dir(), &saves)?;
        }
        self.guard = None;
        Ok(created)
    }

    fn append_pending(&mut self) -> Result<()> {
        let inner = &self.store.inner;
        let base = inner.index.read().unwrap().len;
        let mut buf = Vec::new();
        let mut entries = Vec::with_capacity(self.pending.len());
        for obj in &self.pending {
            let body = log::object_body(&obj.identity, obj.created_at, &obj.digest, &obj.payload.encode());
            entries.push((
                obj.identity.clone(),
                Entry {
                    offset: base + buf.len() as u64,
                    body_len: body.len() as u32,
                    kind: obj.kind(),
                },
            ));
            log::frame(log::REC_OBJECT, &body, &mut buf);
        }
        log::frame(log::REC_COMMIT, &(self.pending.len() as u32).to_be_bytes(), &mut buf);

        if let Err(e) = write_log(&inner.log, &buf).and_then(|_| inner.log.sync_data()) {
            // Leave the store in its pre-commit state.
            let _ = inner.log.set_len(base);
            self.guard = None;
            return Err(e.into());
        }
        let mut index = inner.index.write().unwrap();
        index
            .apply(entries)
            .map_err(|reason| Error::CorruptLog { offset: base, reason })?;
        index.len = base + buf.len() as u64;
        Ok(())
    }

    /// Discards all pending creations and releases the writer lock.
    pub fn abort(mut self) {
        self.guard = None;
    }
}

fn write_log(mut file: &File, buf: &[u8]) -> std::io::Result<()> {
    let delay = std::env::var(SLOW_COMMIT_ENV).ok().and_then(|v| v.parse::<u64>().ok());
    match delay {
        None => file.write_all(buf),
        Some(us) => {
            for chunk in buf.chunks(64) {
                file.write_all(chunk)?;
                std::thread::sleep(Duration::from_micros(us));
            }
            Ok(())
        }
    }
}

impl ObjectReader for WriteTransaction {
    fn get_object(&self, id: &ObjectIdentity) -> Result<StoredObject> {
        match self.pending_ids.get(id) {
            Some(&i) => Ok(self.pending[i].clone()),
            None => self.store.get_object(id),
        }
    }

    fn kind_of(&self, id: &ObjectIdentity) -> Option<Kind> {
        match self.pending_ids.get(id) {
            Some(&i) => Some(self.pending[i].kind()),
            None => self.store.kind_of(id),
        }
    }

    fn latest_key(&self, class: &Name, secondary: Option<&Name>) -> Option<u64> {
        let series = (class.clone(), secondary.cloned());
        self.pending_highs
            .get(&series)
            .copied()
            .or_else(|| self.store.latest_key(class, secondary))
    }
}
