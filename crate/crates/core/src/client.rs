//! Client side of the configure transition.
//!
//! Run control calls [`configure_run`] to resolve a run type once; the
//! returned [`TreeHandle`] pins that tree's identity, and each process
//! fetches its objects by path. A [`ProxyDictionary`] turns fetched payloads
//! into application types, picked by the class name of the returned object.

use std::any::Any;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Arc;

use crate::model::{Name, ObjectIdentity, Payload};
use crate::tree::TreePath;
use crate::{Error, Result};

type Decoder = dyn Fn(&Payload) -> Result<Box<dyn Any + Send>> + Send + Sync;

/// Registry of class name -> decoder.
#[derive(Default, Clone)]
pub struct ProxyDictionary {
    decoders: HashMap<Name, Arc<Decoder>>,
}

impl ProxyDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_proxy<T, F>(&mut self, class_name: &str, decoder: F) -> Result<()>
    where
        T: Any + Send,
        F: Fn(&Payload) -> Result<T> + Send + Sync + 'static,
    {
        let class = Name::new(class_name)?;
        if self.decoders.contains_key(&class) {
            return Err(Error::DuplicateRegistration(class_name.to_string()));
        }
        self.decoders.insert(
            class,
            Arc::new(move |p: &Payload| decoder(p).map(|t| Box::new(t) as Box<dyn Any + Send>)),
        );
        Ok(())
    }

    pub fn is_registered(&self, class_name: &str) -> bool {
        self.decoders.contains_key(class_name)
    }

    pub fn decode(&self, id: &ObjectIdentity, payload: &Payload) -> Result<Box<dyn Any + Send>> {
        let decoder = self
            .decoders
            .get(id.class().as_str())
            .ok_or_else(|| Error::NoProxy(id.class().to_string()))?;
        decoder(payload)
    }
}

/// One protocol connection.
pub struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Connection {
    pub fn connect(endpoint: impl ToSocketAddrs) -> Result<Connection> {
        let stream = TcpStream::connect(endpoint).map_err(|e| Error::ConnectionFailure(e.to_string()))?;
        stream.set_nodelay(true).ok();
        let writer = stream
            .try_clone()
            .map_err(|e| Error::ConnectionFailure(e.to_string()))?;
        Ok(Connection {
            reader: BufReader::new(stream),
            writer,
        })
    }

    fn read_line(&mut self) -> Result<String> {
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| Error::ConnectionFailure(e.to_string()))?;
        if n == 0 || !line.ends_with('\n') {
            return Err(Error::ConnectionFailure("connection closed".into()));
        }
        line.pop();
        Ok(line)
    }

    /// Sends one request and returns the text after `OK `.
    fn request(&mut self, line: &str) -> Result<String> {
        self.writer
            .write_all(format!("{line}\n").as_bytes())
            .map_err(|e| Error::ConnectionFailure(e.to_string()))?;
        let status = self.read_line()?;
        if let Some(rest) = status.strip_prefix("OK ") {
            return Ok(rest.to_string());
        }
        let rest = status
            .strip_prefix("ERR ")
            .ok_or_else(|| Error::Protocol(format!("unexpected status line {status:?}")))?;
        let mut parts = rest.splitn(3, ' ');
        let code_num = parts.next().unwrap_or_default().parse().unwrap_or(0);
        let code = parts.next().unwrap_or_default().to_string();
        let detail = parts.next().unwrap_or_default().to_string();
        Err(server_error(code_num, code, detail))
    }

    /// Lines up to the terminating `.` line.
    fn read_body(&mut self) -> Result<Vec<String>> {
        let mut lines = Vec::new();
        loop {
            let line = self.read_line()?;
            if line == "." {
                return Ok(lines);
            }
            lines.push(line);
        }
    }

    pub fn ping(&mut self) -> Result<()> {
        match self.request("PING")?.as_str() {
            "pong" => Ok(()),
            other => Err(Error::Protocol(format!("unexpected ping reply {other:?}"))),
        }
    }

    pub fn resolve(&mut self, run_type: &str) -> Result<ObjectIdentity> {
        let id = self.request(&format!("RESOLVE {run_type}"))?;
        ObjectIdentity::parse(&id).map_err(|e| Error::Protocol(e.to_string()))
    }

    pub fn get(&mut self, root: &ObjectIdentity, path: &TreePath) -> Result<(ObjectIdentity, Payload)> {
        let id = self
            .request(&format!("GET {root} {}", path.display_root_slash()))
            .map_err(|e| fill_segment(e, path))?;
        let id = ObjectIdentity::parse(&id).map_err(|e| Error::Protocol(e.to_string()))?;
        let mut text = String::new();
        for line in self.read_body()? {
            text.push_str(&line);
            text.push('\n');
        }
        let payload = Payload::decode(text.as_bytes()).map_err(|e| Error::Protocol(e.to_string()))?;
        Ok((id, payload))
    }

    pub fn manifest(&mut self, root: &ObjectIdentity) -> Result<Vec<(TreePath, ObjectIdentity)>> {
        self.request(&format!("MANIFEST {root}"))?;
        self.read_body()?
            .iter()
            .map(|line| {
                let (path, id) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::Protocol(format!("bad manifest line {line:?}")))?;
                let path = TreePath::parse(path).map_err(|e| Error::Protocol(e.to_string()))?;
                let id = ObjectIdentity::parse(id).map_err(|e| Error::Protocol(e.to_string()))?;
                Ok((path, id))
            })
            .collect()
    }

    pub fn runtypes(&mut self) -> Result<Vec<(String, ObjectIdentity)>> {
        self.request("RUNTYPES")?;
        self.read_body()?
            .iter()
            .map(|line| {
                let (rt, id) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::Protocol(format!("bad runtypes line {line:?}")))?;
                let id = ObjectIdentity::parse(id).map_err(|e| Error::Protocol(e.to_string()))?;
                Ok((rt.to_string(), id))
            })
            .collect()
    }
}

fn server_error(status: u16, code: String, detail: String) -> Error {
    match code.as_str() {
        "not-found" => match ObjectIdentity::parse(&detail) {
            Ok(id) => Error::NotFound(id),
            Err(_) => Error::Server { status, code, detail },
        },
        "no-such-link" => Error::NoSuchLink {
            resolved: detail,
            segment: String::new(),
        },
        "not-a-map" => Error::NotAMap(detail),
        "unknown-run-type" => Error::UnknownRunType(detail),
        "no-active-map" => Error::NoActiveMap,
        _ => Error::Server { status, code, detail },
    }
}

/// The server reports only the resolved prefix; the failing segment is the
/// next one in the requested path.
fn fill_segment(e: Error, path: &TreePath) -> Error {
    match e {
        Error::NoSuchLink { resolved, .. } => {
            let depth = if resolved == "/" {
                0
            } else {
                resolved.split('/').count()
            };
            let segment = path.segments().get(depth).map(|s| s.to_string()).unwrap_or_default();
            Error::NoSuchLink { resolved, segment }
        }
        other => other,
    }
}

/// A connection pinned to one resolved tree.
pub struct TreeHandle {
    conn: Connection,
    root: ObjectIdentity,
}

/// Resolves `run_type` and returns a handle on the resulting tree.
pub fn configure_run(endpoint: impl ToSocketAddrs, run_type: &str) -> Result<TreeHandle> {
    let mut conn = Connection::connect(endpoint)?;
    let root = conn.resolve(run_type)?;
    Ok(TreeHandle { conn, root })
}

impl TreeHandle {
    /// Opens a handle on a tree identity distributed by run control.
    pub fn open(endpoint: impl ToSocketAddrs, root: ObjectIdentity) -> Result<TreeHandle> {
        Ok(TreeHandle {
            conn: Connection::connect(endpoint)?,
            root,
        })
    }

    pub fn root(&self) -> &ObjectIdentity {
        &self.root
    }

    pub fn fetch_raw(&mut self, path: &str) -> Result<(ObjectIdentity, Payload)> {
        let path = TreePath::parse(path)?;
        self.conn.get(&self.root, &path)
    }

    pub fn fetch_object(&mut self, dict: &ProxyDictionary, path: &str) -> Result<Box<dyn Any + Send>> {
        let (id, payload) = self.fetch_raw(path)?;
        dict.decode(&id, &payload)
    }

    /// [`fetch_object`](Self::fetch_object) downcast to `T`.
    pub fn fetch<T: Any>(&mut self, dict: &ProxyDictionary, path: &str) -> Result<T> {
        let (id, payload) = self.fetch_raw(path)?;
        dict.decode(&id, &payload)?
            .downcast::<T>()
            .map(|b| *b)
            .map_err(|_| Error::WrongType(id.class().to_string()))
    }

    pub fn manifest(&mut self) -> Result<Vec<(TreePath, ObjectIdentity)>> {
        let root = self.root.clone();
        self.conn.manifest(&root)
    }
}
