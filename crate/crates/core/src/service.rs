//! Read-only line protocol server for DAQ clients.
//!
//! One request per line, one response frame per request:
//!
//! ```text
//! PING                      -> OK pong
//! RESOLVE <runtype>         -> OK <identity>
//! GET <identity> <path|/>   -> OK <identity>, payload lines, "."
//! MANIFEST <identity>       -> OK <count>, <path>\t<identity> lines, "."
//! RUNTYPES                  -> OK <count>, <runtype>\t<identity> lines, "."
//! ```
//!
//! Failures are `ERR <status> <code> <detail>` and never close the
//! connection.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::model::ObjectIdentity;
use crate::store::{ObjectReader, Store};
use crate::tree::{self, TreePath};
use crate::Error;

/// Longest accepted request line.
const MAX_LINE: u64 = 64 * 1024;

/// A parsed request line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Request {
    Ping,
    Resolve(String),
    Get(ObjectIdentity, TreePath),
    Manifest(ObjectIdentity),
    RunTypes,
}

/// Error reply: HTTP-like status plus the error code string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrReply {
    pub status: u16,
    pub code: String,
    pub detail: String,
}

impl ErrReply {
    fn bad_request(code: &str, detail: impl Into<String>) -> Self {
        ErrReply {
            status: 400,
            code: code.to_string(),
            detail: detail.into(),
        }
    }

    pub fn to_line(&self) -> String {
        format!("ERR {} {} {}\n", self.status, self.code, self.detail)
    }
}

impl From<Error> for ErrReply {
    fn from(e: Error) -> Self {
        let (status, detail) = match &e {
            Error::NotFound(id) => (404, id.to_string()),
            Error::NoSuchLink { resolved, .. } => (404, resolved.clone()),
            Error::NotAMap(what) => (404, what.clone()),
            Error::UnknownRunType(rt) => (404, rt.clone()),
            Error::NoActiveMap => (404, "-".to_string()),
            Error::MalformedIdentity(_) | Error::InvalidName(_) => (400, e.to_string()),
            _ => (500, e.to_string()),
        };
        ErrReply {
            status,
            code: e.code().to_string(),
            detail: detail.replace('\n', " "),
        }
    }
}

pub fn parse_request<'a>(line: &'a str) -> Result<Request, ErrReply> {
    let (verb, args) = match line.split_once(' ') {
        Some((v, a)) => (v, Some(a)),
        None => (line, None),
    };
    let need = |args: Option<&'a str>| -> Result<&'a str, ErrReply> {
        args.filter(|a| !a.is_empty())
            .ok_or_else(|| ErrReply::bad_request("missing-argument", verb))
    };
    let identity = |text: &str| {
        ObjectIdentity::parse(text).map_err(|e| ErrReply::bad_request("malformed-identity", e.to_string()))
    };
    match verb {
        "PING" if args.is_none() => Ok(Request::Ping),
        "RUNTYPES" if args.is_none() => Ok(Request::RunTypes),
        "RESOLVE" => Ok(Request::Resolve(need(args)?.to_string())),
        "MANIFEST" => Ok(Request::Manifest(identity(need(args)?)?)),
        "GET" => {
            let args = need(args)?;
            // Identities end at their first ']'.
            let end = args
                .find(']')
                .ok_or_else(|| ErrReply::bad_request("malformed-identity", args))?;
            let id = identity(&args[..=end])?;
            let path = args[end + 1..]
                .strip_prefix(' ')
                .ok_or_else(|| ErrReply::bad_request("missing-argument", "GET path"))?;
            let path = TreePath::parse(path).map_err(|_| ErrReply::bad_request("malformed-path", path))?;
            Ok(Request::Get(id, path))
        }
        "PING" | "RUNTYPES" => Err(ErrReply::bad_request("unexpected-argument", verb)),
        _ => Err(ErrReply::bad_request("unknown-verb", verb)),
    }
}

/// Produces the full response frame for one request line.
pub fn handle_request(reader: &impl ObjectReader, line: &str) -> String {
    match parse_request(line).and_then(|req| respond(reader, req).map_err(ErrReply::from)) {
        Ok(body) => body,
        Err(e) => e.to_line(),
    }
}

fn respond(reader: &impl ObjectReader, req: Request) -> Result<String, Error> {
    Ok(match req {
        Request::Ping => "OK pong\n".to_string(),
        Request::Resolve(rt) => format!("OK {}\n", tree::resolve_run_type(reader, &rt)?),
        Request::Get(root, path) => {
            let obj = tree::lookup_path(reader, &root, &path)?;
            format!("OK {}\n{}.\n", obj.identity, obj.payload.encode_string())
        }
        Request::Manifest(root) => {
            let m = tree::walk_tree(reader, &root)?;
            format!("OK {}\n{}.\n", m.entries.len(), m.to_text())
        }
        Request::RunTypes => {
            let bindings = tree::active_trees(reader)?;
            let mut out = format!("OK {}\n", bindings.len());
            for (rt, id) in bindings {
                out.push_str(&format!("{rt}\t{id}\n"));
            }
            out.push_str(".\n");
            out
        }
    })
}

/// A bound listener. [`Server::spawn`] runs it on a background thread.
pub struct Server {
    listener: TcpListener,
    store: Store,
}

impl Server {
    pub fn bind(store: Store, addr: impl ToSocketAddrs) -> io::Result<Server> {
        Ok(Server {
            listener: TcpListener::bind(addr)?,
            store,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until the process exits.
    pub fn run(self) -> io::Result<()> {
        let stop = Arc::new(AtomicBool::new(false));
        self.accept_loop(&stop)
    }

    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::spawn(move || {
            let _ = self.accept_loop(&flag);
        });
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    fn accept_loop(&self, stop: &AtomicBool) -> io::Result<()> {
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(conn) = conn else { continue };
            let store = self.store.clone();
            std::thread::spawn(move || {
                let _ = serve_connection(&store, conn);
            });
        }
        Ok(())
    }
}

fn serve_connection(store: &Store, conn: TcpStream) -> io::Result<()> {
    conn.set_nodelay(true)?;
    let mut writer = conn.try_clone()?;
    let mut reader = BufReader::new(conn);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = io::Read::take(&mut reader, MAX_LINE).read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Ok(());
        }
        if buf.last() != Some(&b'\n') {
            if n as u64 >= MAX_LINE {
                writer.write_all(ErrReply::bad_request("line-too-long", "-").to_line().as_bytes())?;
                return Ok(());
            }
            // Final line without LF: still answer it.
        } else {
            buf.pop();
        }
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
        let response = match std::str::from_utf8(&buf) {
            Ok(line) => {
                if let Err(e) = store.refresh() {
                    ErrReply::from(e).to_line()
                } else {
                    handle_request(store, line)
                }
            }
            Err(_) => ErrReply::bad_request("malformed-request", "not UTF-8").to_line(),
        };
        writer.write_all(response.as_bytes())?;
    }
}

/// Stops the accept loop on [`ServerHandle::shutdown`] or drop. Open
/// connections finish on their own threads.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if let Some(t) = self.thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            // Wake the blocking accept.
            let _ = TcpStream::connect(self.addr);
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}
