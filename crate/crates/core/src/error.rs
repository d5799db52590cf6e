use std::io;

use crate::model::ObjectIdentity;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the database can report.
///
/// [`Error::code`] gives the stable kebab-case name used on the wire and in
/// CLI messages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed identity: {0}")]
    MalformedIdentity(String),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("invalid name: {0:?}")]
    InvalidName(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),

    #[error("object not found: {0}")]
    NotFound(ObjectIdentity),
    #[error("dangling link to {0}")]
    DanglingLink(ObjectIdentity),
    #[error("transaction is closed")]
    TxnClosed,
    #[error("corrupt log at offset {offset}: {reason}")]
    CorruptLog { offset: u64, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),

    /// `resolved` is the deepest path prefix that did resolve.
    #[error("no link {segment:?} under {resolved:?}")]
    NoSuchLink { resolved: String, segment: String },
    #[error("{0} is not a map")]
    NotAMap(String),
    #[error("tree depth exceeds {0}")]
    DepthExceeded(usize),
    #[error("no active run type map")]
    NoActiveMap,
    #[error("unknown run type {0:?}")]
    UnknownRunType(String),

    #[error("no alias node at {0:?}")]
    NoSuchNode(String),
    #[error("duplicate name {0:?}")]
    DuplicateName(String),
    #[error("{0:?} is not a map alias")]
    NotAMapAlias(String),
    #[error("{0:?} is a map alias")]
    NameIsMapAlias(String),
    #[error("cannot remove the root of an alias tree")]
    CannotRemoveRoot,
    #[error("no alias tree named {0:?}")]
    NoSuchAlias(String),
    #[error("alias target {0} does not exist")]
    DanglingAliasTarget(ObjectIdentity),
    #[error("malformed alias file: {0}")]
    MalformedAlias(String),

    #[error("decoder already registered for class {0:?}")]
    DuplicateRegistration(String),
    #[error("no proxy registered for class {0:?}")]
    NoProxy(String),
    #[error("decoded object has an unexpected type for class {0:?}")]
    WrongType(String),
    #[error("decode failed: {0}")]
    Decode(String),
    #[error("connection failure: {0}")]
    ConnectionFailure(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    /// An `ERR` response that maps to none of the variants above.
    #[error("server error {status} {code}: {detail}")]
    Server { status: u16, code: String, detail: String },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedIdentity(_) => "malformed-identity",
            Error::MalformedPayload(_) => "malformed-payload",
            Error::InvalidName(_) => "invalid-name",
            Error::InvalidPayload(_) => "invalid-payload",
            Error::NotFound(_) => "not-found",
            Error::DanglingLink(_) => "dangling-link",
            Error::TxnClosed => "txn-closed",
            Error::CorruptLog { .. } => "corrupt-log",
            Error::Io(_) => "io-error",
            Error::NoSuchLink { .. } => "no-such-link",
            Error::NotAMap(_) => "not-a-map",
            Error::DepthExceeded(_) => "depth-exceeded",
            Error::NoActiveMap => "no-active-map",
            Error::UnknownRunType(_) => "unknown-run-type",
            Error::NoSuchNode(_) => "no-such-node",
            Error::DuplicateName(_) => "duplicate-name",
            Error::NotAMapAlias(_) => "not-a-map-alias",
            Error::NameIsMapAlias(_) => "name-is-map-alias",
            Error::CannotRemoveRoot => "cannot-remove-root",
            Error::NoSuchAlias(_) => "no-such-alias",
            Error::DanglingAliasTarget(_) => "dangling-alias-target",
            Error::MalformedAlias(_) => "malformed-alias",
            Error::DuplicateRegistration(_) => "duplicate-registration",
            Error::NoProxy(_) => "no-proxy",
            Error::WrongType(_) => "wrong-type",
            Error::Decode(_) => "decode-error",
            Error::ConnectionFailure(_) => "connection-failure",
            Error::Protocol(_) => "protocol-error",
            Error::Server { .. } => "server-error",
        }
    }
}
