//! Record framing for `objects.log`.
//!
//! ```text
//! +-------+------+-------------+--------------+-------------+
//! | magic | type | body length | body         | CRC-32      |
//! | 0xC7  | u8   | u32 BE      | length bytes | u32 BE      |
//! +-------+------+-------------+--------------+-------------+
//! ```
//!
//! Object bodies are `identity\ncreated_at\ndigest-hex\n` followed by the
//! canonical payload. A commit record's body is the u32 BE count of object
//! records in its transaction, which immediately precede it.

use crate::model::{Digest, Kind, ObjectIdentity};

pub(crate) const MAGIC: u8 = 0xC7;
pub(crate) const REC_OBJECT: u8 = 1;
pub(crate) const REC_COMMIT: u8 = 2;
pub(crate) const HEADER_LEN: usize = 6;
pub(crate) const TRAILER_LEN: usize = 4;

pub(crate) fn frame(kind: u8, body: &[u8], out: &mut Vec<u8>) {
    out.push(MAGIC);
    out.push(kind);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    out.extend_from_slice(&crc32fast::hash(body).to_be_bytes());
}

pub(crate) fn object_body(id: &ObjectIdentity, created_at: u64, digest: &Digest, payload: &[u8]) -> Vec<u8> {
    let mut body = format!("{id}\n{created_at}\n{}\n", digest.to_hex()).into_bytes();
    body.extend_from_slice(payload);
    body
}

/// The bookkeeping lines of an object body plus the payload bytes.
pub(crate) struct ObjectHeader<'a> {
    pub identity: ObjectIdentity,
    pub created_at: u64,
    pub digest: Digest,
    pub payload: &'a [u8],
}

pub(crate) fn parse_object_body(body: &[u8]) -> Result<ObjectHeader<'_>, String> {
    let mut rest = body;
    let mut line = || -> Result<&str, String> {
        let nl = rest.iter().position(|&b| b == b'\n').ok_or("truncated object header")?;
        let (l, r) = rest.split_at(nl);
        rest = &r[1..];
        std::str::from_utf8(l).map_err(|_| "header is not UTF-8".to_string())
    };
    let identity = ObjectIdentity::parse(line()?).map_err(|e| e.to_string())?;
    let created_at = line()?.parse().map_err(|_| "bad created_at")?;
    let digest = Digest::from_hex(line()?).ok_or("bad digest")?;
    Ok(ObjectHeader {
        identity,
        created_at,
        digest,
        payload: rest,
    })
}

fn payload_kind(payload: &[u8]) -> Option<Kind> {
    let end = payload.iter().position(|&b| b == b'\n')?;
    let line = std::str::from_utf8(&payload[..end]).ok()?;
    Kind::parse(line.strip_prefix("kind=")?)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Entry {
    /// Absolute file offset of the record's first (magic) byte.
    pub offset: u64,
    pub body_len: u32,
    pub kind: Kind,
}

pub(crate) struct Scan {
    /// Committed transactions in log order.
    pub txns: Vec<Vec<(ObjectIdentity, Entry)>>,
    /// Absolute offset just past the last commit record.
    pub committed_end: u64,
    /// Bytes after `committed_end` exist but do not form a committed
    /// transaction.
    pub torn: bool,
}

pub(crate) enum ScanError {
    Corrupt { offset: u64, reason: String },
}

/// Parses `bytes`, which start at absolute offset `base`.
///
/// A damaged record that runs to the end of the buffer, or complete records
/// with no commit record after them, form a torn tail. Damage followed by
/// more data is corruption.
pub(crate) fn scan(bytes: &[u8], base: u64) -> Result<Scan, ScanError> {
    let mut txns = Vec::new();
    let mut pending: Vec<(ObjectIdentity, Entry)> = Vec::new();
    let mut pos = 0usize;
    let mut committed = 0usize;
    let corrupt = |at: usize, reason: String| ScanError::Corrupt {
        offset: base + at as u64,
        reason,
    };

    let torn = loop {
        let rest = &bytes[pos..];
        if rest.is_empty() {
            break !pending.is_empty();
        }
        if rest[0] != MAGIC || rest.get(1).is_some_and(|&t| t != REC_OBJECT && t != REC_COMMIT) {
            if rest.iter().all(|&b| b == 0) {
                break true;
            }
            return Err(corrupt(pos, "bad record header".into()));
        }
        if rest.len() < HEADER_LEN {
            break true;
        }
        let body_len = u32::from_be_bytes(rest[2..6].try_into().unwrap()) as usize;
        let total = HEADER_LEN + body_len + TRAILER_LEN;
        if rest.len() < total {
            break true;
        }
        let body = &rest[HEADER_LEN..HEADER_LEN + body_len];
        let crc = u32::from_be_bytes(rest[HEADER_LEN + body_len..total].try_into().unwrap());
        if crc32fast::hash(body) != crc {
            if rest.len() == total {
                break true;
            }
            return Err(corrupt(pos, "CRC mismatch".into()));
        }
        match rest[1] {
            REC_OBJECT => {
                let header = parse_object_body(body).map_err(|e| corrupt(pos, e))?;
                let kind = payload_kind(header.payload).ok_or_else(|| corrupt(pos, "bad payload kind".into()))?;
                pending.push((
                    header.identity,
                    Entry {
                        offset: base + pos as u64,
                        body_len: body_len as u32,
                        kind,
                    },
                ));
            }
            _ => {
                let count = body
                    .try_into()
                    .map(u32::from_be_bytes)
                    .map_err(|_| corrupt(pos, "bad commit record".into()))?;
                if count as usize != pending.len() {
                    return Err(corrupt(
                        pos,
                        format!("commit covers {count} records, found {}", pending.len()),
                    ));
                }
                txns.push(std::mem::take(&mut pending));
                committed = pos + total;
            }
        }
        pos += total;
    };

    Ok(Scan {
        txns,
        committed_end: base + committed as u64,
        torn,
    })
}
