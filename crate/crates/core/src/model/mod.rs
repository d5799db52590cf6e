//! Identities, payloads, values and their canonical text encoding.
//!
//! The canonical payload text is the single source of truth for digests,
//! log records, `--from` files and the wire protocol:
//!
//! ```text
//! kind=leaf
//! hv=f:0x1.c2p+10
//! thresholds=i[10,20,30]
//! ```

mod identity;
mod payload;
mod value;

pub use identity::{parse_series, Name, ObjectIdentity};
pub use payload::{map_payload, Digest, Kind, LeafBuilder, Payload};
pub use value::{format_hex_float, parse_hex_float, Value};
