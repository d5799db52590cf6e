//! A versioned configuration database.
//!
//! Configuration objects are immutable and identified by
//! `Class:Secondary[Key]`. Maps link objects into trees, a reserved
//! `@runtypes` map binds run types to tree roots, and mutable alias trees are
//! committed into new numeric trees by rebuilding only the maps on changed
//! paths.
//!
//! Module overview:
//!
//! - [`model`]: identities, payload values and their canonical text encoding.
//! - [`store`]: append-only object log with single-writer transactions.
//! - [`tree`]: path lookup, tree manifests and run-type activation.
//! - [`alias`]: editable alias trees and their side file.
//! - [`commit`]: alias vs numeric diff and minimal rebuild.
//! - [`service`]: read-only line protocol server.
//! - [`client`]: proxy dictionary and tree handles for DAQ clients.

pub mod alias;
pub mod client;
pub mod commit;
mod error;
pub mod model;
pub mod service;
pub mod store;
pub mod tree;

pub use error::{Error, Result};
pub use model::{Digest, Kind, Name, ObjectIdentity, Payload, Value};
pub use store::{ObjectReader, Store, StoredObject, WriteTransaction};
