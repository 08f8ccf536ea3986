//! Operator tooling for the master patient index: synthetic corpora,
//! loading, dedup scans, linkage evaluation and client management.

pub mod clients;
pub mod corpus;
pub mod eval;
pub mod load;
pub mod names;
pub mod pipeline;
pub mod remote;
