//! Core of the master patient index: identity types, the HL7 v2 codec,
//! probabilistic record linkage and the merge-aware registry state.

pub mod hl7;
pub mod identity;
pub mod matching;
pub mod merge;
pub mod registry;
pub mod simulate;
