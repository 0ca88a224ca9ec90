//! A relaxed-memory laboratory: C20 execution graphs and their derived
//! relations, exhaustive litmus enumeration, re-execution constructibility
//! (YC20/XC20), tied-resource atomic specifications, and an interleaving
//! operational semantics with a configuration-correspondence checker.

pub mod exec_graph;
pub mod relations;
pub mod tied;
pub mod arc;
pub mod lang;
pub mod enumerate;
pub mod xmm;
pub mod opsem;
