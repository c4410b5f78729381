//! A compositional symbolic-execution verifier for an annotated Rust-like
//! mini-IR with separation logic, lifetime tokens, guarded borrow
//! predicates, and parametric prophecy variables.

pub mod asn;
pub mod assertion;
pub mod borrows;
pub mod config;
pub mod diag;
pub mod heap;
pub mod lifetime;
pub mod preds;
pub mod prophecy;
pub mod solver;
pub mod state;
pub mod term;
pub mod types;
