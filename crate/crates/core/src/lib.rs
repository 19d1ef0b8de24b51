//! Validation-gated repair controller around a frozen code generator.
//!
//! A candidate is accepted only when the fail-fast validator (and an optional
//! veto judge) says so. Episodic memory, the retrieval bandit, skills and
//! repair guidance only shape what the generator sees next.

pub mod analyzer;
pub mod bandit;
pub mod config;
pub mod credit;
pub mod error;
pub mod exec;
pub mod grace;
pub mod harness;
pub mod jsonl;
pub mod memory;
pub mod orchestrator;
pub mod reward;
pub mod skills;
pub mod task;
pub mod validator;

pub use error::{Error, Result};
