//! SOP-guided multi-agent root cause analysis for microservice incidents.
//!
//! The crate bundles a knowledge base of SOPs and historical incidents, a
//! deterministic fault-injection sandbox, the tool registry agents act
//! through, the multi-agent episode engine and the evaluation harness.

pub mod agents;
pub mod config;
pub mod eval;
pub mod kb;
pub mod llm;
pub mod sandbox;
pub mod tools;
