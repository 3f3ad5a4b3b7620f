//! PrivFusion: privacy-preserving federated schema harmonization.
//!
//! Sites hold tabular datasets they cannot share. Each site extracts
//! privacy-safe metadata (schema descriptors, semantic annotations, topics,
//! relationships, synthetic samples), an outbound gate verifies nothing raw
//! leaks, and an aggregation server clusters semantically equivalent
//! features across sites and sends back transformation plans. Sites apply
//! the plans locally and resubmit; the loop stops when every schema is
//! canonical or the iteration cap is reached.
//!
//! Every analysis role is a pluggable agent with a deterministic baseline
//! and an optional LLM-backed implementation ([`llm`]).

pub mod agents;
pub mod aggregator;
pub mod analyzer;
pub mod engine;
pub mod gate;
pub mod llm;
pub mod metrics;
pub mod ontology;
pub mod protocol;
pub mod table;
