//! Natural-language question answering over metabolomics knowledge graphs.
//!
//! A fixed graph of LLM-backed agents classifies and validates a question,
//! resolves the entities it mentions, generates and executes a SPARQL query,
//! and composes an answer with full provenance in the session trace.

pub mod llm;
pub mod prompts;
pub mod resolvers;
pub mod scenarios;
pub mod setup;
pub mod similarity;
pub mod sparql;
pub mod wikidata;
pub mod agents;
pub mod interp;
