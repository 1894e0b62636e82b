//! Allocation-only core of the AutoMT metamorphic-testing engine.
//!
//! Everything here is pure: the ontology and the Gherkin relation grammar,
//! self-check scoring, retrieval ranking, scene representations, follow-up
//! planning, validity metrics, the variance-band violation oracle, and the
//! statistics used to compare runs. IO, model backends and the command line
//! live in the `automt` crate.
//!
//! The crate is `#![no_std]` and only needs `alloc`.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod canon;
pub mod followup;
pub mod hashing;
pub mod mr;
pub mod ontology;
pub mod oracle;
pub mod prompts;
pub mod retrieval;
pub mod scene;
pub mod selfcheck;
pub mod stats;
pub mod validation;

pub use mr::{MetamorphicRelation, MrError, DEFAULT_SYSTEM_NAME};
pub use ontology::{Category, ManipulationTarget, OntologyError, Presence, Slot, Taxonomy, Verb};
