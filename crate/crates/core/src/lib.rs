//! Human-in-the-loop annotation of political speeches: corpus ingestion,
//! LLM prompting, expert review, accuracy metrics and chart data.

pub mod classify;
pub mod clock;
pub mod config;
pub mod corpus;
pub mod error;
pub mod jobs;
pub mod metrics;
pub mod pipeline;
pub mod prompting;
pub mod provider;
pub mod review;
pub mod store;
pub mod vizdata;

pub use error::{Error, ErrorEnvelope, Result};

/// Version stamped into every stored record and emitted document.
pub const SCHEMA_VERSION: u32 = 1;
