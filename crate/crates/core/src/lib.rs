//! Source discovery, deep-web wrapping and relational integration.
//!
//! The pipeline turns a natural-language data request into a joined table:
//!
//! 1. [`query`] reformulates the request, expands it against the literature
//!    [`corpus`], and extracts keywords for [`keyword`] search.
//! 2. [`resources`] merges and re-ranks candidate papers, then asks the
//!    [`assistant`] which data sources they describe.
//! 3. [`wrapper`] turns each source (downloadable file, HTML table or search
//!    form) into a [`table::DataTable`], or reuses a stored [`process`]
//!    description.
//! 4. [`bioflow`] compiles and executes an extract/select query that joins the
//!    per-source tables.
//!
//! [`engine`] orchestrates whole runs (automatic or guided) and [`eval`]
//! computes retrieval metrics.

pub mod assistant;
pub mod bioflow;
pub mod corpus;
pub mod dsl;
pub mod engine;
pub mod eval;
pub mod keyword;
pub mod process;
pub mod query;
pub mod resources;
pub mod schema;
pub mod table;
pub mod text;
pub mod wrapper;

pub use corpus::{CorpusIndex, Document, EmbeddingVector};
pub use table::DataTable;
