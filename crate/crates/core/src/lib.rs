//! Evaluation toolkit for comparing physician-authored and model-generated
//! medical answers.
//!
//! The crate covers the full offline path from question–answer corpora to
//! report files:
//!
//! * [`corpus`]: loading, response attachment and alignment checks.
//! * [`textmetrics`]: word/sentence/syllable statistics with FKGL and GFI.
//! * [`semantic`]: semantic fidelity as embedding cosine similarity.
//! * [`affect`]: sentiment labels, emotion distributions and their tables.
//! * [`stats`]: paired t-tests, Benjamini–Hochberg adjustment, chi-square with
//!   Cramér's V, and pairwise comparison matrices.
//! * [`sampler`]: readability-driven and severity-stratified subset selection.
//! * [`report`]: Likert aggregation and the on-disk report bundle.
//! * [`pipeline`]: end-to-end orchestration used by the command-line tool.
//!
//! Model inference lives outside the crate. Embeddings and classifier labels
//! are read either from content-hash keyed store files or from an HTTP
//! inference service (see [`remote`]).

pub mod affect;
pub mod corpus;
pub mod hashing;
pub mod pipeline;
pub mod remote;
pub mod report;
pub mod sampler;
pub mod semantic;
pub mod stats;
pub mod textmetrics;

pub use corpus::{Corpus, QARecord, ResponseVariant, SeverityLabel, SystemId, SystemMode};
