//! Claim checking against relational data.
//!
//! A document's numerical claims are translated into probability
//! distributions over simple aggregate queries (one aggregation function,
//! one aggregation target, a conjunction of equality predicates). Candidate
//! queries are scored by keyword relevance, refined by evaluating them with
//! merged and cached cube aggregates, and coupled across claims through
//! document-level priors learned by expectation maximization.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: CSV ingestion, schema validation, join planning.
//! - [`lexicon`]: tokenisation, stopwords, synonyms and name decomposition.
//! - [`fragments`]: query fragments, keyword bags and the BM25 fragment index.
//! - [`document`]: document structure, claim detection and claim keywords.
//! - [`query`]: query candidates, enumeration, rounding and rendering.
//! - [`cube`]: evaluation scope, cube computation and the result cache.
//! - [`inference`]: priors, posterior weights and the EM loop.
//! - [`verdict`]: verdicts, reports, metrics and annotated output.
//! - [`pipeline`]: end-to-end verification driver used by the CLI and service.

pub mod cube;
pub mod dataset;
pub mod document;
pub mod fragments;
pub mod inference;
pub mod lexicon;
pub mod pipeline;
pub mod query;
pub mod verdict;

pub use cube::{CostBudget, CubeEngine, EngineOptions, EngineStats, EvalScope, GroupSizeRule};
pub use dataset::{
    Column, ColumnId, ColumnType, DataDictionary, ForeignKey, JoinPlan, Schema, SchemaSidecar, Table, TableId,
};
pub use document::{ClaimSite, DistanceProvider, Document, DocumentFormat};
pub use fragments::{FragmentCatalog, FragmentId, FragmentIndex, FragmentKind, RelevanceRow};
pub use inference::{ClaimDistribution, EmConfig, Priors};
pub use pipeline::{Dataset, Feedback, PinSpec, VerifyConfig, VerifyOutcome};
pub use query::{AggFunction, QueryCandidate, RoundingRule};
pub use verdict::{DecisionRule, GroundTruth, Metrics, Report, Verdict, VerdictStatus};
