//! Report-generation metrics: entity-graph F1 with partial credit,
//! embedding-similarity entity F1 that respects negation, BLEU-4, and a
//! lower-is-better composite aggregated as the reciprocal of its mean.
//!
//! Metrics consume entity graphs; [`extract::ToyExtractor`] is a lexicon
//! stand-in for a learned extractor.

pub mod bleu;
pub mod composite;
pub mod embed;
pub mod entity;
pub mod error;
pub mod extract;
pub mod radgraph;
pub mod rate;
pub mod reports;

pub use bleu::{bleu4, corpus_bleu4};
pub use composite::{radcliq_composite, reciprocal_mean, CompositeConfig};
pub use embed::{Embedder, TrigramEmbedder};
pub use entity::{Entity, EntityGraph, Polarity};
pub use error::{MetricError, Result};
pub use extract::ToyExtractor;
pub use radgraph::{entity_match_credit, radgraph_partial_f1};
pub use rate::rate_similarity_f1;
pub use reports::{read_reports, score_reports, MetricKind, MetricOptions, MetricReport, ReportRecord};
