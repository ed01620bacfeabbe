//! Extraction of span- and document-level diagnosis labels from
//! echocardiogram reports.
//!
//! The crate bundles three families of extractors behind one evaluation
//! protocol:
//!
//! * [`rules`]: a token-pattern dictionary baseline,
//! * [`span`]: a trainable span classifier over all n-gram candidates,
//! * [`doc`]: direct document classifiers (TF-IDF + topics + boosted trees,
//!   and a convolutional network), plus the span-to-document heuristic.
//!
//! [`corpus`] handles annotated JSONL data and generates synthetic reports;
//! [`eval`] computes weighted/macro scores, token Jaccard coverage and the
//! false-label rate.

pub mod container;
pub mod corpus;
pub mod doc;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod nn;
pub mod ontology;
pub mod rules;
pub mod span;
pub mod textproc;

pub use corpus::{AnnotatedDocument, CorpusSplit, SpanAnnotation};
pub use error::{Error, Result};
pub use ontology::{Characteristic, LabelScheme, Ontology, SeverityLabel};
pub use rules::RuleSet;
pub use textproc::{Token, TokenizedDocument};
