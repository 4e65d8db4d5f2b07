//! Core of the NQT question-answering toolkit: the query-template data
//! model, question preprocessing, template correction, SPARQL conversion
//! and evaluation metrics.

pub mod corrector;
pub mod dataset;
pub mod eval;
pub mod nqt;
pub mod preprocess;
pub mod sparql;
pub mod subgraph;
