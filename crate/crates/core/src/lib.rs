//! Dataset cartography and adversarial evaluation toolkit for extractive QA.
//!
//! The crate reads SQuAD v1.1 style datasets, per-epoch training-dynamics
//! logs and prediction files, then:
//!
//! - builds a data map (confidence, variability, correctness per example),
//! - partitions a training set into easy-to-learn / ambiguous / hard-to-learn
//!   subsets, or draws a seeded random subset of the same size,
//! - scores predictions with SQuAD exact match and token F1,
//! - compares original and adversarial evaluation runs and lists flips,
//! - renders result tables and SVG data maps.
//!
//! The `carto-qa` binary wires these stages together; see [`cli`].

pub mod cartography;
pub mod cli;
pub mod ingest;
pub mod metrics;
pub mod report;

pub use cartography::{CartographyMap, CartographyPoint, Partition};
pub use ingest::{DynamicsRecord, DynamicsTable, GoldAnswer, PredictionSet, QaDataset, QaExample};
pub use metrics::{EvalReport, ExampleScore};
pub use report::{AdversarialPairing, AdversarialReport};
