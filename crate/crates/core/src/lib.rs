//! Conformance checks for multiple-instance learning models.
//!
//! Three synthetic tests generate bag datasets whose training and test
//! distributions differ in a way that only a rule respecting the MIL
//! assumption can survive. A model is scored on both splits and judged by
//! rank AUC: high on training but below chance on test is a Fail.

pub mod bag;
pub mod concept;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod milgen;
pub mod nn;
pub mod rng;

pub use bag::{Bag, InstanceRole, InstanceVector, Label, Split};
pub use concept::ConceptRule;
pub use error::{Error, Result};
pub use harness::ModelSpec;
pub use metrics::{auc, verdict, EvalReport, ScoreTable, Verdict, VerdictStatus};
pub use milgen::{generate_dataset, Dataset, GeneratorConfig, TestId};
pub use nn::{ModelKind, TrainConfig};
pub use rng::{derive_stream, SeedStream};
