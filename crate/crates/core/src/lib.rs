//! Theme mining over hospital encounter text and length-of-stay prediction.
//!
//! The pipeline parses encounter records and procedure reports, turns
//! diagnostic codes into category text, marks negated findings, fits
//! weighted LDA topic models on both sources, and feeds dominant-topic
//! features to five classifiers whose results are reported per weighting
//! and feature source.
//!
//! Data-parallel inner loops (per-encounter text processing, coherence
//! scans over K, forest training, batch prediction) run on rayon when the
//! `parallel` feature is enabled and fall back to plain iteration otherwise.
//! Every stochastic stage takes an explicit seed, and results never depend
//! on the thread schedule.

pub mod corpus;
pub mod features;
pub mod ingest;
pub mod learn;
pub mod par;
pub mod pipeline;
pub mod synth;
pub mod textprep;
pub mod topics;
pub mod vectorize;

mod util;

pub use corpus::{bin_los, class_histogram, compute_los, CohortDataset, Encounter, LosCategory, ProcedureNote};
pub use par::Execution;
