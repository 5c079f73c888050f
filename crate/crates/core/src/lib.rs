//! Corrections for dataset shift between a labeled source domain and an
//! unlabeled target domain.
//!
//! * [`priorshift`]: EM re-estimation of target class priors with a
//!   likelihood-ratio significance test.
//! * [`covshift`]: importance weights by kernel mean matching or KDE ratios.
//! * [`ot`] and [`jdot`]: discrete optimal transport and joint-distribution
//!   transport for feature-space distortions.
//! * [`drift`]: tracking of slowly drifting concepts.
//! * [`synth`]: seeded generators and sample-selection bias injectors.
//! * [`cli`]: experiment configuration, CSV ingestion and report files.

// `!(x > 0.0)` is how parameter checks reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod covshift;
pub mod data;
pub mod drift;
pub mod error;
pub mod jdot;
pub mod linalg;
pub mod models;
pub mod ot;
pub mod priorshift;
pub mod rng;
pub mod synth;

pub use data::{empirical_measure, one_hot, DiscreteMeasure, LabeledDataset, Labels, ProbVector};
pub use error::{Error, Result};
