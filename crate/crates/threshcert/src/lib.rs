//! Patient-level decision thresholds from hierarchical instance scores.
//!
//! The library selects a cost-sensitive threshold on aggregated patient
//! scores, penalizes selection instability via a patient-block bootstrap
//! mapped through a conservative risk-modulus band, and assembles an
//! external-risk certificate decomposing deployment risk into internal
//! fit, generalization, operating-point shift, and instability terms.

pub mod bootstrap;
pub mod certificate;
pub mod cli;
pub mod data_model;
pub mod empirical;
pub mod ensemble;
pub mod error;
pub mod generalization;
pub mod modulus;
pub mod report;
pub mod seeding;
pub mod selection;
pub mod shift;
pub mod synth;

pub use data_model::{Aggregator, Cohort, CostSpec, DomainTag, Patient, PatientScore};
pub use empirical::{GridMode, LeftLimitCdf, RiskCurve, ThresholdGrid};
pub use error::{Error, Result};
