//! Core domain types, cohort ingestion, and patient-level score aggregation.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which domain a cohort belongs to: internal development (P) or
/// external deployment (Q).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainTag {
    Internal,
    External,
}

/// One patient: a binary label and a nonempty list of instance scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Patient {
    pub id: String,
    pub label: u8,
    pub instances: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub patients: Vec<Patient>,
    pub domain_tag: DomainTag,
}

impl Cohort {
    pub fn new(patients: Vec<Patient>, domain_tag: DomainTag) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for p in &patients {
            if p.instances.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "patient {} has no instances",
                    p.id
                )));
            }
            if p.label > 1 {
                return Err(Error::InvalidParameter(format!(
                    "patient {} has non-binary label {}",
                    p.id, p.label
                )));
            }
            if !seen.insert(p.id.clone()) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate patient id {}",
                    p.id
                )));
            }
        }
        Ok(Cohort {
            patients,
            domain_tag,
        })
    }
}

/// Deterministic map from a patient's instance scores to one patient score.
#[derive(Debug, Clone, PartialEq)]
pub enum Aggregator {
    Mean,
    /// Lower-interpolation empirical quantile: order statistic at index
    /// ceil(q*m). q must be strictly inside (0,1).
    Quantile(f64),
    Max,
    /// Mean of the k largest instance scores; falls back to the mean of
    /// all instances when k exceeds the instance count.
    TopKMean(usize),
}

impl Aggregator {
    pub fn validate(&self) -> Result<()> {
        match self {
            Aggregator::Quantile(q) if !(*q > 0.0 && *q < 1.0) => Err(Error::InvalidParameter(
                format!("quantile q must be in (0,1), got {q}"),
            )),
            Aggregator::TopKMean(0) => {
                Err(Error::InvalidParameter("top-k requires k >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, instances: &[f64]) -> f64 {
        debug_assert!(!instances.is_empty());
        match self {
            Aggregator::Mean => instances.iter().sum::<f64>() / instances.len() as f64,
            Aggregator::Max => instances.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Aggregator::Quantile(q) => {
                let mut sorted = instances.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let m = sorted.len();
                let idx = ((q * m as f64).ceil() as usize).clamp(1, m);
                sorted[idx - 1]
            }
            Aggregator::TopKMean(k) => {
                let mut sorted = instances.to_vec();
                sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let k = (*k).min(sorted.len());
                sorted[..k].iter().sum::<f64>() / k as f64
            }
        }
    }
}

/// Cost-sensitive loss: c10 for a false negative, c01 for a false positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub c10: f64,
    pub c01: f64,
}

impl CostSpec {
    pub fn new(c10: f64, c01: f64) -> Result<Self> {
        if !(c10 >= 0.0 && c01 >= 0.0 && c10 + c01 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "costs must be nonnegative with c10+c01 > 0, got ({c10}, {c01})"
            )));
        }
        Ok(CostSpec { c10, c01 })
    }

    /// Loss of deciding `decision` for a patient with `label`.
    pub fn loss(&self, label: u8, decision: bool) -> f64 {
        match (label, decision) {
            (1, false) => self.c10,
            (0, true) => self.c01,
            _ => 0.0,
        }
    }
}

/// Aggregated score for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientScore {
    pub patient_id: String,
    pub label: u8,
    pub s: f64,
}

/// Read a cohort from CSV with header `patient_id,label,instance_score`,
/// one row per instance. Rows for a patient must agree on the label.
pub fn ingest_cohort<P: AsRef<Path>>(path: P, domain_tag: DomainTag) -> Result<Cohort> {
    let path_str = path.as_ref().display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(|e| Error::Io {
            path: path_str.clone(),
            source: std::io::Error::other(e),
        })?;

    // Preserve first-appearance order of patients.
    let mut order: Vec<String> = Vec::new();
    let mut patients: HashMap<String, Patient> = HashMap::new();

    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::MalformedRow {
            row,
            message: e.to_string(),
        })?;
        if record.len() != 3 {
            return Err(Error::MalformedRow {
                row,
                message: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let id = record[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::MalformedRow {
                row,
                message: "empty patient_id".into(),
            });
        }
        let label_raw = record[1].trim();
        let label: u8 = match label_raw {
            "0" => 0,
            "1" => 1,
            _ => {
                return Err(Error::NonBinaryLabel {
                    row,
                    label: label_raw.to_string(),
                })
            }
        };
        let value: f64 = record[2].trim().parse().map_err(|_| Error::MalformedRow {
            row,
            message: format!("instance_score {:?} is not a number", &record[2]),
        })?;
        if !value.is_finite() {
            return Err(Error::MalformedRow {
                row,
                message: format!("instance_score {value} is not finite"),
            });
        }

        match patients.get_mut(&id) {
            Some(p) => {
                if p.label != label {
                    return Err(Error::ConflictingLabels {
                        patient_id: id,
                        row,
                    });
                }
                p.instances.push(value);
            }
            None => {
                order.push(id.clone());
                patients.insert(
                    id.clone(),
                    Patient {
                        id,
                        label,
                        instances: vec![value],
                    },
                );
            }
        }
    }

    if order.is_empty() {
        return Err(Error::EmptyInput(path_str));
    }
    let patients = order
        .into_iter()
        .map(|id| patients.remove(&id).unwrap())
        .collect();
    Cohort::new(patients, domain_tag)
}

/// Aggregate every patient's instances to a single score.
pub fn aggregate(cohort: &Cohort, agg: &Aggregator) -> Result<Vec<PatientScore>> {
    agg.validate()?;
    Ok(cohort
        .patients
        .iter()
        .map(|p| PatientScore {
            patient_id: p.id.clone(),
            label: p.label,
            s: agg.apply(&p.instances),
        })
        .collect())
}
