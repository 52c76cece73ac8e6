//! Synthetic hierarchical cohort generators: a two-basin Gaussian
//! mixture with a small "sharp" subgroup plus heteroskedastic noise,
//! in internal (P) and externally shifted (Q) parameterizations.
//!
//! The noise standard deviation follows a Gaussian bump
//! `amplitude * exp(-(s - center)^2 / (2 width^2))` in the raw score —
//! localized at `center` with scale `width`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data_model::{Aggregator, Cohort, CostSpec, DomainTag, Patient, PatientScore};
use crate::empirical::{empirical_risk_curve, make_grid, GridMode, LeftLimitCdf, RiskCurve};
use crate::error::{Error, Result};
use crate::seeding::rng_for;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

/// Two-basin class-conditional score mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureSpec {
    pub sharp_fraction: f64,
    /// (mu for label 0, mu for label 1).
    pub sharp_mu: (f64, f64),
    pub sharp_sd: (f64, f64),
    pub flat_mu: (f64, f64),
    pub flat_sd: f64,
    pub noise: NoiseSpec,
    pub prevalence: f64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sharp_fraction) {
            return Err(Error::InvalidParameter(format!(
                "sharp_fraction must be in [0,1], got {}",
                self.sharp_fraction
            )));
        }
        if self.sharp_sd.0 <= 0.0 || self.sharp_sd.1 <= 0.0 || self.flat_sd <= 0.0 {
            return Err(Error::InvalidParameter("mixture sds must be > 0".into()));
        }
        if self.noise.width <= 0.0 {
            return Err(Error::InvalidParameter("noise width must be > 0".into()));
        }
        if self.noise.amplitude < 0.0 {
            return Err(Error::InvalidParameter(
                "noise amplitude must be >= 0".into(),
            ));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "prevalence must be in (0,1), got {}",
                self.prevalence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchySpec {
    pub n_patients: usize,
    pub cells_per_patient: usize,
    pub seed: u64,
}

impl HierarchySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 || self.cells_per_patient == 0 {
            return Err(Error::InvalidParameter(
                "n_patients and cells_per_patient must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Internal-domain preset: sharp basin (1.9, 2.1) sd (0.15, 0.13),
/// flat basin (2.5, 4.5) sd 1.0, noise bump (2.0, 0.90, 0.28).
pub fn fig1_p() -> MixtureSpec {
    MixtureSpec {
        sharp_fraction: 0.12,
        sharp_mu: (1.9, 2.1),
        sharp_sd: (0.15, 0.13),
        flat_mu: (2.5, 4.5),
        flat_sd: 1.0,
        noise: NoiseSpec {
            amplitude: 2.0,
            center: 0.90,
            width: 0.28,
        },
        prevalence: 0.5,
    }
}

/// External-domain preset with slightly shifted basins and a wider,
/// relocated noise bump.
pub fn fig1_q() -> MixtureSpec {
    MixtureSpec {
        sharp_fraction: 0.12,
        sharp_mu: (1.95, 2.05),
        sharp_sd: (0.16, 0.14),
        flat_mu: (2.55, 4.35),
        flat_sd: 1.05,
        noise: NoiseSpec {
            amplitude: 1.8,
            center: 2.00,
            width: 0.32,
        },
        prevalence: 0.5,
    }
}

fn sample_patient<R: Rng>(mix: &MixtureSpec, m: usize, rng: &mut R) -> (u8, Vec<f64>) {
    let label = u8::from(rng.random_bool(mix.prevalence));
    let sharp = rng.random_bool(mix.sharp_fraction);
    let (mu, sd) = match (sharp, label) {
        (true, 0) => (mix.sharp_mu.0, mix.sharp_sd.0),
        (true, _) => (mix.sharp_mu.1, mix.sharp_sd.1),
        (false, 0) => (mix.flat_mu.0, mix.flat_sd),
        (false, _) => (mix.flat_mu.1, mix.flat_sd),
    };
    let base = Normal::new(mu, sd).expect("validated sd");
    let instances = (0..m)
        .map(|_| {
            let s: f64 = base.sample(rng);
            if mix.noise.amplitude > 0.0 {
                let d = (s - mix.noise.center) / mix.noise.width;
                let noise_sd = mix.noise.amplitude * (-0.5 * d * d).exp();
                s + Normal::new(0.0, noise_sd).expect("positive sd").sample(rng)
            } else {
                s
            }
        })
        .collect();
    (label, instances)
}

/// Deterministic per-patient generation; patient i uses an RNG stream
/// derived from (seed, i), so parallel order cannot change the draw.
pub fn generate_cohort(
    mix: &MixtureSpec,
    hier: &HierarchySpec,
    domain_tag: DomainTag,
) -> Result<Cohort> {
    mix.validate()?;
    hier.validate()?;
    let width = hier.n_patients.to_string().len();
    let patients: Vec<Patient> = (0..hier.n_patients)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(hier.seed, i as u64);
            let (label, instances) = sample_patient(mix, hier.cells_per_patient, &mut rng);
            Patient {
                id: format!("p{i:0width$}"),
                label,
                instances,
            }
        })
        .collect();
    Cohort::new(patients, domain_tag)
}

/// Large-sample proxy for the population risk of aggregated scores.
#[derive(Debug, Clone)]
pub struct OracleStats {
    pub prev: f64,
    pub cdf0: LeftLimitCdf,
    pub cdf1: LeftLimitCdf,
    /// Lowest-threshold argmin of the oracle risk on a Midpoints grid.
    pub t_star: f64,
    pub risk_curve: RiskCurve,
}

/// Simulate `n_oracle` patients under the experiment's aggregator and
/// return near-exact class CDFs plus the oracle risk minimizer.
pub fn oracle_stats(
    mix: &MixtureSpec,
    agg: &Aggregator,
    cells_per_patient: usize,
    n_oracle: usize,
    seed: u64,
    costs: &CostSpec,
) -> Result<OracleStats> {
    mix.validate()?;
    agg.validate()?;
    if n_oracle == 0 || cells_per_patient == 0 {
        return Err(Error::InvalidParameter(
            "oracle sizes must be positive".into(),
        ));
    }
    let labeled: Vec<(u8, f64)> = (0..n_oracle)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let (label, instances) = sample_patient(mix, cells_per_patient, &mut rng);
            (label, agg.apply(&instances))
        })
        .collect();
    let scores: Vec<PatientScore> = labeled
        .iter()
        .enumerate()
        .map(|(i, &(label, s))| PatientScore {
            patient_id: format!("o{i}"),
            label,
            s,
        })
        .collect();
    let grid = make_grid(&scores, GridMode::Midpoints)?;
    let risk_curve = empirical_risk_curve(&scores, costs, &grid)?;
    let t_star = grid.thresholds()[risk_curve.argmin_index()];
    let s1: Vec<f64> = labeled.iter().filter(|x| x.0 == 1).map(|x| x.1).collect();
    let s0: Vec<f64> = labeled.iter().filter(|x| x.0 == 0).map(|x| x.1).collect();
    Ok(OracleStats {
        prev: s1.len() as f64 / n_oracle as f64,
        cdf0: LeftLimitCdf::new(&s0)?,
        cdf1: LeftLimitCdf::new(&s1)?,
        t_star,
        risk_curve,
    })
}
