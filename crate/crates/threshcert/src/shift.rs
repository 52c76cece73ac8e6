//! Operating-point shift diagnostics between the internal (P) and
//! external (Q) domains.

use crate::data_model::CostSpec;
use crate::empirical::LeftLimitCdf;
use crate::error::{Error, Result};

/// Prevalence and class-conditional CDFs of one domain.
#[derive(Debug, Clone)]
pub struct DomainStats {
    pub prev: f64,
    pub cdf0: LeftLimitCdf,
    pub cdf1: LeftLimitCdf,
}

impl DomainStats {
    pub fn from_scores(scores: &[crate::data_model::PatientScore]) -> Result<Self> {
        let s1: Vec<f64> = scores.iter().filter(|p| p.label == 1).map(|p| p.s).collect();
        let s0: Vec<f64> = scores.iter().filter(|p| p.label == 0).map(|p| p.s).collect();
        if s1.is_empty() {
            return Err(Error::SingleClass { label: 1 });
        }
        if s0.is_empty() {
            return Err(Error::SingleClass { label: 0 });
        }
        Ok(DomainStats {
            prev: s1.len() as f64 / scores.len() as f64,
            cdf0: LeftLimitCdf::new(&s0)?,
            cdf1: LeftLimitCdf::new(&s1)?,
        })
    }
}

/// Shift diagnostics at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftReport {
    pub t: f64,
    /// |pi_Q - pi_P|.
    pub delta_pi: f64,
    /// F1_Q^-(t) - F1_P^-(t), sign kept for diagnostics.
    pub signed_gap_1: f64,
    pub signed_gap_0: f64,
    pub d1: f64,
    pub d0: f64,
    /// (c10+c01)*delta_pi + c10*pi_P*d1 + c01*(1-pi_P)*d0.
    pub shift_weighted: f64,
    /// Kolmogorov distance between the class-1 CDFs.
    pub kolmogorov_1: f64,
    pub kolmogorov_0: f64,
    /// Total variation between the label marginals; equals delta_pi
    /// for binary labels.
    pub tv_labels: f64,
    /// Global-distance upper bound on the weighted shift.
    pub global_bound: f64,
}

/// Exact Kolmogorov distance between two empirical left-limit CDFs,
/// evaluated at both one-sided limits of every step point.
pub fn kolmogorov_distance(f: &LeftLimitCdf, g: &LeftLimitCdf) -> f64 {
    let mut best = 0.0f64;
    for &v in f.values().iter().chain(g.values()) {
        best = best.max((f.eval(v) - g.eval(v)).abs());
        best = best.max((f.eval_right(v) - g.eval_right(v)).abs());
    }
    best
}

pub fn shift_at(t: f64, p: &DomainStats, q: &DomainStats, costs: &CostSpec) -> ShiftReport {
    let delta_pi = (q.prev - p.prev).abs();
    let signed_gap_1 = q.cdf1.eval(t) - p.cdf1.eval(t);
    let signed_gap_0 = q.cdf0.eval(t) - p.cdf0.eval(t);
    let d1 = signed_gap_1.abs();
    let d0 = signed_gap_0.abs();
    let w1 = costs.c10 * p.prev;
    let w0 = costs.c01 * (1.0 - p.prev);
    let shift_weighted = (costs.c10 + costs.c01) * delta_pi + w1 * d1 + w0 * d0;
    let kolmogorov_1 = kolmogorov_distance(&q.cdf1, &p.cdf1);
    let kolmogorov_0 = kolmogorov_distance(&q.cdf0, &p.cdf0);
    let global_bound =
        (costs.c10 + costs.c01) * delta_pi + w1 * kolmogorov_1 + w0 * kolmogorov_0;
    ShiftReport {
        t,
        delta_pi,
        signed_gap_1,
        signed_gap_0,
        d1,
        d0,
        shift_weighted,
        kolmogorov_1,
        kolmogorov_0,
        tv_labels: delta_pi,
        global_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::PatientScore;

    fn ps(label: u8, s: f64) -> PatientScore {
        PatientScore {
            patient_id: format!("{label}-{s}"),
            label,
            s,
        }
    }

    #[test]
    fn identical_domains_have_zero_shift() {
        let scores = vec![ps(1, 0.8), ps(1, 0.6), ps(0, 0.2), ps(0, 0.4)];
        let p = DomainStats::from_scores(&scores).unwrap();
        let q = DomainStats::from_scores(&scores).unwrap();
        let costs = CostSpec::new(1.0, 2.0).unwrap();
        let r = shift_at(0.5, &p, &q, &costs);
        assert_eq!(r.shift_weighted, 0.0);
        assert_eq!(r.kolmogorov_1, 0.0);
        assert_eq!(r.global_bound, 0.0);
    }

    #[test]
    fn local_gap_can_vanish_while_kolmogorov_does_not() {
        // class-1 CDFs differ only above t = 0.5
        let p_scores = vec![ps(1, 0.2), ps(1, 0.8), ps(0, 0.1), ps(0, 0.3)];
        let q_scores = vec![ps(1, 0.2), ps(1, 0.9), ps(0, 0.1), ps(0, 0.3)];
        let p = DomainStats::from_scores(&p_scores).unwrap();
        let q = DomainStats::from_scores(&q_scores).unwrap();
        let costs = CostSpec::new(1.0, 1.0).unwrap();
        let r = shift_at(0.5, &p, &q, &costs);
        assert_eq!(r.d1, 0.0);
        assert!(r.kolmogorov_1 > 0.0);
        assert!(r.shift_weighted <= r.global_bound);
    }

    #[test]
    fn prevalence_only_shift_formula() {
        // pi_P = 0.3, pi_Q = 0.5, identical class CDFs, unit costs
        let p = DomainStats {
            prev: 0.3,
            cdf0: LeftLimitCdf::new(&[0.1, 0.2]).unwrap(),
            cdf1: LeftLimitCdf::new(&[0.7, 0.9]).unwrap(),
        };
        let q = DomainStats {
            prev: 0.5,
            cdf0: LeftLimitCdf::new(&[0.1, 0.2]).unwrap(),
            cdf1: LeftLimitCdf::new(&[0.7, 0.9]).unwrap(),
        };
        let costs = CostSpec::new(1.0, 1.0).unwrap();
        let r = shift_at(0.5, &p, &q, &costs);
        assert!((r.shift_weighted - 0.4).abs() < 1e-15);
        assert_eq!(r.tv_labels, r.delta_pi);
    }

    #[test]
    fn kolmogorov_matches_brute_force() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..30 {
            let a: Vec<f64> = (0..rng.random_range(2..12))
                .map(|_| (rng.random::<f64>() * 10.0).round() / 10.0)
                .collect();
            let b: Vec<f64> = (0..rng.random_range(2..12))
                .map(|_| (rng.random::<f64>() * 10.0).round() / 10.0)
                .collect();
            let f = LeftLimitCdf::new(&a).unwrap();
            let g = LeftLimitCdf::new(&b).unwrap();
            // brute force: evaluate on a dense grid around every atom
            let mut brute = 0.0f64;
            for &v in a.iter().chain(b.iter()) {
                for u in [v - 1e-9, v, v + 1e-9] {
                    brute = brute.max((f.eval(u) - g.eval(u)).abs());
                }
            }
            let fast = kolmogorov_distance(&f, &g);
            assert!((fast - brute).abs() < 1e-12, "{fast} vs {brute}");
        }
    }
}
