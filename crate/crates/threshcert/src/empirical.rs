//! Discrete-safe empirical CDFs, threshold grids, and cost-sensitive
//! risk curves over patient scores.

use crate::data_model::{CostSpec, PatientScore};
use crate::error::{Error, Result};

/// Left-limit empirical CDF: `eval(t)` returns #{s < t}/n (strict
/// inequality), which pairs with the decision rule `S >= t` so atoms
/// are handled consistently.
#[derive(Debug, Clone, PartialEq)]
pub struct LeftLimitCdf {
    /// Ascending distinct score values.
    sorted_values: Vec<f64>,
    /// cum_counts[i] = number of observations strictly below sorted_values[i].
    cum_counts: Vec<usize>,
    /// Multiplicity of each distinct value.
    multiplicities: Vec<usize>,
    n: usize,
}

impl LeftLimitCdf {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("left-limit CDF of empty sample".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite score"));
        let mut sorted_values = Vec::new();
        let mut cum_counts = Vec::new();
        let mut multiplicities = Vec::new();
        let mut below = 0usize;
        let mut i = 0;
        while i < sorted.len() {
            let v = sorted[i];
            let mut mult = 0;
            while i < sorted.len() && sorted[i] == v {
                mult += 1;
                i += 1;
            }
            sorted_values.push(v);
            cum_counts.push(below);
            multiplicities.push(mult);
            below += mult;
        }
        Ok(LeftLimitCdf {
            sorted_values,
            cum_counts,
            multiplicities,
            n: values.len(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted_values
    }

    /// Number of observations strictly below `t`, in O(log n).
    pub fn count_below(&self, t: f64) -> usize {
        // partition_point gives the first index with value >= t
        let idx = self.sorted_values.partition_point(|&v| v < t);
        if idx == self.sorted_values.len() {
            self.n
        } else {
            self.cum_counts[idx]
        }
    }

    /// Number of observations less than or equal to `t` (the right
    /// limit of the step function).
    pub fn count_at_most(&self, t: f64) -> usize {
        let idx = self.sorted_values.partition_point(|&v| v <= t);
        if idx == 0 {
            0
        } else {
            self.cum_counts[idx - 1] + self.multiplicities[idx - 1]
        }
    }

    /// F^-(t) = #{s < t}/n.
    pub fn eval(&self, t: f64) -> f64 {
        self.count_below(t) as f64 / self.n as f64
    }

    /// F(t+) = #{s <= t}/n.
    pub fn eval_right(&self, t: f64) -> f64 {
        self.count_at_most(t) as f64 / self.n as f64
    }
}

/// Ascending candidate thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGrid {
    thresholds: Vec<f64>,
}

impl ThresholdGrid {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::EmptyInput("threshold grid".into()));
        }
        for w in thresholds.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidParameter(
                    "threshold grid must be strictly ascending".into(),
                ));
            }
        }
        if thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter(
                "threshold grid must be finite".into(),
            ));
        }
        Ok(ThresholdGrid { thresholds })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.thresholds
            .binary_search_by(|x| x.partial_cmp(&t).unwrap())
            .is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridMode {
    /// One threshold between each pair of adjacent distinct score
    /// values, plus one below the minimum and one above the maximum.
    /// Captures every achievable operating point.
    Midpoints,
    /// Equally spaced thresholds spanning the score range.
    Uniform(usize),
}

pub fn make_grid(scores: &[PatientScore], mode: GridMode) -> Result<ThresholdGrid> {
    let values: Vec<f64> = scores.iter().map(|p| p.s).collect();
    make_grid_from_values(&values, mode)
}

pub fn make_grid_from_values(values: &[f64], mode: GridMode) -> Result<ThresholdGrid> {
    if values.is_empty() {
        return Err(Error::EmptyInput("grid construction".into()));
    }
    let mut distinct = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("non-finite score"));
    distinct.dedup();

    match mode {
        GridMode::Midpoints => {
            if distinct.len() < 2 {
                return Err(Error::DegenerateGrid);
            }
            let min = distinct[0];
            let max = *distinct.last().unwrap();
            let pad = (max - min) * 1e-3;
            let mut grid = Vec::with_capacity(distinct.len() + 1);
            grid.push(min - pad);
            for w in distinct.windows(2) {
                grid.push(0.5 * (w[0] + w[1]));
            }
            grid.push(max + pad);
            ThresholdGrid::new(grid)
        }
        GridMode::Uniform(n_points) => {
            if n_points == 0 {
                return Err(Error::InvalidParameter("uniform grid needs >=1 point".into()));
            }
            let min = distinct[0];
            let max = *distinct.last().unwrap();
            let range = max - min;
            let pad = if range > 0.0 { 1e-9 * range } else { 1e-9 };
            let lo = min - pad;
            let hi = max + pad;
            let grid = if n_points == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..n_points)
                    .map(|i| lo + (hi - lo) * i as f64 / (n_points - 1) as f64)
                    .collect()
            };
            ThresholdGrid::new(grid)
        }
    }
}

/// Empirical cost-sensitive risk over a threshold grid, with the
/// class-conditional left-limit CDFs it was computed from.
#[derive(Debug, Clone)]
pub struct RiskCurve {
    pub grid: ThresholdGrid,
    pub risks: Vec<f64>,
    pub costs: CostSpec,
    pub prevalence: f64,
    pub cdf0: LeftLimitCdf,
    pub cdf1: LeftLimitCdf,
}

impl RiskCurve {
    /// Risk at an arbitrary threshold from the CDF form:
    /// c10*pi*F1^-(t) + c01*(1-pi)*(1 - F0^-(t)).
    pub fn risk_at(&self, t: f64) -> f64 {
        population_risk(self.prevalence, &self.cdf0, &self.cdf1, &self.costs, t)
    }

    /// Index of the lowest-threshold minimizer.
    pub fn argmin_index(&self) -> usize {
        let mut best = 0;
        for (i, &r) in self.risks.iter().enumerate() {
            if r < self.risks[best] {
                best = i;
            }
        }
        best
    }

    pub fn min_risk(&self) -> f64 {
        self.risks.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn export_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "threshold,risk")?;
        for (t, r) in self.grid.thresholds().iter().zip(&self.risks) {
            writeln!(w, "{t},{r}")?;
        }
        Ok(())
    }
}

/// Build the empirical risk curve from patient scores. Requires both
/// labels to be present.
pub fn empirical_risk_curve(
    scores: &[PatientScore],
    costs: &CostSpec,
    grid: &ThresholdGrid,
) -> Result<RiskCurve> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("risk curve of empty score set".into()));
    }
    let (s1, s0): (Vec<f64>, Vec<f64>) = {
        let mut s1 = Vec::new();
        let mut s0 = Vec::new();
        for p in scores {
            if p.label == 1 {
                s1.push(p.s);
            } else {
                s0.push(p.s);
            }
        }
        (s1, s0)
    };
    if s1.is_empty() {
        return Err(Error::SingleClass { label: 1 });
    }
    if s0.is_empty() {
        return Err(Error::SingleClass { label: 0 });
    }
    let prevalence = s1.len() as f64 / scores.len() as f64;
    let cdf1 = LeftLimitCdf::new(&s1)?;
    let cdf0 = LeftLimitCdf::new(&s0)?;
    let risks = grid
        .thresholds()
        .iter()
        .map(|&t| population_risk(prevalence, &cdf0, &cdf1, costs, t))
        .collect();
    Ok(RiskCurve {
        grid: grid.clone(),
        risks,
        costs: *costs,
        prevalence,
        cdf0,
        cdf1,
    })
}

/// R_D(t) = c10*pi*F1^-(t) + c01*(1-pi)*(1 - F0^-(t)).
pub fn population_risk(
    prev: f64,
    cdf0: &LeftLimitCdf,
    cdf1: &LeftLimitCdf,
    costs: &CostSpec,
    t: f64,
) -> f64 {
    costs.c10 * prev * cdf1.eval(t) + costs.c01 * (1.0 - prev) * (1.0 - cdf0.eval(t))
}

/// Direct patient-loss average at `t`; the independent route the
/// CDF-form risk must reproduce exactly.
pub fn direct_loss_average(scores: &[PatientScore], costs: &CostSpec, t: f64) -> f64 {
    let total: f64 = scores
        .iter()
        .map(|p| costs.loss(p.label, p.s >= t))
        .sum();
    total / scores.len() as f64
}
