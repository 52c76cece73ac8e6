//! Threshold selection rules: ERM, Youden J, constrained ROC cuts, the
//! penalized objective over method/aggregator candidates, and the
//! per-threshold penalized variant.

use rayon::prelude::*;

use crate::bootstrap::{
    bootstrap_thresholds, erm_rule, g_boot, BootstrapConfig, InstabilityMap,
};
use crate::data_model::{Aggregator, CostSpec, PatientScore};
use crate::empirical::{empirical_risk_curve, make_grid, GridMode, RiskCurve};
use crate::error::{Error, Result};
use crate::modulus::{conservative_band, default_eps_grid, empirical_modulus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectorKind {
    Erm,
    YoudenJ,
    /// Among thresholds with sensitivity >= target, maximize specificity.
    RocSensAtLeast(f64),
    /// Among thresholds with specificity >= target, maximize sensitivity.
    RocSpecAtLeast(f64),
}

impl SelectorKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            SelectorKind::RocSensAtLeast(x) | SelectorKind::RocSpecAtLeast(x)
                if !(*x > 0.0 && *x < 1.0) =>
            {
                Err(Error::InvalidParameter(format!(
                    "ROC target must be in (0,1), got {x}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Deterministic threshold selection on a risk curve. Returns a grid
/// member.
pub fn select_threshold(curve: &RiskCurve, kind: SelectorKind) -> Result<f64> {
    kind.validate()?;
    let grid = curve.grid.thresholds();
    let sens = |t: f64| 1.0 - curve.cdf1.eval(t);
    let spec = |t: f64| curve.cdf0.eval(t);
    match kind {
        SelectorKind::Erm => Ok(grid[curve.argmin_index()]),
        SelectorKind::YoudenJ => {
            let mut best = 0;
            let mut best_j = f64::NEG_INFINITY;
            for (i, &t) in grid.iter().enumerate() {
                let j = sens(t) + spec(t) - 1.0;
                if j > best_j {
                    best_j = j;
                    best = i;
                }
            }
            Ok(grid[best])
        }
        SelectorKind::RocSensAtLeast(target) => {
            // sensitivity is nonincreasing in t: the largest feasible t
            // maximizes specificity
            let feasible = grid.iter().rev().find(|&&t| sens(t) >= target);
            match feasible {
                Some(&t) => Ok(t),
                None => Err(Error::InfeasibleConstraint {
                    constraint: format!("sens >= {target}"),
                    best: grid.iter().map(|&t| sens(t)).fold(f64::NEG_INFINITY, f64::max),
                }),
            }
        }
        SelectorKind::RocSpecAtLeast(target) => {
            let feasible = grid.iter().find(|&&t| spec(t) >= target);
            match feasible {
                Some(&t) => Ok(t),
                None => Err(Error::InfeasibleConstraint {
                    constraint: format!("spec >= {target}"),
                    best: grid.iter().map(|&t| spec(t)).fold(f64::NEG_INFINITY, f64::max),
                }),
            }
        }
    }
}

/// A scorer identity plus the aggregator applied to its instance scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub method_id: String,
    pub aggregator: Aggregator,
}

#[derive(Debug, Clone)]
pub struct CandidateRow {
    pub candidate: Candidate,
    pub t_hat: f64,
    pub val_risk: f64,
    pub g_boot: f64,
    /// J = min validation risk + bootstrap instability penalty.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct PenalizedOutcome {
    pub winner: CandidateRow,
    pub table: Vec<CandidateRow>,
    pub warnings: Vec<String>,
}

impl PenalizedOutcome {
    pub fn export_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "method,aggregator,t_hat,val_risk,g_boot,J")?;
        for row in &self.table {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                row.candidate.method_id,
                aggregator_label(&row.candidate.aggregator),
                row.t_hat,
                row.val_risk,
                row.g_boot,
                row.objective
            )?;
        }
        Ok(())
    }
}

pub fn aggregator_label(agg: &Aggregator) -> String {
    match agg {
        Aggregator::Mean => "mean".into(),
        Aggregator::Max => "max".into(),
        Aggregator::Quantile(q) => format!("quantile:{q}"),
        Aggregator::TopKMean(k) => format!("topk:{k}"),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PenalizedConfig {
    pub grid_mode: GridMode,
    pub boot: BootstrapConfig,
    pub delta_band: f64,
}

fn evaluate_candidate(
    candidate: &Candidate,
    scores: &[PatientScore],
    costs: &CostSpec,
    cfg: &PenalizedConfig,
) -> Result<CandidateRow> {
    let grid = make_grid(scores, cfg.grid_mode)?;
    let curve = empirical_risk_curve(scores, costs, &grid)?;
    let t_hat = erm_rule(&curve)?;
    let val_risk = curve.min_risk();

    let summary = bootstrap_thresholds(scores, costs, &grid, &cfg.boot, &erm_rule)?;
    let n1 = curve.cdf1.n();
    let n0 = curve.cdf0.n();
    let values: Vec<f64> = scores.iter().map(|p| p.s).collect();
    let range = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - values.iter().cloned().fold(f64::INFINITY, f64::min);
    let eps_grid = default_eps_grid(range);
    let raw = empirical_modulus(&curve.cdf1, &curve.cdf0, curve.prevalence, costs, &eps_grid);
    let band = conservative_band(
        &raw,
        &eps_grid,
        n1,
        n0,
        curve.prevalence,
        costs,
        cfg.delta_band,
    )?;
    let g = g_boot(&summary, &band);
    Ok(CandidateRow {
        candidate: candidate.clone(),
        t_hat,
        val_risk,
        g_boot: g,
        objective: val_risk + g,
    })
}

pub(crate) fn pick_winner(rows: &[CandidateRow]) -> usize {
    let mut best = 0;
    for i in 1..rows.len() {
        let a = &rows[i];
        let b = &rows[best];
        // ties on J broken by smaller validation risk; stable otherwise
        if a.objective < b.objective
            || (a.objective == b.objective && a.val_risk < b.val_risk)
        {
            best = i;
        }
    }
    best
}

/// Evaluate the penalized objective for every candidate and pick the
/// winner. Failed candidates are excluded with a warning; it is an
/// error only if all fail.
pub fn penalized_select(
    candidates: &[(Candidate, Vec<PatientScore>)],
    costs: &CostSpec,
    cfg: &PenalizedConfig,
) -> Result<PenalizedOutcome> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("candidate list".into()));
    }
    let results: Vec<Result<CandidateRow>> = candidates
        .par_iter()
        .map(|(cand, scores)| evaluate_candidate(cand, scores, costs, cfg))
        .collect();

    let mut table = Vec::new();
    let mut warnings = Vec::new();
    for ((cand, _), res) in candidates.iter().zip(results) {
        match res {
            Ok(row) => table.push(row),
            Err(e) => warnings.push(format!(
                "candidate {} ({}) excluded: {e}",
                cand.method_id,
                aggregator_label(&cand.aggregator)
            )),
        }
    }
    if table.is_empty() {
        return Err(Error::AllCandidatesFailed(warnings.join("; ")));
    }
    let winner = table[pick_winner(&table)].clone();
    Ok(PenalizedOutcome {
        winner,
        table,
        warnings,
    })
}

#[derive(Debug, Clone, Copy)]
pub enum LambdaMode {
    Fixed(f64),
    /// Scale lambda so the 0.58-quantile of the instability map matches
    /// 1.15x the empirical risk range.
    FigureCalibration,
}

/// Restrict per-threshold selection to one side of an anchor with a
/// movement cap.
#[derive(Debug, Clone, Copy)]
pub struct DirectionCap {
    pub anchor: f64,
    pub max_move: f64,
    pub rightward: bool,
}

/// Lower-interpolation empirical quantile of arbitrary values.
fn lower_quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[idx - 1]
}

pub fn calibrate_lambda(curve: &RiskCurve, map: &InstabilityMap) -> f64 {
    let range = curve.risks.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - curve.risks.iter().cloned().fold(f64::INFINITY, f64::min);
    let q = lower_quantile(&map.values, 0.58);
    if q == 0.0 {
        0.0
    } else {
        1.15 * range / q
    }
}

/// Minimize R(t) + lambda * instability(t) over the grid, optionally
/// restricted to one side of the anchor.
pub fn penalized_select_per_t(
    curve: &RiskCurve,
    map: &InstabilityMap,
    lambda_mode: LambdaMode,
    direction_cap: Option<DirectionCap>,
) -> Result<f64> {
    if curve.grid != map.grid {
        return Err(Error::GridMismatch(
            "risk curve and instability map use different grids".into(),
        ));
    }
    let lambda = match lambda_mode {
        LambdaMode::Fixed(l) => l,
        LambdaMode::FigureCalibration => calibrate_lambda(curve, map),
    };
    let grid = curve.grid.thresholds();
    let allowed = |t: f64| match direction_cap {
        None => true,
        Some(cap) => {
            if cap.rightward {
                t >= cap.anchor && t <= cap.anchor + cap.max_move
            } else {
                t <= cap.anchor && t >= cap.anchor - cap.max_move
            }
        }
    };
    let mut best: Option<(f64, f64)> = None;
    for (i, &t) in grid.iter().enumerate() {
        if !allowed(t) {
            continue;
        }
        let j = curve.risks[i] + lambda * map.values[i];
        match best {
            Some((_, bj)) if bj <= j => {}
            _ => best = Some((t, j)),
        }
    }
    match best {
        Some((t, _)) => Ok(t),
        None => {
            // cap window missed every grid point: take the point
            // closest to the anchor
            let anchor = direction_cap.map(|c| c.anchor).unwrap_or(grid[0]);
            Ok(*grid
                .iter()
                .min_by(|a, b| {
                    (*a - anchor)
                        .abs()
                        .partial_cmp(&(*b - anchor).abs())
                        .unwrap()
                })
                .unwrap())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirical::ThresholdGrid;

    fn ps(label: u8, s: f64) -> PatientScore {
        PatientScore {
            patient_id: format!("{label}-{s}"),
            label,
            s,
        }
    }

    fn curve_for(scores: &[PatientScore], costs: &CostSpec) -> RiskCurve {
        let grid = make_grid(scores, GridMode::Midpoints).unwrap();
        empirical_risk_curve(scores, costs, &grid).unwrap()
    }

    #[test]
    fn perfectly_separated_all_selectors_agree() {
        let scores = vec![ps(1, 0.9), ps(1, 0.8), ps(0, 0.1), ps(0, 0.2)];
        let costs = CostSpec::new(1.0, 1.0).unwrap();
        let curve = curve_for(&scores, &costs);
        for kind in [
            SelectorKind::Erm,
            SelectorKind::YoudenJ,
            SelectorKind::RocSensAtLeast(0.95),
            SelectorKind::RocSpecAtLeast(0.9),
        ] {
            let t = select_threshold(&curve, kind).unwrap();
            assert!(t > 0.2 && t < 0.8, "{kind:?} chose {t}");
            assert_eq!(curve.risk_at(t), 0.0);
        }
    }

    #[test]
    fn erm_matches_brute_force() {
        let costs = CostSpec::new(2.0, 1.0).unwrap();
        let scores = vec![ps(1, 0.9), ps(1, 0.4), ps(0, 0.3), ps(0, 0.6)];
        let curve = curve_for(&scores, &costs);
        let t = select_threshold(&curve, SelectorKind::Erm).unwrap();
        // brute force over the grid
        let mut best_t = f64::NAN;
        let mut best_r = f64::INFINITY;
        for &u in curve.grid.thresholds() {
            let r = crate::empirical::direct_loss_average(&scores, &costs, u);
            if r < best_r {
                best_r = r;
                best_t = u;
            }
        }
        assert_eq!(t, best_t);
    }

    #[test]
    fn sens_constraint_falls_back_to_lowest_threshold() {
        // classes fully inverted: only a threshold below every score
        // achieves sens >= 0.95
        let scores = vec![ps(1, 0.1), ps(1, 0.2), ps(0, 0.8), ps(0, 0.9)];
        let costs = CostSpec::new(1.0, 1.0).unwrap();
        let curve = curve_for(&scores, &costs);
        let t = select_threshold(&curve, SelectorKind::RocSensAtLeast(0.95)).unwrap();
        assert_eq!(t, curve.grid.thresholds()[0]);
    }

    #[test]
    fn infeasible_constraint_reports_best() {
        let scores = vec![ps(1, 0.1), ps(1, 0.2), ps(0, 0.8), ps(0, 0.9)];
        let costs = CostSpec::new(1.0, 1.0).unwrap();
        let curve = curve_for(&scores, &costs);
        // restrict the grid above all class-1 scores so sens > 0 is unreachable
        let grid = ThresholdGrid::new(vec![0.85]).unwrap();
        let curve = RiskCurve {
            grid: grid.clone(),
            risks: vec![crate::empirical::direct_loss_average(&scores, &costs, 0.85)],
            ..curve
        };
        match select_threshold(&curve, SelectorKind::RocSensAtLeast(0.95)) {
            Err(Error::InfeasibleConstraint { best, .. }) => assert_eq!(best, 0.0),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn erm_invariant_under_cost_scaling() {
        let scores = vec![ps(1, 0.9), ps(1, 0.4), ps(0, 0.3), ps(0, 0.6)];
        let a = curve_for(&scores, &CostSpec::new(2.0, 1.0).unwrap());
        let b = curve_for(&scores, &CostSpec::new(6.0, 3.0).unwrap());
        assert_eq!(
            select_threshold(&a, SelectorKind::Erm).unwrap(),
            select_threshold(&b, SelectorKind::Erm).unwrap()
        );
    }

    #[test]
    fn monotone_transform_preserves_decisions() {
        let scores = vec![
            ps(1, 0.9),
            ps(1, 0.4),
            ps(1, 0.55),
            ps(0, 0.3),
            ps(0, 0.6),
            ps(0, 0.15),
        ];
        let costs = CostSpec::new(1.5, 1.0).unwrap();
        let g = |x: f64| (3.0 * x).exp();
        let transformed: Vec<PatientScore> = scores
            .iter()
            .map(|p| PatientScore {
                patient_id: p.patient_id.clone(),
                label: p.label,
                s: g(p.s),
            })
            .collect();
        for kind in [SelectorKind::Erm, SelectorKind::YoudenJ] {
            let t = select_threshold(&curve_for(&scores, &costs), kind).unwrap();
            let t2 = select_threshold(&curve_for(&transformed, &costs), kind).unwrap();
            for (p, p2) in scores.iter().zip(&transformed) {
                assert_eq!(p.s >= t, p2.s >= t2);
            }
        }
    }

    #[test]
    fn single_candidate_wins_with_its_erm_threshold() {
        let scores = vec![ps(1, 0.9), ps(1, 0.7), ps(0, 0.2), ps(0, 0.4)];
        let cand = Candidate {
            method_id: "m1".into(),
            aggregator: Aggregator::Max,
        };
        let costs = CostSpec::new(1.0, 1.0).unwrap();
        let cfg = PenalizedConfig {
            grid_mode: GridMode::Midpoints,
            boot: BootstrapConfig {
                replicates: 32,
                seed: 4,
                ..Default::default()
            },
            delta_band: 0.1,
        };
        let out =
            penalized_select(&[(cand.clone(), scores.clone())], &costs, &cfg).unwrap();
        assert_eq!(out.winner.candidate, cand);
        let curve = curve_for(&scores, &costs);
        assert_eq!(
            out.winner.t_hat,
            select_threshold(&curve, SelectorKind::Erm).unwrap()
        );
        assert_eq!(out.winner.objective, out.winner.val_risk + out.winner.g_boot);
    }

    #[test]
    fn tie_break_prefers_smaller_val_risk() {
        let mk = |val: f64, g: f64| CandidateRow {
            candidate: Candidate {
                method_id: "m".into(),
                aggregator: Aggregator::Mean,
            },
            t_hat: 0.0,
            val_risk: val,
            g_boot: g,
            objective: val + g,
        };
        // equal J = 0.5, second has smaller validation risk
        let rows = vec![mk(0.3, 0.2), mk(0.1, 0.4)];
        assert_eq!(pick_winner(&rows), 1);
        // strict J ordering dominates
        let rows = vec![mk(0.3, 0.1), mk(0.1, 0.4)];
        assert_eq!(pick_winner(&rows), 0);
    }

    #[test]
    fn per_t_with_zero_lambda_is_erm() {
        let scores = vec![ps(1, 0.9), ps(1, 0.4), ps(0, 0.3), ps(0, 0.6)];
        let costs = CostSpec::new(1.0, 1.0).unwrap();
        let curve = curve_for(&scores, &costs);
        let map = InstabilityMap {
            grid: curve.grid.clone(),
            values: vec![0.7; curve.grid.len()],
        };
        let t = penalized_select_per_t(&curve, &map, LambdaMode::Fixed(0.0), None).unwrap();
        assert_eq!(t, select_threshold(&curve, SelectorKind::Erm).unwrap());
        // constant map: additive constant leaves the argmin unchanged
        let t2 = penalized_select_per_t(&curve, &map, LambdaMode::Fixed(3.0), None).unwrap();
        assert_eq!(t2, t);
    }

    #[test]
    fn per_t_grid_mismatch_errors() {
        let scores = vec![ps(1, 0.9), ps(0, 0.3)];
        let costs = CostSpec::new(1.0, 1.0).unwrap();
        let grid = ThresholdGrid::new(vec![0.5, 0.6]).unwrap();
        let curve = empirical_risk_curve(&scores, &costs, &grid).unwrap();
        let map = InstabilityMap {
            grid: ThresholdGrid::new(vec![0.5]).unwrap(),
            values: vec![0.0],
        };
        assert!(matches!(
            penalized_select_per_t(&curve, &map, LambdaMode::Fixed(1.0), None),
            Err(Error::GridMismatch(_))
        ));
    }
}
