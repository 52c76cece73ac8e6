//! Empirical internal risk modulus in oscillation form and its
//! conservative upper band (isotonic regression + DKW inflation).

use crate::data_model::CostSpec;
use crate::empirical::LeftLimitCdf;
use crate::error::{Error, Result};

/// Grid of eps -> conservative upper estimate of the internal risk
/// modulus omega_P(eps).
#[derive(Debug, Clone)]
pub struct ModulusBand {
    pub eps_grid: Vec<f64>,
    /// Raw empirical modulus, before regression.
    pub raw: Vec<f64>,
    /// Isotonic raw + DKW inflation, clipped to the risk ceiling.
    pub upper: Vec<f64>,
    pub dkw_inflation: f64,
    pub delta_band: f64,
    /// c10*pi + c01*(1-pi): the largest value any risk oscillation can take.
    pub ceiling: f64,
}

/// Default modulus grid: 0 plus 64 log-spaced points from range/1e4 to
/// the full score range.
pub fn default_eps_grid(score_range: f64) -> Vec<f64> {
    if !(score_range > 0.0) {
        return vec![0.0];
    }
    let lo = (score_range / 1e4).ln();
    let hi = score_range.ln();
    let mut grid = vec![0.0];
    for i in 0..64 {
        grid.push((lo + (hi - lo) * i as f64 / 63.0).exp());
    }
    grid
}

/// Weighted oscillation sup over all thresholds, one value per eps.
///
/// The oscillation of a step CDF over the closed window [t-eps, t+eps]
/// is the probability mass of that window; the sup over t is attained
/// with the window's left edge at an atom, so the candidate set is the
/// union of both classes' score values.
pub fn empirical_modulus(
    cdf1: &LeftLimitCdf,
    cdf0: &LeftLimitCdf,
    prev: f64,
    costs: &CostSpec,
    eps_grid: &[f64],
) -> Vec<f64> {
    let w1 = costs.c10 * prev;
    let w0 = costs.c01 * (1.0 - prev);
    let mut atoms: Vec<f64> = cdf1
        .values()
        .iter()
        .chain(cdf0.values())
        .cloned()
        .collect();
    atoms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    atoms.dedup();

    eps_grid
        .iter()
        .map(|&eps| {
            let mut best = 0.0f64;
            for &a in &atoms {
                let hi = a + 2.0 * eps;
                let m1 = (cdf1.count_at_most(hi) - cdf1.count_below(a)) as f64
                    / cdf1.n() as f64;
                let m0 = (cdf0.count_at_most(hi) - cdf0.count_below(a)) as f64
                    / cdf0.n() as f64;
                best = best.max(w1 * m1 + w0 * m0);
            }
            best
        })
        .collect()
}

/// Pool-adjacent-violators: least-squares nondecreasing fit.
pub fn isotonic_nondecreasing(values: &[f64]) -> Vec<f64> {
    // (mean, weight) blocks
    let mut blocks: Vec<(f64, f64)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1.0));
        while blocks.len() >= 2 {
            let last = blocks[blocks.len() - 1];
            let prev = blocks[blocks.len() - 2];
            if prev.0 <= last.0 {
                break;
            }
            blocks.pop();
            blocks.pop();
            let w = prev.1 + last.1;
            blocks.push(((prev.0 * prev.1 + last.0 * last.1) / w, w));
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (mean, w) in blocks {
        for _ in 0..(w.round() as usize) {
            out.push(mean);
        }
    }
    out
}

/// Isotonic regression over eps followed by additive DKW inflation.
///
/// Each class's empirical CDF is uniformly within b_y of the truth with
/// probability 1 - delta_band/2, and an oscillation is a difference of
/// two CDF evaluations, so the inflation is 2*b_y per class weight.
pub fn conservative_band(
    raw: &[f64],
    eps_grid: &[f64],
    n1: usize,
    n0: usize,
    prev: f64,
    costs: &CostSpec,
    delta_band: f64,
) -> Result<ModulusBand> {
    if raw.len() != eps_grid.len() {
        return Err(Error::GridMismatch(format!(
            "raw has {} entries, eps_grid has {}",
            raw.len(),
            eps_grid.len()
        )));
    }
    if eps_grid.is_empty() {
        return Err(Error::EmptyInput("modulus eps grid".into()));
    }
    for w in eps_grid.windows(2) {
        if !(w[0] <= w[1]) {
            return Err(Error::InvalidParameter("eps grid must be ascending".into()));
        }
    }
    if eps_grid[0] < 0.0 {
        return Err(Error::InvalidParameter("eps grid must be nonnegative".into()));
    }
    if n1 == 0 {
        return Err(Error::SingleClass { label: 1 });
    }
    if n0 == 0 {
        return Err(Error::SingleClass { label: 0 });
    }
    if !(delta_band > 0.0 && delta_band < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta_band must be in (0,1), got {delta_band}"
        )));
    }

    let iso = isotonic_nondecreasing(raw);
    let log_term = (2.0 / (delta_band / 2.0)).ln();
    let b1 = (log_term / (2.0 * n1 as f64)).sqrt();
    let b0 = (log_term / (2.0 * n0 as f64)).sqrt();
    let dkw_inflation =
        costs.c10 * prev * 2.0 * b1 + costs.c01 * (1.0 - prev) * 2.0 * b0;
    let ceiling = costs.c10 * prev + costs.c01 * (1.0 - prev);
    let upper: Vec<f64> = iso
        .iter()
        .map(|&v| (v + dkw_inflation).min(ceiling))
        .collect();

    Ok(ModulusBand {
        eps_grid: eps_grid.to_vec(),
        raw: raw.to_vec(),
        upper,
        dkw_inflation,
        delta_band,
        ceiling,
    })
}

impl ModulusBand {
    /// Conservative lookup: the stored value at the smallest grid point
    /// >= eps, or the last (already clipped) value past the grid.
    pub fn eval(&self, eps: f64) -> f64 {
        debug_assert!(eps >= 0.0);
        let idx = self.eps_grid.partition_point(|&e| e < eps);
        if idx == self.eps_grid.len() {
            *self.upper.last().unwrap()
        } else {
            self.upper[idx]
        }
    }

    pub fn export_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "eps,raw,upper")?;
        for i in 0..self.eps_grid.len() {
            writeln!(w, "{},{},{}", self.eps_grid[i], self.raw[i], self.upper[i])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modulus_full_oscillation_at_large_eps() {
        let cdf1 = LeftLimitCdf::new(&[0.1, 0.4, 0.9]).unwrap();
        let cdf0 = LeftLimitCdf::new(&[0.2, 0.6]).unwrap();
        let costs = CostSpec::new(1.5, 0.5).unwrap();
        let prev = 0.6;
        let raw = empirical_modulus(&cdf1, &cdf0, prev, &costs, &[1.0]);
        assert_eq!(raw[0], costs.c10 * prev + costs.c01 * (1.0 - prev));
    }

    #[test]
    fn modulus_zero_eps_is_max_atom_mass() {
        // class 1 atoms {0.2 (x2), 0.5}; class 0 atoms {0.5, 0.8}
        let cdf1 = LeftLimitCdf::new(&[0.2, 0.2, 0.5]).unwrap();
        let cdf0 = LeftLimitCdf::new(&[0.5, 0.8]).unwrap();
        let costs = CostSpec::new(1.0, 1.0).unwrap();
        let raw = empirical_modulus(&cdf1, &cdf0, 0.5, &costs, &[0.0]);
        // shared atom at 0.5: 0.5*(1/3) + 0.5*(1/2) = 5/12; atom 0.2: 0.5*(2/3) = 1/3
        assert!((raw[0] - 5.0 / 12.0).abs() < 1e-15, "got {}", raw[0]);
    }

    #[test]
    fn modulus_two_point_class1_example() {
        let cdf1 = LeftLimitCdf::new(&[0.0, 1.0]).unwrap();
        let cdf0 = LeftLimitCdf::new(&[0.0]).unwrap(); // zero weight below
        let costs = CostSpec::new(1.0, 1.0).unwrap();
        let raw = empirical_modulus(&cdf1, &cdf0, 1.0, &costs, &[0.4, 0.6]);
        assert_eq!(raw[0], 0.5); // window covers one atom
        assert_eq!(raw[1], 1.0); // window covers both
    }

    #[test]
    fn pava_examples() {
        assert_eq!(
            isotonic_nondecreasing(&[0.1, 0.2, 0.3]),
            vec![0.1, 0.2, 0.3]
        );
        assert_eq!(
            isotonic_nondecreasing(&[0.1, 0.3, 0.2, 0.4]),
            vec![0.1, 0.25, 0.25, 0.4]
        );
        let pooled = isotonic_nondecreasing(&[3.0, 2.0, 1.0]);
        assert_eq!(pooled, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn band_identity_on_sorted_raw() {
        let eps = [0.0, 0.1, 0.2];
        let raw = [0.1, 0.2, 0.3];
        let costs = CostSpec::new(1.0, 1.0).unwrap();
        let band = conservative_band(&raw, &eps, 100, 100, 0.5, &costs, 0.1).unwrap();
        for i in 0..3 {
            let expected = (raw[i] + band.dkw_inflation).min(band.ceiling);
            assert_eq!(band.upper[i], expected);
        }
    }

    #[test]
    fn band_inflation_vanishes_asymptotically() {
        let eps = [0.0, 0.1];
        let raw = [0.05, 0.1];
        let costs = CostSpec::new(1.0, 1.0).unwrap();
        let band =
            conservative_band(&raw, &eps, 100_000_000, 100_000_000, 0.5, &costs, 0.1)
                .unwrap();
        assert!(band.dkw_inflation < 1e-3);
        assert!((band.upper[0] - 0.05).abs() < 1e-3);
    }

    #[test]
    fn band_eval_is_conservative_interpolation() {
        let eps = [0.0, 0.1, 0.2];
        let raw = [0.1, 0.2, 0.3];
        let costs = CostSpec::new(1.0, 1.0).unwrap();
        let band = conservative_band(&raw, &eps, 1000, 1000, 0.5, &costs, 0.1).unwrap();
        assert_eq!(band.eval(0.1), band.upper[1]); // exact grid point
        assert_eq!(band.eval(0.15), band.upper[2]); // next grid point up
        assert_eq!(band.eval(5.0), band.upper[2]); // past the grid: ceiling value
    }

    #[test]
    fn raw_modulus_nondecreasing_in_eps() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n1 = rng.random_range(2..15);
            let n0 = rng.random_range(2..15);
            let s1: Vec<f64> = (0..n1).map(|_| rng.random::<f64>()).collect();
            let s0: Vec<f64> = (0..n0).map(|_| rng.random::<f64>()).collect();
            let cdf1 = LeftLimitCdf::new(&s1).unwrap();
            let cdf0 = LeftLimitCdf::new(&s0).unwrap();
            let costs = CostSpec::new(2.0, 1.0).unwrap();
            let grid = default_eps_grid(1.0);
            let raw = empirical_modulus(&cdf1, &cdf0, 0.4, &costs, &grid);
            for w in raw.windows(2) {
                assert!(w[0] <= w[1] + 1e-15);
            }
        }
    }
}
