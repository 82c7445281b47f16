use std::sync::Arc;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::distributions::{Column, DiscreteDistribution, Kind, Role, Schema};
use crate::error::{Error, Result};

/// Schema of the random test laws: outcome `y`, binary exposure `x`,
/// discrete mediator `m` and one discrete covariate `z`.
pub fn oracle_schema() -> Arc<Schema> {
    Arc::new(
        Schema::new(vec![
            Column::new("y", Role::Outcome, Kind::Continuous),
            Column::new("x", Role::Exposure, Kind::Binary),
            Column::new("m", Role::Mediator, Kind::Discrete),
            Column::new("z", Role::Covariate, Kind::Discrete),
        ])
        .expect("static schema"),
    )
}

/// Dirichlet(1, …, 1) weights.
pub fn dirichlet<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let g: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// A random law on at most `max_support` atoms.
///
/// Every `(x, m, z)` cell is populated so conditional estimands are defined
/// along the whole mixture path. Outcomes sit on a half-integer grid, so
/// ties (which matter for CDF-type and density estimands) do occur.
pub fn random_law<R: Rng + ?Sized>(max_support: usize, rng: &mut R) -> Result<DiscreteDistribution> {
    if max_support < 8 {
        return Err(Error::Argument(format!(
            "random laws need at least 8 atoms to cover every cell, got {max_support}"
        )));
    }
    let nz = if max_support >= 12 && rng.random::<bool>() { 3 } else { 2 };
    let cells = 4 * nz;
    let per_cell_max = (max_support / cells).min(2);
    let mut rows = Vec::new();
    for z in 0..nz {
        for x in 0..2 {
            for m in 0..2 {
                let k = rng.random_range(1..=per_cell_max);
                for _ in 0..k {
                    let y: f64 = rng.sample::<f64, _>(StandardNormal) + 0.5 * x as f64 + 0.3 * m as f64;
                    let y = (2.0 * y).round() / 2.0;
                    rows.push(vec![y, x as f64, m as f64, z as f64]);
                }
            }
        }
    }
    // keep the tail and conditional-CDF estimands at threshold 0 defined
    if rows.iter().all(|r| r[0] > 0.0) {
        rows[0][0] = -rows[0][0];
    }
    let probs = dirichlet(rows.len(), rng);
    DiscreteDistribution::from_values(oracle_schema(), rows, probs)
}

/// A law on the same support as `base` with fresh Dirichlet weights.
pub fn reweighted<R: Rng + ?Sized>(base: &DiscreteDistribution, rng: &mut R) -> Result<DiscreteDistribution> {
    let probs = dirichlet(base.support().len(), rng);
    DiscreteDistribution::new(base.schema().clone(), base.support().to_vec(), probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn laws_cover_every_cell() {
        let mut rng = rng_from(1);
        for _ in 0..50 {
            let d = random_law(20, &mut rng).unwrap();
            assert!(d.support().len() <= 20);
            assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for x in [0.0, 1.0] {
                for m in [0.0, 1.0] {
                    for z in [0.0, 1.0] {
                        assert!(d.support().iter().any(|o| o.values()[1..] == [x, m, z]));
                    }
                }
            }
        }
    }
}
