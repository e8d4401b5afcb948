//! Per-agent cost evaluators.

use crate::error::{check_dim, Error, Result};
use crate::region::FeasibleRegion;

/// Cost of each agent as a function of its own resource.
///
/// Implementations must be continuous, strictly decreasing, convex and
/// strictly positive on the region's box. Evaluation is read-only so a model
/// can be shared across threads.
pub trait CostModel: Sync {
    fn dim(&self) -> usize;

    fn cost(&self, agent: usize, rate: f64) -> Result<f64>;

    fn costs(&self, rates: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), rates.len())?;
        rates
            .iter()
            .enumerate()
            .map(|(i, &r)| self.cost(i, r))
            .collect()
    }

    /// Smallest and largest slope magnitude of agent `agent` on `[lower, upper]`,
    /// when the model can state them.
    fn slope_bounds(&self, _agent: usize, _lower: f64, _upper: f64) -> Option<(f64, f64)> {
        None
    }

    /// Makes sure costs can be evaluated down to the given lower bounds.
    /// Called by the outer loop before each pass with the current bounds.
    fn prepare(&mut self, _lower: &[f64]) -> Result<()> {
        Ok(())
    }
}

impl<C: CostModel + ?Sized> CostModel for &mut C {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn cost(&self, agent: usize, rate: f64) -> Result<f64> {
        (**self).cost(agent, rate)
    }
    fn slope_bounds(&self, agent: usize, lower: f64, upper: f64) -> Option<(f64, f64)> {
        (**self).slope_bounds(agent, lower, upper)
    }
    fn prepare(&mut self, lower: &[f64]) -> Result<()> {
        (**self).prepare(lower)
    }
}

/// Combined bounds `(α, β)` over all agents on the region's box: the smallest
/// lower slope bound and the largest upper slope bound.
pub fn global_slope_bounds<C: CostModel + ?Sized>(
    costs: &C,
    region: &FeasibleRegion,
) -> Option<(f64, f64)> {
    let mut alpha = f64::INFINITY;
    let mut beta = 0.0_f64;
    for i in 0..costs.dim() {
        let (a, b) = costs.slope_bounds(i, region.lower()[i], region.upper()[i])?;
        alpha = alpha.min(a);
        beta = beta.max(b);
    }
    Some((alpha, beta))
}

/// Affine costs `J_i(r) = intercept_i - slope_i · r` with `slope_i > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCosts {
    intercept: Vec<f64>,
    slope: Vec<f64>,
}

impl AffineCosts {
    pub fn new(intercept: Vec<f64>, slope: Vec<f64>) -> Result<Self> {
        check_dim(intercept.len(), slope.len())?;
        if let Some(i) = slope.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Assumption(format!(
                "agent {i}: slope {} must be positive",
                slope[i]
            )));
        }
        Ok(Self { intercept, slope })
    }

    pub fn intercept(&self) -> &[f64] {
        &self.intercept
    }

    pub fn slope(&self) -> &[f64] {
        &self.slope
    }
}

impl CostModel for AffineCosts {
    fn dim(&self) -> usize {
        self.slope.len()
    }

    fn cost(&self, agent: usize, rate: f64) -> Result<f64> {
        if agent >= self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: agent + 1,
            });
        }
        Ok(self.intercept[agent] - self.slope[agent] * rate)
    }

    fn slope_bounds(&self, agent: usize, _lower: f64, _upper: f64) -> Option<(f64, f64)> {
        self.slope.get(agent).map(|&s| (s, s))
    }
}

/// Checks continuity-free sampling consequences of the cost assumptions on
/// the region's box: positivity, strict decrease and midpoint convexity.
pub fn check_assumptions<C: CostModel + ?Sized>(
    costs: &C,
    region: &FeasibleRegion,
    samples: usize,
) -> Result<()> {
    check_dim(region.dim(), costs.dim())?;
    let samples = samples.max(2);
    for i in 0..costs.dim() {
        let (lo, hi) = (region.lower()[i], region.upper()[i]);
        if hi <= lo {
            continue;
        }
        let grid: Vec<f64> = (0..=samples)
            .map(|k| lo + (hi - lo) * k as f64 / samples as f64)
            .collect();
        let values = grid
            .iter()
            .map(|&r| costs.cost(i, r))
            .collect::<Result<Vec<_>>>()?;
        if let Some(k) = values.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Assumption(format!(
                "agent {i}: cost {} at rate {} is not positive",
                values[k], grid[k]
            )));
        }
        for k in 1..values.len() {
            if values[k] >= values[k - 1] {
                return Err(Error::Assumption(format!(
                    "agent {i}: cost not strictly decreasing near rate {}",
                    grid[k]
                )));
            }
        }
        for k in 1..values.len() - 1 {
            let chord = 0.5 * (values[k - 1] + values[k + 1]);
            if values[k] > chord + 1e-10 * chord.abs().max(1.0) {
                return Err(Error::Assumption(format!(
                    "agent {i}: cost not convex near rate {}",
                    grid[k]
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_eval_and_bounds() {
        let c = AffineCosts::new(vec![4.0, 1.5], vec![1.0, 2.0]).unwrap();
        assert_eq!(c.cost(0, 1.0).unwrap(), 3.0);
        assert_eq!(c.costs(&[0.5, 0.25]).unwrap(), vec![3.5, 1.0]);
        assert_eq!(c.slope_bounds(1, 0.0, 1.0), Some((2.0, 2.0)));
        let region = FeasibleRegion::rates(1.0, vec![0.0; 2]).unwrap();
        assert_eq!(global_slope_bounds(&c, &region), Some((1.0, 2.0)));
    }

    #[test]
    fn affine_rejects_flat_slope() {
        assert!(matches!(
            AffineCosts::new(vec![1.0], vec![0.0]),
            Err(Error::Assumption(_))
        ));
    }

    #[test]
    fn sampling_catches_nonpositive_cost() {
        let c = AffineCosts::new(vec![0.5], vec![1.0]).unwrap();
        let region = FeasibleRegion::rates(1.0, vec![0.0]).unwrap();
        assert!(matches!(
            check_assumptions(&c, &region, 10),
            Err(Error::Assumption(_))
        ));
        let ok = AffineCosts::new(vec![1.5], vec![1.0]).unwrap();
        assert!(check_assumptions(&ok, &region, 10).is_ok());
    }
}
