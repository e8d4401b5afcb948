//! Judge-versus-allocator view of the max-min problem: the payoff
//! `g(w, r) = Σ w_i J_i(r_i)` and diagnostics for candidate equilibria.

use crate::cost::CostModel;
use crate::error::{check_dim, Error, Result};
use crate::region::{distance, Allocation, FeasibleRegion};
use crate::solver::step_map;

const SIMPLEX_TOL: f64 = 1e-12;

/// Judge strategy: a point of the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Domain("empty weight vector".into()));
        }
        if let Some(i) = weights.iter().position(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Domain(format!(
                "weight {i} = {} is not a nonnegative number",
                weights[i]
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Domain(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// All mass on agent `i`.
    pub fn vertex(n: usize, i: usize) -> Self {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Self(w)
    }

    /// Uniform over `support` (which must be nonempty and in range).
    pub fn uniform_over(n: usize, support: &[usize]) -> Self {
        let mut w = vec![0.0; n];
        let mass = 1.0 / support.len() as f64;
        for &i in support {
            w[i] = mass;
        }
        Self(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }
}

/// Payoff `Σ w_i J_i(r_i)` the judge maximizes and the allocator minimizes.
pub fn game_value<C: CostModel + ?Sized>(
    w: &WeightVector,
    r: &Allocation,
    costs: &C,
) -> Result<f64> {
    check_dim(w.0.len(), r.len())?;
    let j = costs.costs(r.rates())?;
    Ok(w.0.iter().zip(&j).map(|(wi, ji)| wi * ji).sum())
}

/// Indices whose cost is within `tol` (absolute) of the largest cost.
pub fn active_set(costs: &[f64], tol: f64) -> Vec<usize> {
    let max = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..costs.len())
        .filter(|&i| costs[i] >= max - tol)
        .collect()
}

/// A judge best response to `r`: uniform weight over the agents whose cost
/// is within `tol` of the maximum.
///
/// Diagnostic only. The equilibrium weight is unique but may put unequal mass
/// on the active agents; this returns one point of the argmax face.
pub fn recover_weights<C: CostModel + ?Sized>(
    r: &Allocation,
    costs: &C,
    tol: f64,
) -> Result<WeightVector> {
    let j = costs.costs(r.rates())?;
    Ok(WeightVector::uniform_over(j.len(), &active_set(&j, tol)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumTolerances {
    /// Relative tolerance for "cost equals the maximum".
    pub cost_rel: f64,
    /// Absolute tolerance for "rate sits on a bound".
    pub rate_abs: f64,
}

impl Default for EquilibriumTolerances {
    fn default() -> Self {
        Self {
            cost_rel: 1e-6,
            rate_abs: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub costs: Vec<f64>,
    /// `max_i J_i(r_i)`.
    pub game_value: f64,
    pub active_set: Vec<usize>,
    pub recovered_weights: WeightVector,
    /// `‖T(r) - r‖` at the probe step size.
    pub fixed_point_residual: f64,
    /// Active agents sit at their largest allowable rate whenever some
    /// inactive agent still holds resource above its lower bound.
    pub active_saturated: bool,
    /// Every agent attains the maximum cost.
    pub all_active: bool,
    /// `(max J - min J) / max J` over all agents.
    pub cost_spread: f64,
}

/// Equilibrium diagnostics with the default tolerances.
pub fn check_equilibrium<C: CostModel + ?Sized>(
    r: &Allocation,
    costs: &C,
    region: &FeasibleRegion,
    eps_probe: f64,
) -> Result<EquilibriumReport> {
    check_equilibrium_with(
        r,
        costs,
        region,
        eps_probe,
        EquilibriumTolerances::default(),
    )
}

pub fn check_equilibrium_with<C: CostModel + ?Sized>(
    r: &Allocation,
    costs: &C,
    region: &FeasibleRegion,
    eps_probe: f64,
    tol: EquilibriumTolerances,
) -> Result<EquilibriumReport> {
    check_dim(region.dim(), r.len())?;
    let j = costs.costs(r.rates())?;
    let game_value = j.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_cost = j.iter().copied().fold(f64::INFINITY, f64::min);
    let active = active_set(&j, tol.cost_rel * game_value.abs());
    let recovered_weights = WeightVector::uniform_over(j.len(), &active);

    let probe = step_map(r, eps_probe, costs, region)?;
    let fixed_point_residual = distance(probe.rates(), r.rates());

    // If an inactive agent could still give resource away, every active agent
    // must already be at min(total, upper).
    let rates = r.rates();
    let donor_exists = (0..j.len())
        .filter(|i| !active.contains(i))
        .any(|i| rates[i] > region.lower()[i] + tol.rate_abs);
    let active_saturated = !donor_exists
        || active.iter().all(|&i| {
            let cap = region.total().min(region.upper()[i]);
            (rates[i] - cap).abs() <= tol.rate_abs
        });

    Ok(EquilibriumReport {
        all_active: active.len() == j.len(),
        cost_spread: (game_value - min_cost) / game_value.abs(),
        costs: j,
        game_value,
        active_set: active,
        recovered_weights,
        fixed_point_residual,
        active_saturated,
    })
}
