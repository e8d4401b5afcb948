//! The allocation polytope `{ r : 1ᵀr ≤ total, lower ≤ r ≤ upper }` and the
//! Euclidean projection onto it.

use crate::error::{check_dim, Error, Result};

/// Bisection stops once the multiplier bracket is this narrow (relative to
/// the bracket magnitude).
const BISECTION_TOL: f64 = 1e-12;
const BISECTION_MAX_STEPS: usize = 400;

/// Feasible allocations: a shared budget plus per-agent box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleRegion {
    total: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl FeasibleRegion {
    /// Validates and builds a region. The budget must leave room above the
    /// lower bounds (`Σ lower < total`) so the region has an interior.
    pub fn new(total: f64, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::Config("region has no agents".into()));
        }
        if !total.is_finite() || total < 0.0 {
            return Err(Error::Config(format!(
                "total resource {total} must be finite and >= 0"
            )));
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("agent {i}: non-finite bound")));
            }
            if lo > hi {
                return Err(Error::Config(format!(
                    "agent {i}: lower bound {lo} exceeds upper bound {hi}"
                )));
            }
        }
        let floor: f64 = lower.iter().sum();
        if floor >= total {
            return Err(Error::Config(format!(
                "lower bounds sum to {floor}, which leaves no interior below total {total}"
            )));
        }
        Ok(Self {
            total,
            lower,
            upper,
        })
    }

    /// Rate region used for scheduling: upper bounds are all 1 and lower
    /// bounds must lie in `[0, 1]`.
    pub fn rates(total: f64, lower: Vec<f64>) -> Result<Self> {
        if let Some(i) = lower.iter().position(|lo| !(0.0..=1.0).contains(lo)) {
            return Err(Error::Config(format!(
                "agent {i}: rate lower bound {} outside [0, 1]",
                lower[i]
            )));
        }
        let upper = vec![1.0; lower.len()];
        Self::new(total, lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Same budget and upper bounds, new lower bounds.
    pub fn with_lower(&self, lower: Vec<f64>) -> Result<Self> {
        Self::new(self.total, lower, self.upper.clone())
    }

    /// True when the budget cannot bind: every agent can sit at its upper bound.
    pub fn budget_slack(&self) -> bool {
        self.upper.iter().sum::<f64>() <= self.total
    }

    /// Membership test with an absolute tolerance on every constraint.
    pub fn contains(&self, rates: &[f64], tol: f64) -> bool {
        rates.len() == self.dim()
            && rates.iter().sum::<f64>() <= self.total + tol
            && rates
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&r, (&lo, &hi))| r >= lo - tol && r <= hi + tol)
    }

    /// Default starting point: the budget left above the lower bounds is split
    /// evenly, then clamped to the upper bounds.
    pub fn interior_point(&self) -> Allocation {
        let n = self.dim() as f64;
        let share = (self.total - self.lower.iter().sum::<f64>()) / n;
        Allocation(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(&lo, &hi)| (lo + share).min(hi))
                .collect(),
        )
    }

    /// Euclidean projection of `x` onto the region.
    ///
    /// Clamps to the box first. If the budget is then violated, the projection
    /// is `clamp(x - λ, lower, upper)` with the unique `λ > 0` that makes the
    /// budget tight; `λ` is bracketed on `[0, max_i(x_i - lower_i)]`, bisected,
    /// and finally solved exactly on the set of unclamped coordinates.
    pub fn project(&self, x: &[f64]) -> Result<Allocation> {
        check_dim(self.dim(), x.len())?;
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "cannot project non-finite coordinate {i} ({})",
                x[i]
            )));
        }
        let boxed = self.shifted_clamp(x, 0.0);
        if boxed.iter().sum::<f64>() <= self.total {
            return Ok(Allocation(boxed));
        }

        let budget_at = |lambda: f64| -> f64 {
            x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(&xi, (&lo, &hi))| (xi - lambda).clamp(lo, hi))
                .sum()
        };
        let mut lo = 0.0_f64;
        let mut hi = x
            .iter()
            .zip(&self.lower)
            .map(|(&xi, &l)| xi - l)
            .fold(0.0_f64, f64::max);
        for _ in 0..BISECTION_MAX_STEPS {
            if hi - lo <= BISECTION_TOL * hi.abs().max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if budget_at(mid) > self.total {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = self.refine_multiplier(x, 0.5 * (lo + hi));
        Ok(Allocation(self.shifted_clamp(x, lambda)))
    }

    fn shifted_clamp(&self, x: &[f64], lambda: f64) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&xi, (&lo, &hi))| (xi - lambda).clamp(lo, hi))
            .collect()
    }

    /// Closed-form multiplier on the free set found by bisection. Falls back
    /// to the bisection estimate if the free set is empty or changes.
    fn refine_multiplier(&self, x: &[f64], lambda: f64) -> f64 {
        let mut fixed = 0.0;
        let mut free_sum = 0.0;
        let mut free = Vec::new();
        for (i, (&xi, (&lo, &hi))) in x.iter().zip(self.lower.iter().zip(&self.upper)).enumerate() {
            let v = xi - lambda;
            if v <= lo {
                fixed += lo;
            } else if v >= hi {
                fixed += hi;
            } else {
                free_sum += xi;
                free.push(i);
            }
        }
        if free.is_empty() {
            return lambda;
        }
        let exact = (free_sum - (self.total - fixed)) / free.len() as f64;
        let consistent = exact >= 0.0
            && free.iter().all(|&i| {
                let v = x[i] - exact;
                v >= self.lower[i] && v <= self.upper[i]
            });
        if consistent {
            exact
        } else {
            lambda
        }
    }
}

/// A rate vector, the allocator's decision variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation(pub Vec<f64>);

impl Allocation {
    pub fn rates(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for Allocation {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl AsRef<[f64]> for Allocation {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Free-function form of [`FeasibleRegion::project`].
pub fn project_feasible(x: &[f64], region: &FeasibleRegion) -> Result<Allocation> {
    region.project(x)
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(total: f64, n: usize) -> FeasibleRegion {
        FeasibleRegion::rates(total, vec![0.0; n]).unwrap()
    }

    /// Brute-force projection onto a 2-d region on a grid.
    fn grid_projection(x: [f64; 2], region: &FeasibleRegion, step: f64) -> [f64; 2] {
        let steps = ((region.upper()[0] - region.lower()[0]) / step).round() as usize;
        let mut best = ([0.0, 0.0], f64::INFINITY);
        for i in 0..=steps {
            for j in 0..=steps {
                let r = [
                    region.lower()[0] + i as f64 * step,
                    region.lower()[1] + j as f64 * step,
                ];
                if !region.contains(&r, 1e-12) {
                    continue;
                }
                let d = distance(&r, &x);
                if d < best.1 {
                    best = (r, d);
                }
            }
        }
        best.0
    }

    #[test]
    fn feasible_point_is_fixed() {
        let p = unit(1.0, 2).project(&[0.2, 0.3]).unwrap();
        assert_eq!(p.rates(), &[0.2, 0.3]);
    }

    #[test]
    fn symmetric_excess_splits_evenly() {
        let p = unit(1.0, 2).project(&[1.0, 1.0]).unwrap();
        assert!((p.0[0] - 0.5).abs() < 1e-12 && (p.0[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn corner_projection_matches_grid_search() {
        let region = unit(1.0, 2);
        let oracle = grid_projection([2.0, -1.0], &region, 1e-3);
        assert!((oracle[0] - 1.0).abs() < 1e-9 && oracle[1].abs() < 1e-9);
        let p = region.project(&[2.0, -1.0]).unwrap();
        assert!((p.0[0] - oracle[0]).abs() < 1e-3 && (p.0[1] - oracle[1]).abs() < 1e-3);
        assert_eq!(p.rates(), &[1.0, 0.0]);
    }

    #[test]
    fn rejects_region_without_interior() {
        assert!(matches!(
            FeasibleRegion::rates(0.5, vec![0.25, 0.25]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            FeasibleRegion::new(1.0, vec![0.5], vec![0.2]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rejects_non_finite_input() {
        assert!(matches!(
            unit(1.0, 2).project(&[f64::NAN, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            unit(1.0, 2).project(&[0.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn slack_budget_only_clamps() {
        let region = unit(5.0, 3);
        assert!(region.budget_slack());
        let p = region.project(&[3.0, 0.4, -2.0]).unwrap();
        assert_eq!(p.rates(), &[1.0, 0.4, 0.0]);
    }

    #[test]
    fn huge_coordinates_stay_feasible() {
        let region = FeasibleRegion::rates(2.0, vec![0.001, 0.001, 0.0, 0.0]).unwrap();
        let p = region.project(&[1e150, 3.0, 1e120, 0.5]).unwrap();
        assert!(region.contains(p.rates(), 1e-9));
        assert_eq!(p.0[0], 1.0);
    }

    #[test]
    fn interior_point_respects_upper_bounds() {
        let region = FeasibleRegion::new(10.0, vec![0.0, 1.0], vec![2.0, 8.0]).unwrap();
        let r = region.interior_point();
        assert_eq!(r.rates(), &[2.0, 5.5]);
    }
}
