//! Cost-driven projected fixed-point iteration and the outer loop that
//! relaxes lower bounds of agents whose cost blows up at zero resource.
//!
//! Each inner step pushes every agent's rate up by `ε · J_i(r_i)` and projects
//! back onto the region, so agents with high cost gain resource and agents
//! with low cost give it up. Fixed points of that map are max-min fair.

use crate::cost::CostModel;
use crate::error::{check_dim, Error, Result};
use crate::region::{distance, Allocation, FeasibleRegion};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Initial step size.
    pub eps0: f64,
    /// Initial lower bound for agents flagged unstable, and the factor those
    /// bounds shrink by when an agent ends a pass pinned at its bound.
    pub eta: f64,
    /// Inner loop stops once `‖r(t) - r(t-1)‖ ≤ eps_r`.
    pub eps_r: f64,
    pub max_inner_iters: usize,
    pub max_outer_iters: usize,
    /// Absolute tolerance for "rate sits on its lower bound".
    pub projection_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps0: 0.1,
            eta: 0.001,
            eps_r: 1e-6,
            max_inner_iters: 200_000,
            max_outer_iters: 30,
            projection_tol: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps0", self.eps0),
            ("eps_r", self.eps_r),
            ("projection_tol", self.projection_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!(
                "eta must lie in (0, 1), got {}",
                self.eta
            )));
        }
        if self.max_inner_iters == 0 || self.max_outer_iters == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Diminishing step rule `ε ← 1 / (1/ε + 1)`, i.e. `ε(t) = ε₀ / (1 + t ε₀)`.
pub fn next_step(eps: f64) -> f64 {
    1.0 / (1.0 / eps + 1.0)
}

/// `1 + ε²β² - 2εα`. Its square root bounds the Lipschitz constant of the
/// step map at step `ε` when every cost slope lies in `[α, β]`.
pub fn contraction_sq(eps: f64, alpha: f64, beta: f64) -> f64 {
    1.0 + eps * eps * beta * beta - 2.0 * eps * alpha
}

/// Distance bound `q / (1 - q) · eps_r` between an iterate whose last move
/// was at most `eps_r` and the fixed point of a map with Lipschitz constant
/// `q < 1`; `None` when `q ≥ 1`.
pub fn neighborhood_radius(q: f64, eps_r: f64) -> Option<f64> {
    (q < 1.0).then(|| q / (1.0 - q) * eps_r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    /// The inner or outer iteration budget ran out first.
    IterationLimit,
}

/// State after one inner iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    /// Global iteration counter, starting at 1 and continuing across passes.
    pub iteration: usize,
    pub rates: Vec<f64>,
    pub costs: Vec<f64>,
    /// Step size used to produce `rates`.
    pub step: f64,
    /// `‖r(t) - r(t-1)‖`.
    pub residual: f64,
}

/// Lower-bound relaxation performed by the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkEvent {
    /// Outer pass (0-based) that ended with an unstable agent pinned.
    pub pass: usize,
    pub iteration: usize,
    pub pinned: Vec<usize>,
    pub lower_before: Vec<f64>,
    pub lower_after: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverTrace {
    pub initial_rates: Vec<f64>,
    pub initial_costs: Vec<f64>,
    pub records: Vec<IterRecord>,
    pub shrinks: Vec<ShrinkEvent>,
    pub passes: usize,
}

impl SolverTrace {
    pub fn last(&self) -> Option<&IterRecord> {
        self.records.last()
    }

    /// `‖r(t) - r_final‖` for every recorded iterate, starting with the
    /// initial point.
    pub fn error_decay(&self) -> Vec<f64> {
        let Some(last) = self.records.last() else {
            return Vec::new();
        };
        std::iter::once(self.initial_rates.as_slice())
            .chain(self.records.iter().map(|rec| rec.rates.as_slice()))
            .map(|r| distance(r, &last.rates))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub allocation: Allocation,
    pub status: Status,
    pub trace: SolverTrace,
    /// Region of the last pass, with the lower bounds it ended on.
    pub region: FeasibleRegion,
    /// Step size that produced the final iterate.
    pub final_step: f64,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

/// One application of `T(r) = P(r + ε · J(r))`.
pub fn step_map<C: CostModel + ?Sized>(
    r: &Allocation,
    eps: f64,
    costs: &C,
    region: &FeasibleRegion,
) -> Result<Allocation> {
    let j = costs.costs(r.rates())?;
    push_and_project(r.rates(), &j, eps, region)
}

fn push_and_project(r: &[f64], j: &[f64], eps: f64, region: &FeasibleRegion) -> Result<Allocation> {
    let pushed: Vec<f64> = r.iter().zip(j).map(|(&ri, &ji)| ri + eps * ji).collect();
    region.project(&pushed)
}

struct InnerRun {
    rates: Vec<f64>,
    converged: bool,
}

/// Runs the inner loop from `start`, continuing the step size and the global
/// iteration counter held in `eps` and `t`.
fn run_inner<C: CostModel + ?Sized>(
    start: Vec<f64>,
    costs: &C,
    region: &FeasibleRegion,
    cfg: &SolverConfig,
    eps: &mut f64,
    t: &mut usize,
    trace: &mut SolverTrace,
) -> Result<InnerRun> {
    let mut r = start;
    let mut j = costs.costs(&r)?;
    for _ in 0..cfg.max_inner_iters {
        let step = *eps;
        let next = push_and_project(&r, &j, step, region)?.into_inner();
        let residual = distance(&next, &r);
        *t += 1;
        *eps = next_step(step);
        r = next;
        j = costs.costs(&r)?;
        trace.records.push(IterRecord {
            iteration: *t,
            rates: r.clone(),
            costs: j.clone(),
            step,
            residual,
        });
        if residual <= cfg.eps_r {
            return Ok(InnerRun {
                rates: r,
                converged: true,
            });
        }
    }
    Ok(InnerRun {
        rates: r,
        converged: false,
    })
}

/// Iterates `r(t+1) = T(r(t))` with diminishing steps until successive
/// iterates are within `eps_r` or the iteration budget runs out.
pub fn solve_inner<C: CostModel + ?Sized>(
    r0: &Allocation,
    costs: &C,
    region: &FeasibleRegion,
    cfg: &SolverConfig,
) -> Result<Solution> {
    cfg.validate()?;
    check_dim(region.dim(), costs.dim())?;
    check_dim(region.dim(), r0.len())?;
    if !region.contains(r0.rates(), cfg.projection_tol) {
        return Err(Error::Domain(
            "initial allocation lies outside the feasible region".into(),
        ));
    }
    let mut trace = SolverTrace {
        initial_rates: r0.rates().to_vec(),
        initial_costs: costs.costs(r0.rates())?,
        passes: 1,
        ..SolverTrace::default()
    };
    let mut eps = cfg.eps0;
    let mut t = 0;
    let run = run_inner(
        r0.rates().to_vec(),
        costs,
        region,
        cfg,
        &mut eps,
        &mut t,
        &mut trace,
    )?;
    let final_step = trace.last().map_or(cfg.eps0, |rec| rec.step);
    Ok(Solution {
        allocation: Allocation(run.rates),
        status: if run.converged {
            Status::Converged
        } else {
            Status::IterationLimit
        },
        trace,
        region: region.clone(),
        final_step,
    })
}

/// Full double loop for agents whose cost may diverge at zero resource.
///
/// Agents flagged in `unstable` start with lower bound `cfg.eta`; the others
/// keep the region's lower bound. After each inner solve, if any unstable
/// agent sits on its lower bound, all unstable lower bounds shrink by `eta`
/// and the inner loop resumes from the current iterate with the step size
/// and iteration counter carried over.
pub fn solve_maxmin<C: CostModel + ?Sized>(
    costs: &mut C,
    region: &FeasibleRegion,
    cfg: &SolverConfig,
    unstable: &[bool],
) -> Result<Solution> {
    cfg.validate()?;
    check_dim(region.dim(), costs.dim())?;
    check_dim(region.dim(), unstable.len())?;

    let mut lower: Vec<f64> = region
        .lower()
        .iter()
        .zip(unstable)
        .map(|(&lo, &u)| if u { cfg.eta } else { lo })
        .collect();
    let mut pass_region = region.with_lower(lower.clone())?;
    costs.prepare(&lower)?;
    let start = pass_region.interior_point().into_inner();
    let mut trace = SolverTrace {
        initial_costs: costs.costs(&start)?,
        initial_rates: start.clone(),
        ..SolverTrace::default()
    };
    let mut eps = cfg.eps0;
    let mut t = 0;
    let mut r = start;

    for pass in 0..cfg.max_outer_iters {
        trace.passes = pass + 1;
        let run = run_inner(r, costs, &pass_region, cfg, &mut eps, &mut t, &mut trace)?;
        r = run.rates;
        let final_step = trace.last().map_or(cfg.eps0, |rec| rec.step);
        if !run.converged {
            return Ok(Solution {
                allocation: Allocation(r),
                status: Status::IterationLimit,
                trace,
                region: pass_region,
                final_step,
            });
        }
        let pinned: Vec<usize> = (0..r.len())
            .filter(|&i| unstable[i] && r[i] - lower[i] <= cfg.projection_tol)
            .collect();
        if pinned.is_empty() {
            return Ok(Solution {
                allocation: Allocation(r),
                status: Status::Converged,
                trace,
                region: pass_region,
                final_step,
            });
        }
        if pass + 1 == cfg.max_outer_iters {
            return Ok(Solution {
                allocation: Allocation(r),
                status: Status::IterationLimit,
                trace,
                region: pass_region,
                final_step,
            });
        }
        let before = lower.clone();
        for (lo, _) in lower.iter_mut().zip(unstable).filter(|(_, &u)| u) {
            *lo *= cfg.eta;
        }
        trace.shrinks.push(ShrinkEvent {
            pass,
            iteration: t,
            pinned,
            lower_before: before,
            lower_after: lower.clone(),
        });
        pass_region = region.with_lower(lower.clone())?;
        costs.prepare(&lower)?;
    }
    unreachable!("outer loop returns on its last pass")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::AffineCosts;

    fn three_agent_affine() -> (AffineCosts, FeasibleRegion) {
        (
            AffineCosts::new(vec![4.0, 1.5, 1.5], vec![1.0; 3]).unwrap(),
            FeasibleRegion::rates(1.5, vec![0.0; 3]).unwrap(),
        )
    }

    #[test]
    fn step_rule_matches_closed_form() {
        let mut eps = 0.1;
        for t in 1..50 {
            eps = next_step(eps);
            assert!((eps - 0.1 / (1.0 + t as f64 * 0.1)).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_push_keeps_equal_split() {
        let costs = AffineCosts::new(vec![2.0, 2.0], vec![1.0, 1.0]).unwrap();
        let region = FeasibleRegion::rates(1.0, vec![0.0; 2]).unwrap();
        let next = step_map(&Allocation(vec![0.5, 0.5]), 0.1, &costs, &region).unwrap();
        assert!((next.0[0] - 0.5).abs() < 1e-12 && (next.0[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unprojected_point_inside_region_is_returned() {
        let costs = AffineCosts::new(vec![4.0, 1.5], vec![1.0, 1.0]).unwrap();
        let region = FeasibleRegion::rates(1.5, vec![0.0; 2]).unwrap();
        let next = step_map(&Allocation(vec![0.5, 0.5]), 0.1, &costs, &region).unwrap();
        assert!((next.0[0] - 0.85).abs() < 1e-12 && (next.0[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_of_step_map() {
        // J = (3, 1.25, 1.25) lies in the normal cone at (1, 0.25, 0.25).
        let (costs, region) = three_agent_affine();
        let r = Allocation(vec![1.0, 0.25, 0.25]);
        let next = step_map(&r, 0.3, &costs, &region).unwrap();
        assert!(distance(next.rates(), r.rates()) < 1e-12);
    }

    #[test]
    fn single_agent_takes_everything() {
        let costs = AffineCosts::new(vec![3.0], vec![0.7]).unwrap();
        let region = FeasibleRegion::rates(1.0, vec![0.0]).unwrap();
        let sol = solve_inner(
            &Allocation(vec![0.2]),
            &costs,
            &region,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(sol.converged());
        assert!((sol.allocation.0[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn three_agent_affine_solution_face() {
        let (costs, region) = three_agent_affine();
        let sol = solve_inner(
            &region.interior_point(),
            &costs,
            &region,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(sol.converged());
        let r = sol.allocation.rates();
        assert!((r[0] - 1.0).abs() <= 1e-3);
        assert!(r[1] + r[2] <= 0.5 + 1e-3);
    }

    #[test]
    fn identical_agents_split_evenly() {
        let costs = AffineCosts::new(vec![2.0; 3], vec![1.5; 3]).unwrap();
        let region = FeasibleRegion::rates(1.2, vec![0.0; 3]).unwrap();
        let sol = solve_inner(
            &Allocation(vec![0.1, 0.6, 0.3]),
            &costs,
            &region,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(sol.converged());
        for &ri in sol.allocation.rates() {
            assert!((ri - 0.4).abs() < 1e-3, "{ri}");
        }
    }

    #[test]
    fn initial_point_outside_region_is_rejected() {
        let (costs, region) = three_agent_affine();
        let res = solve_inner(
            &Allocation(vec![1.0, 1.0, 1.0]),
            &costs,
            &region,
            &SolverConfig::default(),
        );
        assert!(matches!(res, Err(Error::Domain(_))));
    }

    #[test]
    fn iteration_budget_is_reported() {
        let (costs, region) = three_agent_affine();
        let cfg = SolverConfig {
            max_inner_iters: 2,
            ..SolverConfig::default()
        };
        let sol = solve_inner(&Allocation(vec![0.0, 0.9, 0.6]), &costs, &region, &cfg).unwrap();
        assert_eq!(sol.status, Status::IterationLimit);
        assert_eq!(sol.trace.records.len(), 2);
    }

    #[test]
    fn all_stable_runs_one_pass() {
        let (mut costs, region) = three_agent_affine();
        let sol = solve_maxmin(&mut costs, &region, &SolverConfig::default(), &[false; 3]).unwrap();
        assert!(sol.converged());
        assert_eq!(sol.trace.passes, 1);
        assert!(sol.trace.shrinks.is_empty());
    }

    #[test]
    fn pinned_unstable_agent_relaxes_its_bound() {
        // Equal-cost point: 1.2 - a = 4 (1 - (1 - a)) => a = 0.24, below the
        // first two bounds 0.5 and 0.25.
        let mut costs = AffineCosts::new(vec![1.2, 4.0], vec![1.0, 4.0]).unwrap();
        let region = FeasibleRegion::rates(1.0, vec![0.0; 2]).unwrap();
        let cfg = SolverConfig {
            eta: 0.5,
            ..SolverConfig::default()
        };
        let sol = solve_maxmin(&mut costs, &region, &cfg, &[true, false]).unwrap();
        assert!(sol.converged());
        assert_eq!(sol.trace.shrinks.len(), 2);
        assert_eq!(sol.trace.shrinks[0].pinned, vec![0]);
        assert_eq!(sol.region.lower()[0], 0.125);
        assert!(sol.allocation.0[0] > 0.125);

        // Rerunning with a small bound from the start lands on the same point.
        let small = FeasibleRegion::rates(1.0, vec![0.01, 0.0]).unwrap();
        let direct = solve_inner(&small.interior_point(), &costs, &small, &cfg).unwrap();
        assert!(distance(direct.allocation.rates(), sol.allocation.rates()) < 1e-4);
        assert!((sol.allocation.0[0] - 0.24).abs() < 1e-4);
    }

    #[test]
    fn terminal_error_within_contraction_radius() {
        for (a, slope, total) in [
            (vec![3.0, 2.5, 4.0], vec![1.0, 2.0, 3.0], 1.2),
            (vec![2.0, 2.2, 1.9, 2.5], vec![0.8, 1.5, 1.1, 2.0], 1.5),
            (vec![5.0, 5.5], vec![2.0, 2.5], 1.0),
        ] {
            // water level with every rate interior
            let inv: f64 = slope.iter().map(|x| 1.0 / x).sum();
            let level = (a.iter().zip(&slope).map(|(ai, si)| ai / si).sum::<f64>() - total) / inv;
            let opt: Vec<f64> = a
                .iter()
                .zip(&slope)
                .map(|(ai, si)| (ai - level) / si)
                .collect();
            let costs = AffineCosts::new(a, slope).unwrap();
            let region = FeasibleRegion::rates(total, vec![0.0; opt.len()]).unwrap();
            let cfg = SolverConfig::default();
            let sol = solve_inner(&region.interior_point(), &costs, &region, &cfg).unwrap();
            let (alpha, beta) = crate::cost::global_slope_bounds(&costs, &region).unwrap();
            let q = contraction_sq(sol.final_step, alpha, beta).sqrt();
            let radius = neighborhood_radius(q, cfg.eps_r).unwrap();
            assert!(distance(sol.allocation.rates(), &opt) <= radius);
        }
    }
}
