//! Graph-local computation of the max-min allocation.
//!
//! The centralized iteration is projected gradient descent on
//! `Σ_i J̃_i(r_i)` with `J̃_i(r) = -∫ J_i`, subject to the shared budget. Each
//! node keeps its own copy `λ_i` of the budget multiplier and only talks to
//! its graph neighbours; the copies are driven to agreement through the
//! consensus matrix `L` (`L_ii = 1`, `L_ij = -1/deg(i)` for neighbours).
//!
//! Updates follow a perturbed primal-dual scheme: a look-ahead ("hat") step
//! for every variable, then a main step in which each player uses the
//! opponent's look-ahead point.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::cost::CostModel;
use crate::error::{check_dim, Error, Result};
use crate::region::{Allocation, FeasibleRegion};
use crate::sensor::CostCurve;
use crate::solver::{solve_maxmin, Solution, SolverConfig};

const DIVERGENCE_LIMIT: f64 = 1e6;

/// `J̃(r) = ∫_base^r -J(t) dt`, exact per linear segment.
///
/// The integral starts at `base` (the node's lower bound) rather than 0
/// because the cost of an unstable process is not integrable at 0; the shift
/// is a constant and leaves every gradient unchanged.
pub fn tilde_cost(curve: &CostCurve, r: f64, base: f64) -> Result<f64> {
    if base > r {
        return Err(Error::Domain(format!(
            "integration base {base} exceeds rate {r}"
        )));
    }
    Ok(-curve.integral(base, r)?)
}

/// Undirected communication graph without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl CommGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("graph has no nodes".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Config(format!(
                    "edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::Config(format!("self-loop at node {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self { n, edges: set })
    }

    /// Builds a graph from per-node neighbour lists.
    pub fn from_adjacency(adjacency: &[Vec<usize>]) -> Result<Self> {
        let edges = adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, nbrs)| nbrs.iter().map(move |&j| (i, j)));
        Self::new(adjacency.len(), edges)
    }

    pub fn ring(n: usize) -> Result<Self> {
        match n {
            0 => Self::new(0, []),
            1 => Self::new(1, []),
            2 => Self::new(2, [(0, 1)]),
            _ => Self::new(n, (0..n).map(|i| (i, (i + 1) % n))),
        }
    }

    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    /// Node 0 joined to every other node.
    pub fn star(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (0, i)))
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == i || b == i)
            .count()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Row-normalized consensus matrix; every row sums to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix {
    l: DMatrix<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl ConsensusMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `(Lx)_i = x_i - mean of x over the neighbours of i`. Evaluated as a
    /// neighbour mean so that constant vectors map to exactly zero.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            self.neighbors.iter().enumerate().map(|(i, nbrs)| {
                if nbrs.is_empty() {
                    0.0
                } else {
                    x[i] - nbrs.iter().map(|&j| x[j]).sum::<f64>() / nbrs.len() as f64
                }
            }),
        )
    }

    pub fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        self.l.tr_mul(x)
    }
}

/// `L_ii = 1`, `L_ij = -1/deg(i)` for neighbours `j`, 0 elsewhere. A lone
/// node has nothing to agree with and gets `L = [0]`.
pub fn consensus_matrix(g: &CommGraph) -> Result<ConsensusMatrix> {
    if !g.is_connected() {
        return Err(Error::Config(
            "communication graph is disconnected; the dual copies cannot agree".into(),
        ));
    }
    let n = g.node_count();
    if n == 1 {
        return Ok(ConsensusMatrix {
            l: DMatrix::zeros(1, 1),
            neighbors: vec![vec![]],
        });
    }
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| g.neighbors(i)).collect();
    let mut l = DMatrix::identity(n, n);
    for (i, nbrs) in neighbors.iter().enumerate() {
        let w = 1.0 / nbrs.len() as f64;
        for &j in nbrs {
            l[(i, j)] = -w;
        }
    }
    Ok(ConsensusMatrix { l, neighbors })
}

/// How the dual copies are coupled in the Lagrangian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DualCoupling {
    /// Exact constraint `Lλ = 0` with its own multiplier `ν`:
    /// `𝓛 = Σ (J̃_i + λ_i (r_i - R/n)) - νᵀ L λ`, minimized over `(r, ν)`.
    /// Saddle points have `λ` in consensus and a tight budget.
    #[default]
    ConsensusMultiplier,
    /// Quadratic penalty `-λᵀLλ`, dual gradient `r - R/n - (L + Lᵀ)λ`.
    SymmetricPenalty,
    /// Quadratic penalty with the unsymmetrized dual gradient `r - R/n - Lλ`.
    LiteralPenalty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `a / (k + c)`.
    Diminishing {
        a: f64,
        c: f64,
    },
    Constant(f64),
}

impl StepSchedule {
    pub fn step(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Diminishing { a, c } => a / (k as f64 + c),
            StepSchedule::Constant(eps) => eps,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Diminishing { a, c } => a > 0.0 && c > 0.0,
            StepSchedule::Constant(eps) => eps > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid step schedule {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedConfig {
    pub steps: StepSchedule,
    pub hat_steps: StepSchedule,
    pub coupling: DualCoupling,
    /// Stop once `‖Δr‖ + ‖Δλ‖ + ‖Δν‖ ≤ eps_r`.
    pub eps_r: f64,
    pub max_iters: usize,
    /// Keep every `record_every`-th iterate in the trace (the last one is
    /// always kept).
    pub record_every: usize,
}

impl Default for DistributedConfig {
    fn default() -> Self {
        let steps = StepSchedule::Constant(0.05);
        Self {
            steps,
            hat_steps: steps,
            coupling: DualCoupling::default(),
            eps_r: 1e-9,
            max_iters: 2_000_000,
            record_every: 100,
        }
    }
}

/// Per-node primal and dual iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub rates: Vec<f64>,
    /// Local copies of the budget multiplier; nonnegative.
    pub lambdas: Vec<f64>,
    /// Multipliers of the consensus constraint (zero unless the coupling is
    /// [`DualCoupling::ConsensusMultiplier`]).
    pub consensus: Vec<f64>,
}

impl DualState {
    /// `max λ - min λ`.
    pub fn dual_spread(&self) -> f64 {
        let max = self
            .lambdas
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let min = self.lambdas.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualRecord {
    pub iteration: usize,
    pub rates: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct DistributedSolution {
    pub allocation: Allocation,
    pub state: DualState,
    pub trace: Vec<DualRecord>,
    pub iterations: usize,
    pub converged: bool,
}

struct Problem<'a, C: ?Sized> {
    costs: &'a C,
    region: &'a FeasibleRegion,
    l: &'a ConsensusMatrix,
    share: f64,
    coupling: DualCoupling,
}

impl<C: CostModel + ?Sized> Problem<'_, C> {
    /// `∇_r 𝓛 = -J(r) + λ`.
    fn grad_r(&self, r: &DVector<f64>, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        let j = self.costs.costs(r.as_slice())?;
        Ok(lambda - DVector::from_vec(j))
    }

    /// `∇_λ 𝓛`.
    fn grad_lambda(
        &self,
        r: &DVector<f64>,
        lambda: &DVector<f64>,
        nu: &DVector<f64>,
    ) -> DVector<f64> {
        let coupling = match self.coupling {
            DualCoupling::ConsensusMultiplier => self.l.apply_transpose(nu),
            DualCoupling::SymmetricPenalty => self.l.apply(lambda) + self.l.apply_transpose(lambda),
            DualCoupling::LiteralPenalty => self.l.apply(lambda),
        };
        r.add_scalar(-self.share) - coupling
    }

    /// `∇_ν 𝓛 = -Lλ`.
    fn grad_nu(&self, lambda: &DVector<f64>) -> DVector<f64> {
        match self.coupling {
            DualCoupling::ConsensusMultiplier => -self.l.apply(lambda),
            _ => DVector::zeros(lambda.len()),
        }
    }

    fn project_box(&self, x: DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.region.lower().iter().zip(self.region.upper()))
                .map(|(&v, (&lo, &hi))| v.clamp(lo, hi)),
        )
    }
}

fn project_nonneg(x: DVector<f64>) -> DVector<f64> {
    x.map(|v| v.max(0.0))
}

/// Perturbed primal-dual iteration over `g`, one node per agent. Each node
/// owns the resource share `total / n` in its local Lagrangian term.
pub fn solve_distributed<C: CostModel + ?Sized>(
    costs: &C,
    region: &FeasibleRegion,
    g: &CommGraph,
    cfg: &DistributedConfig,
) -> Result<DistributedSolution> {
    let n = region.dim();
    check_dim(n, costs.dim())?;
    check_dim(n, g.node_count())?;
    cfg.steps.validate()?;
    cfg.hat_steps.validate()?;
    if !(cfg.eps_r > 0.0) || cfg.max_iters == 0 {
        return Err(Error::Config(
            "distributed solver needs eps_r > 0 and max_iters > 0".into(),
        ));
    }
    let l = consensus_matrix(g)?;
    let problem = Problem {
        costs,
        region,
        l: &l,
        share: region.total() / n as f64,
        coupling: cfg.coupling,
    };

    let mut r = problem.project_box(DVector::from_element(n, problem.share));
    let mut lambda = DVector::zeros(n);
    let mut nu = DVector::zeros(n);
    let mut trace = Vec::new();
    let record_every = cfg.record_every.max(1);

    for k in 0..cfg.max_iters {
        let eps = cfg.steps.step(k);
        let hat = cfg.hat_steps.step(k);

        let g_r = problem.grad_r(&r, &lambda)?;
        let g_lambda = problem.grad_lambda(&r, &lambda, &nu);
        let g_nu = problem.grad_nu(&lambda);
        let r_hat = problem.project_box(&r - hat * g_r);
        let lambda_hat = project_nonneg(&lambda + hat * g_lambda);
        let nu_hat = &nu - hat * g_nu;

        let r_next = problem.project_box(&r - eps * problem.grad_r(&r, &lambda_hat)?);
        let lambda_next =
            project_nonneg(&lambda + eps * problem.grad_lambda(&r_hat, &lambda, &nu_hat));
        let nu_next = &nu - eps * problem.grad_nu(&lambda_hat);

        let residual =
            (&r_next - &r).norm() + (&lambda_next - &lambda).norm() + (&nu_next - &nu).norm();
        r = r_next;
        lambda = lambda_next;
        nu = nu_next;

        if r.norm().max(lambda.norm()).max(nu.norm()) > DIVERGENCE_LIMIT || !residual.is_finite() {
            return Err(Error::Numerical(format!(
                "distributed iteration diverged at step {k}"
            )));
        }
        let done = residual <= cfg.eps_r;
        if k % record_every == 0 || done || k + 1 == cfg.max_iters {
            trace.push(DualRecord {
                iteration: k + 1,
                rates: r.as_slice().to_vec(),
                lambdas: lambda.as_slice().to_vec(),
                residual,
            });
        }
        if done {
            return Ok(finish(r, lambda, nu, trace, k + 1, true));
        }
    }
    Ok(finish(r, lambda, nu, trace, cfg.max_iters, false))
}

fn finish(
    r: DVector<f64>,
    lambda: DVector<f64>,
    nu: DVector<f64>,
    trace: Vec<DualRecord>,
    iterations: usize,
    converged: bool,
) -> DistributedSolution {
    let rates = r.as_slice().to_vec();
    DistributedSolution {
        allocation: Allocation(rates.clone()),
        state: DualState {
            rates,
            lambdas: lambda.as_slice().to_vec(),
            consensus: nu.as_slice().to_vec(),
        },
        trace,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub centralized: Solution,
    pub distributed: DistributedSolution,
    /// `‖r_distributed - r_centralized‖∞`.
    pub linf_gap: f64,
    /// `|max_i J_i(r_d) - max_i J_i(r_c)|`.
    pub value_gap: f64,
    pub centralized_value: f64,
    pub distributed_value: f64,
}

/// Solves the same instance centrally and over `g`, then compares. The
/// distributed run uses the box the centralized outer loop ended with.
pub fn compare_with_centralized<C: CostModel + ?Sized>(
    costs: &mut C,
    region: &FeasibleRegion,
    unstable: &[bool],
    solver: &SolverConfig,
    g: &CommGraph,
    cfg: &DistributedConfig,
) -> Result<Comparison> {
    let centralized = solve_maxmin(costs, region, solver, unstable)?;
    let distributed = solve_distributed(costs, &centralized.region, g, cfg)?;
    let rc = centralized.allocation.rates();
    let rd = distributed.allocation.rates();
    let linf_gap = rc
        .iter()
        .zip(rd)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let max_cost = |r: &[f64]| -> Result<f64> {
        Ok(costs
            .costs(r)?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max))
    };
    let centralized_value = max_cost(rc)?;
    let distributed_value = max_cost(rd)?;
    Ok(Comparison {
        linf_gap,
        value_gap: (distributed_value - centralized_value).abs(),
        centralized_value,
        distributed_value,
        centralized,
        distributed,
    })
}
