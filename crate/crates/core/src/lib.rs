//! Max-min fair allocation of a shared resource, with a remote-estimation
//! sensor scheduling instantiation.
//!
//! The centralized solver ([`solve_maxmin`]) iterates `r ← P(r + ε J(r))`
//! with diminishing steps, where `P` projects onto the budget-and-box region
//! and `J` holds each agent's current cost. [`sensor`] turns LTI processes into
//! rate-to-error curves, [`sim`] checks those curves by Monte Carlo, and
//! [`distributed`] solves the same problem with a graph-local primal-dual
//! iteration.

pub mod cost;
pub mod distributed;
pub mod error;
pub mod game;
pub mod region;
pub mod sensor;
pub mod sim;
pub mod solver;

pub use cost::{check_assumptions, global_slope_bounds, AffineCosts, CostModel};
pub use distributed::{
    compare_with_centralized, consensus_matrix, solve_distributed, tilde_cost, CommGraph,
    Comparison, ConsensusMatrix, DistributedConfig, DistributedSolution, DualCoupling, DualRecord,
    DualState, StepSchedule,
};
pub use error::{Error, Result};
pub use game::{
    check_equilibrium, check_equilibrium_with, game_value, recover_weights, EquilibriumReport,
    EquilibriumTolerances, WeightVector,
};
pub use region::{project_feasible, Allocation, FeasibleRegion};
pub use sensor::{CostCurve, ProcessModel, SensorCosts, Stability, ThresholdPolicy};
pub use sim::{simulate_allocation, simulate_policy, SimResult};
pub use solver::{
    contraction_sq, neighborhood_radius, solve_inner, solve_maxmin, step_map, Solution,
    SolverConfig, SolverTrace, Status,
};
