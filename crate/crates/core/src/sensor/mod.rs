//! Remote-estimation cost models: Kalman filter fixed points, threshold
//! transmission policies and the resulting rate-to-error curves.

mod curve;
mod policy;
mod process;

pub use curve::{build_cost_curve, cost_eval, CostCurve, DEFAULT_TAIL_TOL};
pub use policy::{threshold_from_rate, ThresholdPolicy};
pub use process::{
    classify_stability, lyapunov_limit, no_comm_limit, spectral_radius, steady_state_filter_cov,
    ProcessModel, Stability,
};

use crate::cost::CostModel;
use crate::error::{check_dim, Error, Result};

/// One cost curve per sensor, usable directly by the allocation solvers.
///
/// Curves of unstable processes only cover rates down to their current
/// floor; [`CostModel::prepare`] rebuilds them when the outer loop lowers a
/// bound below that floor.
#[derive(Debug, Clone)]
pub struct SensorCosts {
    processes: Vec<ProcessModel>,
    curves: Vec<CostCurve>,
    stability: Vec<Stability>,
    tail_tol: f64,
}

impl SensorCosts {
    /// Builds curves whose domains reach down to `floors[i]` (ignored for
    /// stable processes, whose curves cover `[0, 1]`).
    pub fn new(processes: Vec<ProcessModel>, floors: &[f64], tail_tol: f64) -> Result<Self> {
        check_dim(processes.len(), floors.len())?;
        let stability = processes
            .iter()
            .map(|p| classify_stability(p.a()))
            .collect::<Result<Vec<_>>>()?;
        let curves = processes
            .iter()
            .zip(floors)
            .zip(&stability)
            .enumerate()
            .map(|(i, ((p, &floor), s))| {
                let floor = if *s == Stability::Stable { 0.0 } else { floor };
                build_cost_curve(p, floor, tail_tol).map_err(|e| annotate(i, e))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            processes,
            curves,
            stability,
            tail_tol,
        })
    }

    pub fn processes(&self) -> &[ProcessModel] {
        &self.processes
    }

    pub fn curves(&self) -> &[CostCurve] {
        &self.curves
    }

    pub fn stability(&self) -> &[Stability] {
        &self.stability
    }

    /// `true` for every process whose cost diverges as its rate goes to 0.
    pub fn unstable_mask(&self) -> Vec<bool> {
        self.stability
            .iter()
            .map(|s| *s == Stability::Unstable)
            .collect()
    }
}

fn annotate(i: usize, e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::Domain(format!("process {}: {m}", i + 1)),
        Error::Numerical(m) => Error::Numerical(format!("process {}: {m}", i + 1)),
        Error::Config(m) => Error::Config(format!("process {}: {m}", i + 1)),
        Error::Assumption(m) => Error::Assumption(format!("process {}: {m}", i + 1)),
        other => other,
    }
}

impl CostModel for SensorCosts {
    fn dim(&self) -> usize {
        self.curves.len()
    }

    fn cost(&self, agent: usize, rate: f64) -> Result<f64> {
        self.curves
            .get(agent)
            .ok_or(Error::Dimension {
                expected: self.curves.len(),
                got: agent + 1,
            })?
            .eval(rate)
            .map_err(|e| annotate(agent, e))
    }

    fn slope_bounds(&self, agent: usize, lower: f64, _upper: f64) -> Option<(f64, f64)> {
        self.curves.get(agent)?.lipschitz_bounds(lower).ok()
    }

    fn prepare(&mut self, lower: &[f64]) -> Result<()> {
        check_dim(self.curves.len(), lower.len())?;
        for i in 0..self.curves.len() {
            let curve = &self.curves[i];
            if !curve.is_stable() && lower[i] < curve.domain_floor() {
                self.curves[i] = build_cost_curve(&self.processes[i], lower[i], self.tail_tol)
                    .map_err(|e| annotate(i, e))?;
            }
        }
        Ok(())
    }
}
