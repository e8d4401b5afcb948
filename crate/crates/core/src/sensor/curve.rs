//! Optimal average estimation error as a function of transmission rate.
//!
//! After a transmission the remote error covariance resets to the filtered
//! steady state `P̄`; `t` steps later it is `h^t(P̄)` with `h(X) = AXAᵀ + Q`.
//! With `traces[t] = Tr(h^t(P̄))` and prefix sums `S_k`, the randomized
//! threshold policy for rate `r` (threshold `ξ`, probability `b`) has renewal
//! cycles of length `ξ+1` (cost `S_ξ`) or `ξ+2` (cost `S_ξ + traces[ξ+1]`),
//! which averages to
//!
//! ```text
//! J(r) = traces[ξ+1] + r · (S_ξ - (ξ+1) · traces[ξ+1])
//! ```
//!
//! Linear on each `r ∈ [1/(ξ+2), 1/(ξ+1)]`, continuous at the breakpoints,
//! and convex because the segment slopes `Σ_{t≤ξ} (traces[t] - traces[ξ+1])`
//! become steeper as `ξ` grows.

use nalgebra::DMatrix;

use super::policy::{threshold_from_rate, threshold_index};
use super::process::{
    classify_stability, no_comm_limit, steady_state_filter_cov, ProcessModel, Stability,
};
use crate::error::{Error, Result};

/// Default relative tolerance for truncating a stable process's trace tail.
pub const DEFAULT_TAIL_TOL: f64 = 1e-10;
const MAX_TRACE_LEN: usize = 10_000_000;
/// Slack on the domain floor so a rate rounded just below it still evaluates.
const FLOOR_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CostCurve {
    traces: Vec<f64>,
    cumsums: Vec<f64>,
    stable_limit: Option<f64>,
    domain_floor: f64,
    filter_cov: DMatrix<f64>,
}

/// Builds the cost curve of one process.
///
/// Unstable processes need `domain_floor > 0`; their traces are computed up
/// to `ξ_max + 1` with `ξ_max = ⌊1/domain_floor - 1⌋`. Stable processes
/// compute traces until they are within `tail_tol` (relative) of the
/// never-transmit limit and treat every later trace as equal to that limit.
pub fn build_cost_curve(p: &ProcessModel, domain_floor: f64, tail_tol: f64) -> Result<CostCurve> {
    if !(0.0..=1.0).contains(&domain_floor) {
        return Err(Error::Domain(format!(
            "domain floor {domain_floor} outside [0, 1]"
        )));
    }
    let filter_cov = steady_state_filter_cov(p)?;
    let stability = classify_stability(p.a())?;

    let mut traces = Vec::new();
    let mut cov = filter_cov.clone();
    let stable_limit = match stability {
        Stability::Unstable => {
            if domain_floor <= 0.0 {
                return Err(Error::Domain(
                    "an unstable process needs a positive minimum rate: its cost is unbounded at 0"
                        .into(),
                ));
            }
            let xi_max = threshold_from_rate(domain_floor)?.xi as usize;
            if xi_max + 2 > MAX_TRACE_LEN {
                return Err(Error::Domain(format!(
                    "domain floor {domain_floor} needs too many trace terms"
                )));
            }
            traces.reserve(xi_max + 2);
            for _ in 0..xi_max + 2 {
                let tr = cov.trace();
                if !tr.is_finite() {
                    return Err(Error::Numerical(format!(
                        "error trace overflowed before reaching rate {domain_floor}"
                    )));
                }
                traces.push(tr);
                cov = p.predict(&cov);
            }
            None
        }
        Stability::Stable => {
            let limit = no_comm_limit(p)?;
            loop {
                let tr = cov.trace();
                traces.push(tr);
                if (limit - tr).abs() <= tail_tol * limit.abs() || limit == 0.0 {
                    break;
                }
                if traces.len() >= MAX_TRACE_LEN {
                    return Err(Error::Numerical(
                        "stable trace sequence did not reach its limit".into(),
                    ));
                }
                cov = p.predict(&cov);
            }
            // Need at least traces[0] and traces[1] for the first segment.
            if traces.len() < 2 {
                traces.push(p.predict(&filter_cov).trace());
            }
            Some(limit)
        }
    };

    let cumsums = traces
        .iter()
        .scan(0.0, |acc, &t| {
            *acc += t;
            Some(*acc)
        })
        .collect();
    Ok(CostCurve {
        traces,
        cumsums,
        stable_limit,
        domain_floor,
        filter_cov,
    })
}

impl CostCurve {
    pub fn traces(&self) -> &[f64] {
        &self.traces
    }

    pub fn cumsums(&self) -> &[f64] {
        &self.cumsums
    }

    pub fn stable_limit(&self) -> Option<f64> {
        self.stable_limit
    }

    pub fn is_stable(&self) -> bool {
        self.stable_limit.is_some()
    }

    pub fn domain_floor(&self) -> f64 {
        self.domain_floor
    }

    /// `P̄`, the covariance right after a received transmission.
    pub fn filter_cov(&self) -> &DMatrix<f64> {
        &self.filter_cov
    }

    fn last_index(&self) -> usize {
        self.traces.len() - 1
    }

    /// `traces[t]`, extended by the stable limit past the stored tail.
    pub fn trace_at(&self, t: usize) -> Result<f64> {
        match (self.traces.get(t), self.stable_limit) {
            (Some(&v), _) => Ok(v),
            (None, Some(limit)) => Ok(limit),
            (None, None) => Err(Error::Domain(format!(
                "trace index {t} below the curve's rate floor"
            ))),
        }
    }

    /// `S_k = Σ_{t ≤ k} traces[t]`, extended like [`CostCurve::trace_at`].
    pub fn cumsum_at(&self, k: usize) -> Result<f64> {
        match (self.cumsums.get(k), self.stable_limit) {
            (Some(&v), _) => Ok(v),
            (None, Some(limit)) => {
                let last = self.last_index();
                Ok(self.cumsums[last] + (k - last) as f64 * limit)
            }
            (None, None) => Err(Error::Domain(format!(
                "cumulative index {k} below the curve's rate floor"
            ))),
        }
    }

    /// Slope of `J` on segment `ξ`, i.e. for `r ∈ [1/(ξ+2), 1/(ξ+1)]`.
    pub fn segment_slope(&self, xi: usize) -> Result<f64> {
        Ok(self.cumsum_at(xi)? - (xi as f64 + 1.0) * self.trace_at(xi + 1)?)
    }

    /// Index of the segment holding `r` (the one to its left at a
    /// breakpoint), and whether that is the stable tail past the stored
    /// traces.
    fn segment_of(&self, r: f64) -> (usize, bool) {
        let idx = threshold_index(r);
        let last = self.last_index();
        if self.is_stable() && idx >= last as f64 {
            (last, true)
        } else {
            (idx as usize, false)
        }
    }

    fn check_rate(&self, r: f64) -> Result<f64> {
        if !(0.0..=1.0 + 1e-12).contains(&r) {
            return Err(Error::Domain(format!("rate {r} outside [0, 1]")));
        }
        if !self.is_stable() && r < self.domain_floor * (1.0 - FLOOR_SLACK) {
            return Err(Error::Domain(format!(
                "rate {r} below the floor {} of an unstable process",
                self.domain_floor
            )));
        }
        Ok(r.min(1.0))
    }

    /// Average estimation error at rate `r`. At `r = 0` a stable process
    /// never transmits and the cost is its prediction-error limit.
    pub fn eval(&self, r: f64) -> Result<f64> {
        let r = self.check_rate(r)?;
        if r == 0.0 {
            return Ok(self
                .stable_limit
                .expect("checked: zero rate only reaches stable curves"));
        }
        let (xi, _) = self.segment_of(r);
        if !self.is_stable() && xi + 1 > self.last_index() {
            return Err(Error::Domain(format!(
                "rate {r} below the curve's rate floor"
            )));
        }
        Ok(self.trace_at(xi + 1)? + r * self.segment_slope(xi)?)
    }

    /// `∫_a^b J(t) dt`, exact on every linear segment.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        if a > b {
            return Ok(-self.integral(b, a)?);
        }
        let a = self.check_rate(a)?;
        let b = self.check_rate(b)?;
        let mut total = 0.0;
        let mut hi = b;
        while hi > a {
            let (xi, tail) = self.segment_of(hi);
            let seg_lo = if tail { 0.0 } else { 1.0 / (xi as f64 + 2.0) };
            let lo = seg_lo.max(a);
            let intercept = self.trace_at(xi + 1)?;
            let slope = self.segment_slope(xi)?;
            total += intercept * (hi - lo) + 0.5 * slope * (hi * hi - lo * lo);
            if lo >= hi {
                break;
            }
            hi = lo;
        }
        Ok(total)
    }

    /// Smallest and largest slope magnitude `(α, β)` over the segments that
    /// overlap `[lb, 1]`.
    pub fn lipschitz_bounds(&self, lb: f64) -> Result<(f64, f64)> {
        let lb = self.check_rate(lb)?;
        let last_segment = if lb == 0.0 {
            self.last_index()
        } else {
            // Segments ξ with 1/(ξ+1) > lb, and at least the first one.
            let idx = threshold_index(lb);
            let x = 1.0 / lb - 1.0;
            let k = if (x - idx).abs() <= 1e-12 * x.max(1.0) {
                idx - 1.0
            } else {
                idx
            };
            let k = k.max(0.0);
            if self.is_stable() {
                (k.min(self.last_index() as f64)) as usize
            } else {
                k as usize
            }
        };
        let mut alpha = f64::INFINITY;
        let mut beta = 0.0_f64;
        for xi in 0..=last_segment {
            let slope = self.segment_slope(xi)?;
            if !(slope < 0.0) {
                return Err(Error::Assumption(format!(
                    "cost curve is flat on segment {xi} (slope {slope})"
                )));
            }
            alpha = alpha.min(-slope);
            beta = beta.max(-slope);
        }
        Ok((alpha, beta))
    }
}

/// Free-function form of [`CostCurve::eval`].
pub fn cost_eval(curve: &CostCurve, r: f64) -> Result<f64> {
    curve.eval(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn memoryless() -> ProcessModel {
        // A = 0, Q = 1, C = 1, R = 1: P̄ = 1/2 and h(X) = 1 for every X.
        ProcessModel::relaxed(dmatrix![0.0], dmatrix![1.0], dmatrix![1.0], dmatrix![1.0]).unwrap()
    }

    #[test]
    fn memoryless_traces() {
        let c = build_cost_curve(&memoryless(), 0.0, DEFAULT_TAIL_TOL).unwrap();
        assert_eq!(c.traces(), &[0.5, 1.0]);
        assert_eq!(c.stable_limit(), Some(1.0));
        assert_eq!(c.trace_at(7).unwrap(), 1.0);
    }

    #[test]
    fn memoryless_cost_is_affine() {
        let c = build_cost_curve(&memoryless(), 0.0, DEFAULT_TAIL_TOL).unwrap();
        assert!((c.eval(0.5).unwrap() - 0.75).abs() < 1e-12);
        for r in [1.0, 0.9, 0.4, 1.0 / 3.0, 0.01, 1e-9] {
            assert!(
                (c.eval(r).unwrap() - (1.0 - 0.5 * r)).abs() < 1e-12,
                "r = {r}"
            );
        }
        assert_eq!(c.eval(0.0).unwrap(), 1.0);
        assert_eq!(c.lipschitz_bounds(0.0).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn full_rate_is_filter_error() {
        let p = ProcessModel::scalar(1.2, 1.0, 1.0, 1.0).unwrap();
        let c = build_cost_curve(&p, 0.01, DEFAULT_TAIL_TOL).unwrap();
        assert_eq!(c.eval(1.0).unwrap(), c.filter_cov().trace());
    }

    #[test]
    fn single_segment_domain() {
        let p = ProcessModel::scalar(1.2, 1.0, 1.0, 1.0).unwrap();
        let c = build_cost_curve(&p, 1.0, DEFAULT_TAIL_TOL).unwrap();
        assert_eq!(c.traces().len(), 2);
        let (a, b) = c.lipschitz_bounds(1.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, -c.segment_slope(0).unwrap());
    }

    #[test]
    fn unstable_recursion() {
        let p = ProcessModel::scalar(1.2, 1.0, 1.0, 1.0).unwrap();
        let c = build_cost_curve(&p, 0.05, DEFAULT_TAIL_TOL).unwrap();
        assert_eq!(c.traces().len(), 21);
        for w in c.traces().windows(2) {
            assert!(w[1] > w[0]);
            assert!((w[1] - (1.44 * w[0] + 1.0)).abs() < 1e-12 * w[1]);
        }
    }

    #[test]
    fn unstable_domain_errors() {
        let p = ProcessModel::scalar(1.2, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            build_cost_curve(&p, 0.0, DEFAULT_TAIL_TOL),
            Err(Error::Domain(_))
        ));
        let c = build_cost_curve(&p, 0.1, DEFAULT_TAIL_TOL).unwrap();
        assert!(c.eval(0.1).is_ok());
        assert!(matches!(c.eval(0.05), Err(Error::Domain(_))));
        assert!(matches!(c.eval(0.0), Err(Error::Domain(_))));
        assert!(matches!(c.eval(1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn steepest_segment_contains_lower_bound() {
        let p = ProcessModel::scalar(1.2, 1.0, 1.0, 1.0).unwrap();
        let c = build_cost_curve(&p, 0.01, DEFAULT_TAIL_TOL).unwrap();
        let (alpha, beta) = c.lipschitz_bounds(0.3).unwrap();
        // 0.3 lies on segment ξ = 2.
        assert_eq!(beta, -c.segment_slope(2).unwrap());
        assert_eq!(alpha, -c.segment_slope(0).unwrap());
        // A breakpoint lower bound does not pull in the segment below it.
        let (_, beta) = c.lipschitz_bounds(0.25).unwrap();
        assert_eq!(beta, -c.segment_slope(2).unwrap());
    }

    #[test]
    fn integral_of_affine_curve() {
        let c = build_cost_curve(&memoryless(), 0.0, DEFAULT_TAIL_TOL).unwrap();
        // ∫_0^1 (1 - t/2) dt = 3/4
        assert!((c.integral(0.0, 1.0).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(c.integral(0.3, 0.3).unwrap(), 0.0);
        assert!((c.integral(0.6, 0.2).unwrap() + c.integral(0.2, 0.6).unwrap()).abs() < 1e-15);
    }
}
