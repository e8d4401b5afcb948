//! Monte Carlo simulation of the remote error covariance under randomized
//! threshold policies.
//!
//! Step `k` adds `Tr(P(k))` to the running average, then decides `a(k)` from
//! `τ(k)`, the number of steps since the last transmission. A transmission
//! resets `P(k+1) = P̄` and `τ(k+1) = 0`; otherwise `P(k+1) = A P(k) Aᵀ + Q`
//! and `τ` increments. Runs start at the renewal state `P(0) = P̄`, `τ(0) = 0`.
//!
//! Randomness comes from ChaCha8 seeded with the run seed; process `i` of an
//! allocation draws from stream `i`, so per-process results do not depend on
//! scheduling or thread count.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::region::Allocation;
use crate::sensor::{
    classify_stability, steady_state_filter_cov, threshold_from_rate, ProcessModel, Stability,
    ThresholdPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimResult {
    /// Transmissions per step.
    pub empirical_rate: f64,
    /// Time average of `Tr(P(k))` over `k < horizon`.
    pub empirical_avg_error: f64,
    pub horizon: u64,
    pub seed: u64,
}

/// Simulates one process under `policy` for `horizon` steps.
pub fn simulate_policy(
    p: &ProcessModel,
    policy: ThresholdPolicy,
    horizon: u64,
    seed: u64,
) -> Result<SimResult> {
    let pbar = steady_state_filter_cov(p)?;
    run(p, &pbar, Some(policy), horizon, seed, 0)
}

/// Simulates every process at its allocated rate. A rate of exactly 0 means
/// the sensor never transmits, which is only allowed for stable processes.
pub fn simulate_allocation(
    ps: &[ProcessModel],
    r: &Allocation,
    horizon: u64,
    seed: u64,
) -> Result<Vec<SimResult>> {
    check_dim(ps.len(), r.len())?;
    let policies = ps
        .iter()
        .zip(r.rates())
        .enumerate()
        .map(|(i, (p, &rate))| {
            if rate == 0.0 {
                if classify_stability(p.a())? == Stability::Unstable {
                    return Err(Error::Domain(format!(
                        "process {}: an unstable process cannot be left without transmissions",
                        i + 1
                    )));
                }
                Ok(None)
            } else {
                threshold_from_rate(rate)
                    .map(Some)
                    .map_err(|e| Error::Domain(format!("process {}: {e}", i + 1)))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    ps.par_iter()
        .zip(policies.par_iter())
        .enumerate()
        .map(|(i, (p, policy))| {
            let pbar = steady_state_filter_cov(p)?;
            run(p, &pbar, *policy, horizon, seed, i as u64)
        })
        .collect()
}

fn run(
    p: &ProcessModel,
    pbar: &DMatrix<f64>,
    policy: Option<ThresholdPolicy>,
    horizon: u64,
    seed: u64,
    stream: u64,
) -> Result<SimResult> {
    if horizon == 0 {
        return Err(Error::Domain("horizon must be positive".into()));
    }
    if let Some(pol) = policy {
        if !(0.0..=1.0).contains(&pol.b) {
            return Err(Error::Domain(format!(
                "randomization probability {} outside [0, 1]",
                pol.b
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let a = p.a();
    let at = a.transpose();
    let q = p.q();
    let mut cov = pbar.clone();
    let mut scratch = DMatrix::zeros(cov.nrows(), cov.ncols());
    let mut tau: u64 = 0;
    let mut transmissions: u64 = 0;
    let mut sum = NeumaierSum::default();

    for _ in 0..horizon {
        sum.add(cov.trace());
        let transmit = match policy {
            None => false,
            Some(pol) => match tau.cmp(&pol.xi) {
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Equal => {
                    if pol.b >= 1.0 {
                        true
                    } else if pol.b <= 0.0 {
                        false
                    } else {
                        rng.gen::<f64>() < pol.b
                    }
                }
            },
        };
        if transmit {
            cov.copy_from(pbar);
            tau = 0;
            transmissions += 1;
        } else {
            scratch.gemm(1.0, a, &cov, 0.0);
            cov.gemm(1.0, &scratch, &at, 0.0);
            cov += q;
            tau += 1;
        }
    }

    let avg = sum.total() / horizon as f64;
    if !avg.is_finite() {
        return Err(Error::Numerical(
            "simulated error covariance overflowed".into(),
        ));
    }
    Ok(SimResult {
        empirical_rate: transmissions as f64 / horizon as f64,
        empirical_avg_error: avg,
        horizon,
        seed,
    })
}

/// Compensated summation; long horizons add up 10⁶+ terms.
#[derive(Default)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{build_cost_curve, no_comm_limit, DEFAULT_TAIL_TOL};
    use nalgebra::dmatrix;

    fn memoryless() -> ProcessModel {
        ProcessModel::relaxed(dmatrix![0.0], dmatrix![1.0], dmatrix![1.0], dmatrix![1.0]).unwrap()
    }

    fn two_state() -> ProcessModel {
        ProcessModel::new(
            dmatrix![1.1, 1.0; 0.0, 1.0],
            dmatrix![1.0, 0.0; 0.0, 4.0],
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    #[test]
    fn always_transmit_stays_at_filter_error() {
        let p = two_state();
        let res = simulate_policy(&p, ThresholdPolicy::new(0, 1.0).unwrap(), 10_000, 3).unwrap();
        let expected = steady_state_filter_cov(&p).unwrap().trace();
        assert_eq!(res.empirical_rate, 1.0);
        assert!((res.empirical_avg_error - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn deterministic_cycle_average() {
        let p = two_state();
        let curve = build_cost_curve(&p, 0.2, DEFAULT_TAIL_TOL).unwrap();
        let horizon = 300_000;
        let res = simulate_policy(&p, ThresholdPolicy::new(2, 1.0).unwrap(), horizon, 0).unwrap();
        // horizon is a multiple of the cycle length 3.
        let expected = curve.cumsums()[2] / 3.0;
        assert!((res.empirical_avg_error - expected).abs() <= 1e-9 * expected);
        assert!((res.empirical_rate - 1.0 / 3.0).abs() <= 1.0 / horizon as f64);
    }

    #[test]
    fn randomized_policy_matches_closed_form() {
        let p = memoryless();
        let res = simulate_policy(&p, threshold_from_rate(0.4).unwrap(), 1_000_000, 11).unwrap();
        assert!((res.empirical_avg_error - 0.8).abs() <= 0.01 * 0.8);
        assert!((res.empirical_rate - 0.4).abs() <= 3.0 * (0.4f64 * 0.6 / 1e6).sqrt());
    }

    #[test]
    fn same_seed_same_result() {
        let p = two_state();
        let pol = threshold_from_rate(0.37).unwrap();
        let a = simulate_policy(&p, pol, 50_000, 42).unwrap();
        let b = simulate_policy(&p, pol, 50_000, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_policy(&p, pol, 50_000, 43).unwrap();
        assert_ne!(a.empirical_avg_error, c.empirical_avg_error);
    }

    #[test]
    fn allocation_runs_each_process() {
        let ps = vec![two_state(), memoryless()];
        let res = simulate_allocation(&ps, &Allocation(vec![1.0, 1.0]), 1000, 1).unwrap();
        assert_eq!(
            res[0].empirical_avg_error,
            steady_state_filter_cov(&ps[0]).unwrap().trace()
        );
        assert_eq!(res[1].empirical_avg_error, 0.5);
    }

    #[test]
    fn zero_rate_stable_matches_lyapunov_limit() {
        let p = ProcessModel::scalar(0.5, 1.0, 1.0, 1.0).unwrap();
        let res = simulate_allocation(std::slice::from_ref(&p), &Allocation(vec![0.0]), 100_000, 0)
            .unwrap();
        let limit = no_comm_limit(&p).unwrap();
        assert_eq!(res[0].empirical_rate, 0.0);
        assert!((res[0].empirical_avg_error - limit).abs() <= 0.01 * limit);
    }

    #[test]
    fn zero_rate_unstable_is_refused() {
        let res = simulate_allocation(&[two_state()], &Allocation(vec![0.0]), 100, 0);
        assert!(matches!(res, Err(Error::Domain(_))));
    }

    #[test]
    fn parallel_matches_sequential() {
        let ps = vec![two_state(), memoryless(), two_state()];
        let r = Allocation(vec![0.3, 0.55, 0.71]);
        let par = simulate_allocation(&ps, &r, 20_000, 9).unwrap();
        for (i, p) in ps.iter().enumerate() {
            let pbar = steady_state_filter_cov(p).unwrap();
            let seq = run(
                p,
                &pbar,
                Some(threshold_from_rate(r.0[i]).unwrap()),
                20_000,
                9,
                i as u64,
            )
            .unwrap();
            assert_eq!(par[i], seq);
        }
    }
}
