use std::path::Path;

use fairsched::distributed::{compare_with_centralized, Comparison};
use fairsched::sensor::{threshold_from_rate, DEFAULT_TAIL_TOL};
use fairsched::{
    check_equilibrium, contraction_sq, global_slope_bounds, neighborhood_radius,
    simulate_allocation, solve_maxmin, Allocation, CostModel, FeasibleRegion, SensorCosts,
    SimResult, Solution, Stability,
};
use serde_json::json;

use crate::config::RunConfig;
use crate::output::{num, numbered, read_allocation, write_json, CsvOut};
use crate::CliError;

/// Budget overshoot tolerated before a simulated allocation is flagged.
const BUDGET_TOL: f64 = 1e-9;

fn sensor_costs(cfg: &RunConfig, floors: &[f64]) -> Result<SensorCosts, CliError> {
    Ok(SensorCosts::new(
        cfg.processes.clone(),
        floors,
        DEFAULT_TAIL_TOL,
    )?)
}

fn rate_region(cfg: &RunConfig) -> Result<FeasibleRegion, CliError> {
    Ok(FeasibleRegion::rates(
        cfg.total_rate,
        vec![0.0; cfg.processes.len()],
    )?)
}

fn stability_name(s: Stability) -> &'static str {
    match s {
        Stability::Stable => "stable",
        Stability::Unstable => "unstable",
    }
}

pub fn validate(cfg: &RunConfig) -> Result<String, CliError> {
    let costs = sensor_costs(cfg, &vec![cfg.solver.eta; cfg.processes.len()])?;
    let mut lines = vec![format!(
        "ok: {} processes, total_rate {}",
        cfg.processes.len(),
        cfg.total_rate
    )];
    for (i, (p, s)) in cfg.processes.iter().zip(costs.stability()).enumerate() {
        lines.push(format!(
            "  process {}: dim {}, {}",
            i + 1,
            p.state_dim(),
            stability_name(*s)
        ));
    }
    if let Some(d) = &cfg.distributed {
        lines.push(format!("  distributed: {} edges", d.graph.edges().count()));
    }
    Ok(lines.join("\n"))
}

#[derive(Debug)]
pub struct SolveOutcome {
    pub solution: Solution,
    pub costs: Vec<f64>,
    pub summary: serde_json::Value,
}

impl SolveOutcome {
    pub fn converged(&self) -> bool {
        self.solution.converged()
    }
}

/// Solves the configured instance and writes `allocation_trace.csv`,
/// `cost_trace.csv`, `error_decay.csv`, `allocation.csv` and `summary.json`
/// into `out`. Files are written whether or not the solver converged.
pub fn run_solve(cfg: &RunConfig, out: &Path) -> Result<SolveOutcome, CliError> {
    std::fs::create_dir_all(out)?;
    let n = cfg.processes.len();
    let mut costs = sensor_costs(cfg, &vec![cfg.solver.eta; n])?;
    let region = rate_region(cfg)?;
    let unstable = costs.unstable_mask();
    let sol = solve_maxmin(&mut costs, &region, &cfg.solver, &unstable)?;
    let trace = &sol.trace;

    let mut alloc = CsvOut::create(
        &out.join("allocation_trace.csv"),
        "allocation_trace",
        &std::iter::once("iteration".to_string())
            .chain(numbered("r", n))
            .collect::<Vec<_>>(),
    )?;
    let mut cost = CsvOut::create(
        &out.join("cost_trace.csv"),
        "cost_trace",
        &std::iter::once("iteration".to_string())
            .chain(numbered("J", n))
            .collect::<Vec<_>>(),
    )?;
    alloc.row(std::iter::once("0".into()).chain(trace.initial_rates.iter().map(|&v| num(v))))?;
    cost.row(std::iter::once("0".into()).chain(trace.initial_costs.iter().map(|&v| num(v))))?;
    for rec in &trace.records {
        alloc.row(
            std::iter::once(rec.iteration.to_string()).chain(rec.rates.iter().map(|&v| num(v))),
        )?;
        cost.row(
            std::iter::once(rec.iteration.to_string()).chain(rec.costs.iter().map(|&v| num(v))),
        )?;
    }
    alloc.finish()?;
    cost.finish()?;

    let mut decay = CsvOut::create(
        &out.join("error_decay.csv"),
        "error_decay",
        &["iteration".to_string(), "error".to_string()],
    )?;
    for (t, e) in trace.error_decay().into_iter().enumerate() {
        decay.row([t.to_string(), num(e)])?;
    }
    decay.finish()?;

    let rates = sol.allocation.rates();
    let mut final_alloc = CsvOut::create(
        &out.join("allocation.csv"),
        "allocation",
        &["process".to_string(), "rate".to_string()],
    )?;
    for (i, &r) in rates.iter().enumerate() {
        final_alloc.row([(i + 1).to_string(), num(r)])?;
    }
    final_alloc.finish()?;

    let final_costs = costs.costs(rates)?;
    let eq = check_equilibrium(&sol.allocation, &costs, &sol.region, sol.final_step)?;
    let bounds = global_slope_bounds(&costs, &sol.region);
    let contraction = bounds.map(|(alpha, beta)| {
        let c = contraction_sq(sol.final_step, alpha, beta);
        json!({
            "step": sol.final_step,
            "c": c,
            "radius_c": neighborhood_radius(c, cfg.solver.eps_r),
            "radius_sqrt_c": neighborhood_radius(c.sqrt(), cfg.solver.eps_r),
        })
    });
    let summary = json!({
        "format": "fairsched-summary/1",
        "status": if sol.converged() { "converged" } else { "iteration_limit" },
        "iterations": trace.records.len(),
        "passes": trace.passes,
        "shrinks": trace.shrinks.len(),
        "final_step": sol.final_step,
        "total_rate": cfg.total_rate,
        "stability": costs.stability().iter().map(|&s| stability_name(s)).collect::<Vec<_>>(),
        "lower_bounds": sol.region.lower(),
        "allocation": rates,
        "costs": final_costs,
        "game_value": eq.game_value,
        "equilibrium": {
            "active_processes": eq.active_set.iter().map(|i| i + 1).collect::<Vec<_>>(),
            "recovered_weights": eq.recovered_weights.weights(),
            "fixed_point_residual": eq.fixed_point_residual,
            "active_saturated": eq.active_saturated,
            "all_active": eq.all_active,
            "cost_spread": eq.cost_spread,
        },
        "slope_bounds": bounds.map(|(alpha, beta)| json!({ "alpha": alpha, "beta": beta })),
        "contraction": contraction,
    });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(SolveOutcome {
        costs: final_costs,
        solution: sol,
        summary,
    })
}

#[derive(Debug)]
pub struct SimulateOutcome {
    pub rates: Vec<f64>,
    pub results: Vec<SimResult>,
    pub analytic: Vec<f64>,
    pub relative_gaps: Vec<f64>,
    pub budget_exceeded: bool,
}

impl SimulateOutcome {
    pub fn max_relative_gap(&self) -> f64 {
        self.relative_gaps.iter().copied().fold(0.0, f64::max)
    }
}

/// Simulates the allocation in `allocation` (or, without one, the solved
/// allocation) and writes `simulation.csv` and `simulation.json`.
pub fn run_simulate(
    cfg: &RunConfig,
    allocation: Option<&Path>,
    out: &Path,
) -> Result<SimulateOutcome, CliError> {
    std::fs::create_dir_all(out)?;
    let n = cfg.processes.len();
    let rates = match allocation {
        Some(path) => read_allocation(path)?,
        None => {
            let solved = run_solve(cfg, out)?;
            solved.solution.allocation.into_inner()
        }
    };
    if rates.len() != n {
        return Err(CliError::Input(format!(
            "allocation has {} rates but there are {n} processes",
            rates.len()
        )));
    }
    if let Some(i) = rates.iter().position(|r| !(0.0..=1.0).contains(r)) {
        return Err(CliError::Input(format!(
            "process {}: rate {} outside [0, 1]",
            i + 1,
            rates[i]
        )));
    }
    let budget_exceeded = rates.iter().sum::<f64>() > cfg.total_rate + BUDGET_TOL;
    if budget_exceeded {
        eprintln!("warning: allocation exceeds total_rate {}", cfg.total_rate);
    }

    let stability = sensor_costs(cfg, &vec![cfg.solver.eta; n])?
        .stability()
        .to_vec();
    if let Some(i) = (0..n).find(|&i| rates[i] == 0.0 && stability[i] == Stability::Unstable) {
        return Err(CliError::Input(format!(
            "process {} is unstable and its error diverges at rate 0; refusing to simulate",
            i + 1
        )));
    }
    let floors: Vec<f64> = rates
        .iter()
        .map(|&r| {
            if r > 0.0 {
                r.min(cfg.solver.eta)
            } else {
                cfg.solver.eta
            }
        })
        .collect();
    let costs = sensor_costs(cfg, &floors)?;
    let analytic = costs.costs(&rates)?;
    let results = simulate_allocation(
        &cfg.processes,
        &Allocation(rates.clone()),
        cfg.simulation.horizon,
        cfg.simulation.seed,
    )?;
    let relative_gaps: Vec<f64> = results
        .iter()
        .zip(&analytic)
        .map(|(res, &a)| (res.empirical_avg_error - a).abs() / a)
        .collect();

    let mut csv = CsvOut::create(
        &out.join("simulation.csv"),
        "simulation",
        &[
            "process",
            "rate",
            "xi",
            "b",
            "empirical_rate",
            "empirical_avg_error",
            "analytic_avg_error",
            "relative_gap",
        ]
        .map(String::from),
    )?;
    for i in 0..n {
        let (xi, b) = if rates[i] > 0.0 {
            let policy = threshold_from_rate(rates[i])?;
            (policy.xi.to_string(), num(policy.b))
        } else {
            ("never".to_string(), String::new())
        };
        csv.row([
            (i + 1).to_string(),
            num(rates[i]),
            xi,
            b,
            num(results[i].empirical_rate),
            num(results[i].empirical_avg_error),
            num(analytic[i]),
            num(relative_gaps[i]),
        ])?;
    }
    csv.finish()?;

    let outcome = SimulateOutcome {
        rates,
        results,
        analytic,
        relative_gaps,
        budget_exceeded,
    };
    write_json(
        &out.join("simulation.json"),
        &json!({
            "format": "fairsched-simulation/1",
            "horizon": cfg.simulation.horizon,
            "seed": cfg.simulation.seed,
            "budget_exceeded": outcome.budget_exceeded,
            "max_relative_gap": outcome.max_relative_gap(),
        }),
    )?;
    Ok(outcome)
}

#[derive(Debug)]
pub struct DistributedOutcome {
    pub comparison: Comparison,
}

impl DistributedOutcome {
    pub fn converged(&self) -> bool {
        self.comparison.distributed.converged && self.comparison.centralized.converged()
    }
}

/// Runs the graph-local solver next to the centralized one and writes
/// `dual_trace.csv` and `distributed.json`.
pub fn run_distributed(cfg: &RunConfig, out: &Path) -> Result<DistributedOutcome, CliError> {
    let section = cfg
        .distributed
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [distributed] section".into()))?;
    std::fs::create_dir_all(out)?;
    let n = cfg.processes.len();
    let mut costs = sensor_costs(cfg, &vec![cfg.solver.eta; n])?;
    let region = rate_region(cfg)?;
    let unstable = costs.unstable_mask();
    let cmp = compare_with_centralized(
        &mut costs,
        &region,
        &unstable,
        &cfg.solver,
        &section.graph,
        &section.config,
    )?;

    let header: Vec<String> = std::iter::once("iteration".to_string())
        .chain(numbered("r", n))
        .chain(numbered("lambda", n))
        .chain(std::iter::once("residual".to_string()))
        .collect();
    let mut csv = CsvOut::create(&out.join("dual_trace.csv"), "dual_trace", &header)?;
    for rec in &cmp.distributed.trace {
        csv.row(
            std::iter::once(rec.iteration.to_string())
                .chain(rec.rates.iter().map(|&v| num(v)))
                .chain(rec.lambdas.iter().map(|&v| num(v)))
                .chain(std::iter::once(num(rec.residual))),
        )?;
    }
    csv.finish()?;

    let state = &cmp.distributed.state;
    write_json(
        &out.join("distributed.json"),
        &json!({
            "format": "fairsched-distributed/1",
            "converged": cmp.distributed.converged,
            "iterations": cmp.distributed.iterations,
            "centralized_allocation": cmp.centralized.allocation.rates(),
            "distributed_allocation": state.rates,
            "lambdas": state.lambdas,
            "dual_spread": state.dual_spread(),
            "linf_gap": cmp.linf_gap,
            "value_gap": cmp.value_gap,
            "centralized_value": cmp.centralized_value,
            "distributed_value": cmp.distributed_value,
        }),
    )?;
    Ok(DistributedOutcome { comparison: cmp })
}
