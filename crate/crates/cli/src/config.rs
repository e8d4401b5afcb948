//! TOML run configuration.
//!
//! ```toml
//! total_rate = 2.0
//! output_dir = "out"
//!
//! [solver]            # every field optional
//! eps0 = 0.1
//! eta = 0.001
//! eps_r = 1e-6
//! max_inner_iters = 200000
//! max_outer_iters = 30
//!
//! [simulation]
//! horizon = 1000000
//! seed = 42
//!
//! [[processes]]       # matrices are lists of rows
//! a = [[1.2, 0.0], [0.0, 0.0]]
//! q = [[4.0, 0.0], [0.0, 1.0]]
//! c = [[1.0, 0.0], [0.0, 1.0]]   # optional, identity
//! r = [[1.0, 0.0], [0.0, 1.0]]   # optional, identity
//!
//! [distributed]       # optional
//! topology = "ring"   # or adjacency = [[1, 4], [0, 2], ...]
//! coupling = "consensus"
//! schedule = "constant"
//! step = 0.05
//! ```

use std::path::{Path, PathBuf};

use fairsched::distributed::{CommGraph, DistributedConfig, DualCoupling, StepSchedule};
use fairsched::{ProcessModel, SolverConfig};
use nalgebra::DMatrix;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    total_rate: f64,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    simulation: SimulationConfig,
    #[serde(default)]
    processes: Vec<RawProcess>,
    distributed: Option<RawDistributed>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    eps0: Option<f64>,
    eta: Option<f64>,
    eps_r: Option<f64>,
    max_inner_iters: Option<usize>,
    max_outer_iters: Option<usize>,
    projection_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub horizon: u64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            horizon: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProcess {
    a: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    c: Option<Vec<Vec<f64>>>,
    r: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Topology {
    Ring,
    Path,
    Star,
    Complete,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawCoupling {
    #[default]
    Consensus,
    SymmetricPenalty,
    LiteralPenalty,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawSchedule {
    #[default]
    Constant,
    Diminishing,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDistributed {
    topology: Option<Topology>,
    adjacency: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    coupling: RawCoupling,
    #[serde(default)]
    schedule: RawSchedule,
    /// Constant step.
    step: Option<f64>,
    /// `a / (k + c)` parameters.
    a: Option<f64>,
    c: Option<f64>,
    eps_r: Option<f64>,
    max_iters: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct DistributedSection {
    pub graph: CommGraph,
    pub config: DistributedConfig,
}

/// Validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub processes: Vec<ProcessModel>,
    pub total_rate: f64,
    pub solver: SolverConfig,
    pub simulation: SimulationConfig,
    pub distributed: Option<DistributedSection>,
    pub output_dir: PathBuf,
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if raw.processes.is_empty() {
        return Err(CliError::Config("no processes configured".into()));
    }
    if !(raw.total_rate > 0.0) || !raw.total_rate.is_finite() {
        return Err(CliError::Config(format!(
            "total_rate must be positive, got {}",
            raw.total_rate
        )));
    }
    let processes = raw
        .processes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            build_process(p).map_err(|m| CliError::Config(format!("process {}: {m}", i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let defaults = SolverConfig::default();
    let solver = SolverConfig {
        eps0: raw.solver.eps0.unwrap_or(defaults.eps0),
        eta: raw.solver.eta.unwrap_or(defaults.eta),
        eps_r: raw.solver.eps_r.unwrap_or(defaults.eps_r),
        max_inner_iters: raw
            .solver
            .max_inner_iters
            .unwrap_or(defaults.max_inner_iters),
        max_outer_iters: raw
            .solver
            .max_outer_iters
            .unwrap_or(defaults.max_outer_iters),
        projection_tol: raw.solver.projection_tol.unwrap_or(defaults.projection_tol),
    };
    solver
        .validate()
        .map_err(|e| CliError::Config(format!("solver: {e}")))?;
    if raw.simulation.horizon == 0 {
        return Err(CliError::Config(
            "simulation horizon must be positive".into(),
        ));
    }

    let distributed = raw
        .distributed
        .map(|d| {
            build_distributed(d, processes.len())
                .map_err(|m| CliError::Config(format!("distributed: {m}")))
        })
        .transpose()?;

    Ok(RunConfig {
        processes,
        total_rate: raw.total_rate,
        solver,
        simulation: raw.simulation,
        distributed,
        output_dir: raw.output_dir,
    })
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(format!("{name} is empty"));
    }
    if let Some(bad) = rows.iter().position(|row| row.len() != ncols) {
        return Err(format!(
            "{name} row {} has {} entries, expected {ncols}",
            bad + 1,
            rows[bad].len()
        ));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

fn build_process(p: &RawProcess) -> Result<ProcessModel, String> {
    let a = matrix("A", &p.a)?;
    let q = matrix("Q", &p.q)?;
    let n = a.nrows();
    let c = match &p.c {
        Some(rows) => matrix("C", rows)?,
        None => DMatrix::identity(n, n),
    };
    let r = match &p.r {
        Some(rows) => matrix("R", rows)?,
        None => DMatrix::identity(c.nrows(), c.nrows()),
    };
    ProcessModel::new(a, q, c, r).map_err(|e| e.to_string())
}

fn build_distributed(d: RawDistributed, n: usize) -> Result<DistributedSection, String> {
    let graph = match (d.topology, d.adjacency) {
        (Some(_), Some(_)) => return Err("give either topology or adjacency, not both".into()),
        (None, None) => return Err("missing graph: set topology or adjacency".into()),
        (Some(t), None) => match t {
            Topology::Ring => CommGraph::ring(n),
            Topology::Path => CommGraph::path(n),
            Topology::Star => CommGraph::star(n),
            Topology::Complete => CommGraph::complete(n),
        },
        (None, Some(adj)) => {
            if adj.len() != n {
                return Err(format!(
                    "adjacency lists {} nodes but there are {n} processes",
                    adj.len()
                ));
            }
            CommGraph::from_adjacency(&adj)
        }
    }
    .map_err(|e| e.to_string())?;
    if !graph.is_connected() {
        return Err("communication graph is disconnected".into());
    }

    let defaults = DistributedConfig::default();
    let steps = match d.schedule {
        RawSchedule::Constant => StepSchedule::Constant(d.step.unwrap_or(match defaults.steps {
            StepSchedule::Constant(eps) => eps,
            StepSchedule::Diminishing { .. } => 0.05,
        })),
        RawSchedule::Diminishing => StepSchedule::Diminishing {
            a: d.a.unwrap_or(0.5),
            c: d.c.unwrap_or(10.0),
        },
    };
    let coupling = match d.coupling {
        RawCoupling::Consensus => DualCoupling::ConsensusMultiplier,
        RawCoupling::SymmetricPenalty => DualCoupling::SymmetricPenalty,
        RawCoupling::LiteralPenalty => DualCoupling::LiteralPenalty,
    };
    Ok(DistributedSection {
        graph,
        config: DistributedConfig {
            steps,
            hat_steps: steps,
            coupling,
            eps_r: d.eps_r.unwrap_or(defaults.eps_r),
            max_iters: d.max_iters.unwrap_or(defaults.max_iters),
            record_every: defaults.record_every,
        },
    })
}
