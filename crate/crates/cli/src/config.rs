use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use warpsplit::errors::{ErrorMode, ErrorModelConfig};
use warpsplit::hilbert::BlockVector;
use warpsplit::problems::{reference_solution, InstanceRecipe};
use warpsplit::psplit::{BlockSequence, ProblemInstance, Sequence, SolverConfig};
use warpsplit::scheduler::{Policy, Schedule};

use crate::CliError;

/// Reference runs for nonsmooth instances get this multiple of `max_iter`.
const REFERENCE_BUDGET_FACTOR: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: InstanceRecipe,
    pub solver: SolverSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub checks: Checks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub epsilon: f64,
    pub lambda: Sequence,
    pub gamma: BlockSequence,
    pub mu: BlockSequence,
    #[serde(default)]
    pub error_model: ErrorModelConfig,
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Initial primal blocks; zero when omitted.
    #[serde(default)]
    pub x0: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub v0: Option<Vec<Vec<f64>>>,
}

fn default_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub policy: Policy,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "T", default)]
    pub coverage_window: usize,
    #[serde(rename = "D", default)]
    pub delay_bound: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            policy: Policy::Synchronous,
            seed: 0,
            coverage_window: 0,
            delay_bound: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub trace_format: TraceFormat,
    #[serde(default)]
    pub summary: Option<PathBuf>,
    #[serde(default)]
    pub final_point: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    #[serde(default)]
    pub embed_check: bool,
    #[serde(default)]
    pub reference_check: bool,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub trace: Option<PathBuf>,
}

/// Everything needed to start a run, validated.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub instance: ProblemInstance,
    pub solver: SolverConfig,
    pub x0: Vec<Vec<f64>>,
    pub v0: Vec<Vec<f64>>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("field `{path}`: {}", e.inner()))
        })
    }

    /// The seed override sets the schedule seed and, for random errors,
    /// the error-model seed.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.set_seed(seed);
        }
        if let Some(m) = o.max_iter {
            self.solver.max_iter = m;
        }
        if let Some(t) = o.tol {
            self.solver.tol = t;
        }
        if let Some(p) = &o.trace {
            self.output.trace = Some(p.clone());
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.schedule.seed = seed;
        if let ErrorMode::RandomShrink { seed: s, .. } = &mut self.solver.error_model.mode {
            *s = seed;
        }
    }

    pub fn seed(&self) -> u64 {
        self.schedule.seed
    }

    pub fn prepare(&self) -> Result<Prepared, CliError> {
        let built = self.problem.build()?;
        let inst = built.instance;
        let s = &self.solver;
        let schedule = Schedule::generate(
            self.schedule.policy,
            self.schedule.seed,
            self.schedule.coverage_window,
            self.schedule.delay_bound,
            inst.n_primal(),
            inst.n_dual(),
            s.max_iter,
        )?;
        let solver = SolverConfig {
            epsilon: s.epsilon,
            lambda: s.lambda.clone(),
            gamma: s.gamma.clone(),
            mu: s.mu.clone(),
            schedule,
            error_model: s.error_model,
            max_iter: s.max_iter,
            tol: s.tol,
        };
        solver.validate(&inst)?;
        let (zx, zv) = inst.zero_point();
        let x0 = s.x0.clone().unwrap_or(zx);
        let v0 = s.v0.clone().unwrap_or(zv);
        for (v, dims, what) in [
            (&x0, &inst.signature.primal_dims, "solver.x0"),
            (&v0, &inst.signature.dual_dims, "solver.v0"),
        ] {
            let dv: Vec<usize> = v.iter().map(Vec::len).collect();
            if &dv != dims {
                return Err(CliError::Config(format!(
                    "field `{what}`: block sizes {dv:?}, instance expects {dims:?}"
                )));
            }
        }
        Ok(Prepared {
            instance: inst,
            solver,
            x0,
            v0,
        })
    }

    /// Reference point for `dist_to_reference`: the builder's known solution
    /// when there is one, otherwise the certified reference oracle.
    pub fn reference(&self, inst: &ProblemInstance) -> Result<BlockVector, CliError> {
        if let Some(c) = self.problem.build()?.known_solution {
            return Ok(c.point());
        }
        let budget = self.solver.max_iter.max(1000) * REFERENCE_BUDGET_FACTOR;
        Ok(reference_solution(inst, budget)?.point())
    }
}
