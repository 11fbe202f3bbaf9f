//! Config ingestion, run orchestration and trace output for `warpsplit`.

pub mod config;
pub mod trace;

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;
use warpsplit::psplit::{embed_to_theorem1, run, Divergence, EmbedOptions, RunOptions, RunOutput};
use warpsplit::scheduler::{ActivationTracker, Policy, Schedule, Violation};

pub use config::{Overrides, RunConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_NOT_CONVERGED: u8 = 2;
pub const EXIT_ASSERTION: u8 = 3;

/// Agreement required between the direct and replayed iterates.
pub const EMBED_TOL: f64 = 1e-10;
/// Slack on the admissibility margins of the replay.
pub const MARGIN_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Solver(#[from] warpsplit::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use warpsplit::Error as E;
        match self {
            CliError::Solver(e) => match (e, e.root()) {
                (_, E::Assertion(_)) | (E::AtIteration { .. }, E::Data(_)) => EXIT_ASSERTION,
                _ => EXIT_CONFIG,
            },
            _ => EXIT_CONFIG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub seed: u64,
    pub final_kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_point_path: Option<PathBuf>,
    pub trace_path: Option<PathBuf>,
}

impl SolveSummary {
    pub fn exit_code(&self) -> u8 {
        if self.converged {
            EXIT_OK
        } else {
            EXIT_NOT_CONVERGED
        }
    }
}

#[derive(Serialize)]
struct FinalPoint<'a> {
    x: &'a [Vec<f64>],
    v: &'a [Vec<f64>],
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs the solver and writes the configured trace, final point and summary.
pub fn cmd_solve(cfg: &RunConfig) -> Result<(SolveSummary, RunOutput), CliError> {
    let prep = cfg.prepare()?;
    let reference = if cfg.checks.reference_check {
        Some(cfg.reference(&prep.instance)?)
    } else {
        None
    };
    log::info!(
        "solve: {} instance, {} policy, seed {}, max_iter {}",
        cfg.problem.name(),
        policy_name(cfg.schedule.policy),
        cfg.seed(),
        prep.solver.max_iter
    );
    let out = run(
        &prep.instance,
        &prep.solver,
        prep.x0,
        prep.v0,
        &RunOptions {
            keep_details: false,
            reference,
        },
    )?;
    log::info!(
        "solve: {} iterations, kkt residual {:e}, converged {}",
        out.iterations(),
        out.final_kkt(),
        out.converged
    );
    if let Some(p) = &cfg.output.trace {
        trace::write_trace(p, cfg.output.trace_format, &out.records)?;
    }
    if let Some(p) = &cfg.output.final_point {
        write_json(
            p,
            &FinalPoint {
                x: &out.final_x,
                v: &out.final_v,
            },
        )?;
    }
    let summary = SolveSummary {
        seed: cfg.seed(),
        final_kkt_residual: out.final_kkt(),
        iterations: out.iterations(),
        converged: out.converged,
        final_point_path: cfg.output.final_point.clone(),
        trace_path: cfg.output.trace.clone(),
    };
    if let Some(p) = &cfg.output.summary {
        write_json(p, &summary)?;
    }
    Ok((summary, out))
}

/// `trace.csv` → `trace.seed7.csv`.
pub fn with_seed_suffix(path: &Path, seed: u64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}.seed{seed}"),
    };
    path.with_file_name(name)
}

/// Runs seeds `base, base + 1, …, base + jobs − 1` on separate threads; each
/// run writes its outputs with a `.seed<N>` suffix.
pub fn cmd_solve_jobs(cfg: &RunConfig, jobs: usize) -> Vec<Result<SolveSummary, CliError>> {
    let base = cfg.seed();
    let configs: Vec<RunConfig> = (0..jobs as u64)
        .map(|j| {
            let mut c = cfg.clone();
            let seed = base + j;
            c.set_seed(seed);
            let out = &mut c.output;
            for p in [&mut out.trace, &mut out.summary, &mut out.final_point].into_iter().flatten() {
                *p = with_seed_suffix(p, seed);
            }
            c
        })
        .collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| s.spawn(move || cmd_solve(c).map(|(summary, _)| summary)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub iterations: usize,
    pub max_divergence: f64,
    pub min_admissibility_margin: f64,
    pub first_divergence: Option<Divergence>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn exit_code(&self) -> u8 {
        if self.passed {
            EXIT_OK
        } else {
            EXIT_ASSERTION
        }
    }
}

/// Runs the direct iteration, replays it through the skew-decomposed warped
/// step, and compares the two iterate streams.
pub fn cmd_verify(cfg: &RunConfig, corrupt_at: Option<usize>) -> Result<VerifyReport, CliError> {
    if !cfg.checks.embed_check {
        return Err(CliError::Config("field `checks.embed_check`: must be true for verify".into()));
    }
    let prep = cfg.prepare()?;
    let direct = run(
        &prep.instance,
        &prep.solver,
        prep.x0.clone(),
        prep.v0.clone(),
        &RunOptions {
            keep_details: true,
            reference: None,
        },
    )?;
    let rep = embed_to_theorem1(
        &prep.instance,
        &prep.solver,
        prep.x0,
        prep.v0,
        &direct,
        EmbedOptions {
            tolerance: EMBED_TOL,
            corrupt_at,
        },
    )?;
    let margin = if rep.steps.is_empty() {
        0.0
    } else {
        rep.min_admissibility_margin
    };
    let passed = rep.first_divergence.is_none() && rep.max_distance <= EMBED_TOL && margin >= -MARGIN_SLACK;
    Ok(VerifyReport {
        iterations: rep.steps.len(),
        max_divergence: rep.max_distance,
        min_admissibility_margin: margin,
        first_divergence: rep.first_divergence,
        passed,
    })
}

pub enum ScheduleSource {
    File(PathBuf),
    Generate {
        policy: Policy,
        seed: u64,
        coverage_window: usize,
        delay_bound: usize,
        n_primal: usize,
        n_dual: usize,
        length: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleCheck {
    pub length: usize,
    #[serde(rename = "T")]
    pub coverage_window: usize,
    #[serde(rename = "D")]
    pub delay_bound: usize,
    pub ok: bool,
    pub violation: Option<Violation>,
    /// `max n − ℓ_i(n)` and `max n − ϑ_k(n)` over the whole schedule.
    pub max_staleness: Option<usize>,
}

pub fn load_schedule(source: &ScheduleSource) -> Result<Schedule, CliError> {
    match source {
        ScheduleSource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de)
                .map_err(|e| CliError::Config(format!("field `{}`: {}", e.path(), e.inner())))
        }
        ScheduleSource::Generate {
            policy,
            seed,
            coverage_window,
            delay_bound,
            n_primal,
            n_dual,
            length,
        } => Ok(Schedule::generate(
            *policy,
            *seed,
            *coverage_window,
            *delay_bound,
            *n_primal,
            *n_dual,
            *length,
        )?),
    }
}

pub fn cmd_validate_schedule(source: &ScheduleSource) -> Result<ScheduleCheck, CliError> {
    let s = load_schedule(source)?;
    let violation = s.validate().err();
    let max_staleness = violation.is_none().then(|| staleness(&s));
    Ok(ScheduleCheck {
        length: s.len(),
        coverage_window: s.coverage_window,
        delay_bound: s.delay_bound,
        ok: violation.is_none(),
        violation,
        max_staleness,
    })
}

/// Largest age of the data behind any block's current contribution.
pub fn staleness(s: &Schedule) -> usize {
    let mut tracker = ActivationTracker::new(s.n_primal(), s.n_dual());
    let mut worst = 0;
    for (n, rec) in s.records.iter().enumerate() {
        tracker.observe(n, rec);
        for i in 0..s.n_primal() {
            worst = worst.max(n - tracker.primal(i).1);
        }
        for k in 0..s.n_dual() {
            worst = worst.max(n - tracker.dual(k).1);
        }
    }
    worst
}

pub fn policy_name(p: Policy) -> &'static str {
    match p {
        Policy::Synchronous => "synchronous",
        Policy::RoundRobin => "round_robin",
        Policy::Random => "random",
    }
}

pub struct ProblemInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub example: &'static str,
}

pub fn list_problems() -> Vec<ProblemInfo> {
    vec![
        ProblemInfo {
            name: "lasso",
            description: "min ½‖Mx − b‖² + τ‖x‖₁ with Gaussian M (m×d); one primal and one dual block",
            example: r#"{"type": "lasso", "m": 30, "d": 20, "tau_fraction": 0.2, "seed": 2}"#,
        },
        ProblemInfo {
            name: "feasibility",
            description: "find boxed x_i with Σ_i L_{k,i} x_i = r_k; consistent by construction",
            example: r#"{"type": "feasibility", "primal_dims": [3, 2], "dual_dims": [2, 1], "seed": 0}"#,
        },
        ProblemInfo {
            name: "multiblock_quadratic",
            description: "strongly monotone affine A_i, monotone affine B_k; unique solution by dense solve",
            example: r#"{"type": "multiblock_quadratic", "primal_dims": [2, 3, 2], "dual_dims": [2, 2], "seed": 0}"#,
        },
        ProblemInfo {
            name: "inline",
            description: "a fully materialized instance (operators, z*, r, coupling)",
            example: r#"{"type": "inline", "instance": {"signature": ..., "a_ops": [...], ...}}"#,
        },
    ]
}
