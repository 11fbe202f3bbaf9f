//! The warped proximal projection engine.
//!
//! Each step receives a proposal pair `(y, y*)` and performs a relaxed
//! projection of the current point onto the halfspace
//! `{p : ⟨p − y, y*⟩ ≤ 0}` whenever the current point lies strictly outside it.

use crate::error::{Error, Result};
use crate::hilbert::BlockVector;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOutcome {
    pub next_x: BlockVector,
    /// Separator value `⟨x − y, y*⟩`.
    pub pi: f64,
    /// `‖y*‖²`.
    pub tau: f64,
    /// Applied step length, zero when the point did not move.
    pub theta: f64,
    pub moved: bool,
}

pub fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("epsilon = {epsilon} must lie in (0, 1)")))
    }
}

/// Relaxation parameters must lie in `[ε, 2 − ε]`.
pub fn check_relaxation(lambda: f64, epsilon: f64) -> Result<()> {
    check_epsilon(epsilon)?;
    if lambda >= epsilon && lambda <= 2.0 - epsilon {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "lambda = {lambda} outside [epsilon, 2 - epsilon] = [{epsilon}, {}]",
            2.0 - epsilon
        )))
    }
}

/// Relaxed projection step given the separator value `pi = ⟨x − y, y*⟩`.
pub fn project_with_separator(
    x: &BlockVector,
    y_star: &BlockVector,
    pi: f64,
    lambda: f64,
    epsilon: f64,
) -> Result<ProjectionOutcome> {
    check_relaxation(lambda, epsilon)?;
    if !pi.is_finite() {
        return Err(Error::Data(format!("separator value is {pi}")));
    }
    let tau = y_star.norm_squared();
    if pi > 0.0 {
        if !(tau > 0.0) {
            return Err(Error::Assertion(format!(
                "positive separator {pi:e} with vanishing normal"
            )));
        }
        let theta = lambda * pi / tau;
        Ok(ProjectionOutcome {
            next_x: y_star.axpy(-theta, x)?,
            pi,
            tau,
            theta,
            moved: true,
        })
    } else {
        Ok(ProjectionOutcome {
            next_x: x.clone(),
            pi,
            tau,
            theta: 0.0,
            moved: false,
        })
    }
}

pub fn halfspace_update(
    x: &BlockVector,
    y: &BlockVector,
    y_star: &BlockVector,
    lambda: f64,
    epsilon: f64,
) -> Result<ProjectionOutcome> {
    x.check_finite("x")?;
    y.check_finite("y")?;
    y_star.check_finite("y*")?;
    let pi = x.sub(y)?.inner(y_star)?;
    project_with_separator(x, y_star, pi, lambda, epsilon)
}

/// One row of a warped run.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedStep {
    pub n: usize,
    pub pi: f64,
    pub tau: f64,
    pub theta: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone)]
pub struct WarpedTrace {
    pub steps: Vec<WarpedStep>,
    pub final_x: BlockVector,
    pub stopped_early: bool,
}

pub struct StopRule<'a> {
    /// Stop after `window` consecutive steps with `‖x_{n+1} − x_n‖ ≤ step_tol`.
    pub step_tol: f64,
    pub window: usize,
    /// Optional external test on the new iterate; `true` stops the run.
    pub residual: Option<Box<dyn FnMut(&BlockVector) -> bool + 'a>>,
}

impl Default for StopRule<'_> {
    fn default() -> Self {
        StopRule {
            step_tol: 1e-12,
            window: 10,
            residual: None,
        }
    }
}

/// Iterates `halfspace_update` with proposals from `oracle(n, x_n)`.
pub fn run_warped<O, L>(
    mut oracle: O,
    x0: BlockVector,
    lambdas: L,
    epsilon: f64,
    max_iter: usize,
    mut stop: StopRule<'_>,
) -> Result<WarpedTrace>
where
    O: FnMut(usize, &BlockVector) -> Result<(BlockVector, BlockVector)>,
    L: Fn(usize) -> f64,
{
    check_epsilon(epsilon)?;
    let mut x = x0;
    let mut steps = Vec::new();
    let mut quiet = 0;
    for n in 0..max_iter {
        let (y, y_star) = oracle(n, &x).map_err(|e| e.at_iteration(n))?;
        let out = halfspace_update(&x, &y, &y_star, lambdas(n), epsilon).map_err(|e| e.at_iteration(n))?;
        let step_norm = out.next_x.distance(&x)?;
        steps.push(WarpedStep {
            n,
            pi: out.pi,
            tau: out.tau,
            theta: out.theta,
            step_norm,
        });
        x = out.next_x;
        quiet = if step_norm <= stop.step_tol { quiet + 1 } else { 0 };
        let hit = stop.residual.as_mut().is_some_and(|f| f(&x));
        if quiet >= stop.window || hit {
            return Ok(WarpedTrace {
                steps,
                final_x: x,
                stopped_early: true,
            });
        }
    }
    Ok(WarpedTrace {
        steps,
        final_x: x,
        stopped_early: false,
    })
}
