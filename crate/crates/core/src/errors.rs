//! Admissible error sequences for the block resolvent steps.
//!
//! A primal error `e` injected at block `i` must satisfy `‖e‖ ≤ η` together with
//!
//! ```text
//! ⟨x_del − a, e⟩ ≥ −σ ‖x_del − a‖²
//! ⟨e, a* + l*⟩  ≤ σ γ ‖a* + l*‖²
//! ```
//!
//! and a dual error `f` at block `k` must satisfy `‖f‖ ≤ χ` together with
//!
//! ```text
//! ⟨l − b, f⟩       ≥ −ζ ‖l − b‖²
//! ⟨f, b* − v*_del⟩ ≤ ζ μ ‖b* − v*_del‖²
//! ```
//!
//! Since `a` (resp. `b`) depends on the error itself, candidates are admitted
//! by evaluating the actual resolvent step and halving on failure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{dot, norm2, vsub};

const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ErrorMode {
    Zero,
    RandomShrink {
        seed: u64,
        initial_scale: f64,
        #[serde(default = "default_decay")]
        decay: f64,
    },
}

fn default_decay() -> f64 {
    0.99
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorModelConfig {
    pub eta: f64,
    pub chi: f64,
    pub sigma: f64,
    pub zeta: f64,
    pub mode: ErrorMode,
}

impl Default for ErrorModelConfig {
    fn default() -> Self {
        ErrorModelConfig {
            eta: 1.0,
            chi: 1.0,
            sigma: 0.1,
            zeta: 0.1,
            mode: ErrorMode::Zero,
        }
    }
}

impl ErrorModelConfig {
    pub fn zero() -> Self {
        ErrorModelConfig::default()
    }

    pub fn random_shrink(seed: u64, initial_scale: f64) -> Self {
        ErrorModelConfig {
            mode: ErrorMode::RandomShrink {
                seed,
                initial_scale,
                decay: default_decay(),
            },
            ..ErrorModelConfig::default()
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.mode, ErrorMode::Zero)
    }

    /// The admissibility constant `max{σ, ζ}`.
    pub fn delta(&self) -> f64 {
        self.sigma.max(self.zeta)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta", self.eta), ("chi", self.chi)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("error_model.{name} = {v} must be finite and >= 0")));
            }
        }
        for (name, v) in [("sigma", self.sigma), ("zeta", self.zeta)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Parameter(format!("error_model.{name} = {v} must lie in [0, 1)")));
            }
        }
        if let ErrorMode::RandomShrink {
            initial_scale,
            decay,
            ..
        } = self.mode
        {
            if !(initial_scale >= 0.0 && initial_scale.is_finite()) {
                return Err(Error::Parameter(format!(
                    "error_model.initial_scale = {initial_scale} must be finite and >= 0"
                )));
            }
            if !(0.0..=1.0).contains(&decay) {
                return Err(Error::Parameter(format!("error_model.decay = {decay} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    fn propose(&self, side: u64, block: usize, n: usize, dim: usize, cap: f64) -> Vec<f64> {
        match self.mode {
            ErrorMode::Zero => vec![0.0; dim],
            ErrorMode::RandomShrink {
                seed,
                initial_scale,
                decay,
            } => {
                let scale = (initial_scale * decay.powf(n as f64)).min(cap);
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, side, block as u64, n as u64));
                let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let len = norm2(&dir);
                if len == 0.0 || scale == 0.0 {
                    return vec![0.0; dim];
                }
                dir.iter().map(|v| v * (scale / len)).collect()
            }
        }
    }
}

/// Decorrelated seed for one (side, block, iteration) draw, so proposals do
/// not depend on the order in which blocks are visited.
fn stream_seed(seed: u64, side: u64, block: u64, n: u64) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for part in [side, block, n] {
        h = splitmix(h ^ part.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn propose_primal_error(cfg: &ErrorModelConfig, i: usize, n: usize, dim: usize) -> Vec<f64> {
    cfg.propose(0, i, n, dim, cfg.eta)
}

pub fn propose_dual_error(cfg: &ErrorModelConfig, k: usize, n: usize, dim: usize) -> Vec<f64> {
    cfg.propose(1, k, n, dim, cfg.chi)
}

/// Signed margins of the two inner-product conditions; `≥ 0` means satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionReport {
    pub first_margin: f64,
    pub second_margin: f64,
    pub error_norm: f64,
}

impl ConditionReport {
    pub fn ok(&self) -> bool {
        self.first_margin >= 0.0 && self.second_margin >= 0.0
    }

    pub fn min_margin(&self) -> f64 {
        self.first_margin.min(self.second_margin)
    }
}

pub fn check_primal_conditions(
    x_delayed: &[f64],
    a: &[f64],
    e: &[f64],
    a_star: &[f64],
    l_star: &[f64],
    gamma: f64,
    sigma: f64,
) -> ConditionReport {
    let xa = vsub(x_delayed, a);
    let s: Vec<f64> = a_star.iter().zip(l_star).map(|(p, q)| p + q).collect();
    ConditionReport {
        first_margin: dot(&xa, e) + sigma * dot(&xa, &xa),
        second_margin: sigma * gamma * dot(&s, &s) - dot(e, &s),
        error_norm: norm2(e),
    }
}

pub fn check_dual_conditions(
    l: &[f64],
    b: &[f64],
    f: &[f64],
    b_star: &[f64],
    v_delayed: &[f64],
    mu: f64,
    zeta: f64,
) -> ConditionReport {
    let lb = vsub(l, b);
    let bv = vsub(b_star, v_delayed);
    ConditionReport {
        first_margin: dot(&lb, f) + zeta * dot(&lb, &lb),
        second_margin: zeta * mu * dot(&bv, &bv) - dot(f, &bv),
        error_norm: norm2(f),
    }
}

#[derive(Debug, Clone)]
pub struct Admitted<T> {
    pub error: Vec<f64>,
    pub output: T,
    pub report: ConditionReport,
    pub halvings: usize,
}

/// Evaluates `candidate` through the real step and halves it until the
/// conditions hold; falls back to the zero error after 60 halvings.
pub fn admit_with_shrink<T, F>(candidate: Vec<f64>, mut evaluate: F) -> Result<Admitted<T>>
where
    F: FnMut(&[f64]) -> Result<(T, ConditionReport)>,
{
    let mut e = candidate;
    let mut halvings = 0;
    while e.iter().any(|&v| v != 0.0) && halvings <= MAX_HALVINGS {
        let (output, report) = evaluate(&e)?;
        if report.ok() {
            return Ok(Admitted {
                error: e,
                output,
                report,
                halvings,
            });
        }
        e.iter_mut().for_each(|v| *v *= 0.5);
        halvings += 1;
    }
    e.iter_mut().for_each(|v| *v = 0.0);
    let (output, report) = evaluate(&e)?;
    if !report.ok() {
        return Err(Error::Assertion(format!(
            "zero error rejected by admissibility check (min margin {:e})",
            report.min_margin()
        )));
    }
    Ok(Admitted {
        error: e,
        output,
        report,
        halvings,
    })
}
