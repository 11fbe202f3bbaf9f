//! Skew-decomposed warped step.
//!
//! For a maximally monotone `A`, a skew operator `S` and a strongly monotone
//! Lipschitz kernel `F`, a step builds
//!
//! ```text
//! u* = F u − S u + e* + f*
//! y  = (F + A)^{-1} u*
//! a* = u* − F y
//! y* = a* + S y
//! π  = ⟨x, y*⟩ − ⟨y, a*⟩
//! ```
//!
//! and hands `(y, y*)` to the halfspace projection of [`crate::warped_core`].
//! Here `A` is the block-diagonal product operator
//! `(x, v*) ↦ (−z* + A_i x_i)_i × (r_k + B_k^{-1} v*_k)_k`.

use crate::coupling::LinearCoupling;
use crate::error::{Error, Result};
use crate::hilbert::{vsub, BlockVector};
use crate::operators::MonotoneOperator;
use crate::warped_core::{halfspace_update, ProjectionOutcome};

/// Borrowed view of the product operator, stored blockwise because its
/// resolvent factorizes over blocks.
#[derive(Debug, Clone, Copy)]
pub struct ProductOperator<'a> {
    pub a_ops: &'a [MonotoneOperator],
    pub z_star: &'a [Vec<f64>],
    pub b_ops: &'a [MonotoneOperator],
    pub r: &'a [Vec<f64>],
}

/// A strongly monotone, Lipschitz warping kernel on the product space.
pub trait Kernel {
    fn apply(&self, p: &BlockVector) -> Result<BlockVector>;
    /// Evaluates `(F + A)^{-1} u*`.
    fn resolve(&self, op: &ProductOperator<'_>, u_star: &BlockVector) -> Result<BlockVector>;
    fn strong_monotonicity(&self) -> f64;
    fn lipschitz(&self) -> f64;
}

/// `F(x, v*) = ((x_i / γ_i)_i, (μ_k v*_k)_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalKernel {
    gammas: Vec<f64>,
    mus: Vec<f64>,
}

impl DiagonalKernel {
    pub fn new(gammas: Vec<f64>, mus: Vec<f64>) -> Result<Self> {
        if gammas.iter().chain(&mus).any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Parameter("kernel steps must be positive and finite".into()));
        }
        Ok(DiagonalKernel { gammas, mus })
    }

    /// Checks that every step lies in `[ε, 1/ε]`, which makes the kernel
    /// ε-strongly monotone and (1/ε)-Lipschitzian.
    pub fn check_bounds(&self, epsilon: f64) -> Result<()> {
        for &s in self.gammas.iter().chain(&self.mus) {
            if s < epsilon || s > 1.0 / epsilon {
                return Err(Error::Parameter(format!(
                    "kernel step {s} outside [epsilon, 1/epsilon] = [{epsilon}, {}]",
                    1.0 / epsilon
                )));
            }
        }
        Ok(())
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn mus(&self) -> &[f64] {
        &self.mus
    }

    /// The primal factors `γ_i^{-1}`.
    pub fn primal_scales(&self) -> Vec<f64> {
        self.gammas.iter().map(|g| 1.0 / g).collect()
    }

    pub fn dual_scales(&self) -> &[f64] {
        &self.mus
    }

    fn check_shape(&self, p: &BlockVector) -> Result<()> {
        if p.n_blocks() != self.gammas.len() + self.mus.len() {
            return Err(Error::Structure(format!(
                "kernel has {} blocks, vector has {}",
                self.gammas.len() + self.mus.len(),
                p.n_blocks()
            )));
        }
        Ok(())
    }
}

impl Kernel for DiagonalKernel {
    fn apply(&self, p: &BlockVector) -> Result<BlockVector> {
        self.check_shape(p)?;
        let np = self.gammas.len();
        Ok(BlockVector::new(
            p.blocks()
                .iter()
                .enumerate()
                .map(|(j, b)| {
                    if j < np {
                        b.iter().map(|v| v / self.gammas[j]).collect()
                    } else {
                        b.iter().map(|v| self.mus[j - np] * v).collect()
                    }
                })
                .collect(),
        ))
    }

    fn resolve(&self, op: &ProductOperator<'_>, u_star: &BlockVector) -> Result<BlockVector> {
        self.check_shape(u_star)?;
        let np = self.gammas.len();
        let mut blocks = Vec::with_capacity(u_star.n_blocks());
        // (γ⁻¹ Id − z* + A_i)^{-1} u* = J_{γA_i}(γ (u* + z*))
        for i in 0..np {
            let g = self.gammas[i];
            let arg: Vec<f64> = u_star
                .block(i)
                .iter()
                .zip(&op.z_star[i])
                .map(|(u, z)| g * (u + z))
                .collect();
            blocks.push(op.a_ops[i].resolvent(g, &arg)?);
        }
        // (μ Id + r + B⁻¹)^{-1} v = μ⁻¹ (v − b), b = r + J_{μB}(v − r)
        for k in 0..self.mus.len() {
            let mu = self.mus[k];
            let v = u_star.block(np + k);
            let j = op.b_ops[k].resolvent(mu, &vsub(v, &op.r[k]))?;
            blocks.push(
                v.iter()
                    .zip(op.r[k].iter().zip(&j))
                    .map(|(vv, (rr, jj))| (vv - (rr + jj)) / mu)
                    .collect(),
            );
        }
        Ok(BlockVector::new(blocks))
    }

    fn strong_monotonicity(&self) -> f64 {
        self.gammas
            .iter()
            .map(|g| 1.0 / g)
            .chain(self.mus.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    fn lipschitz(&self) -> f64 {
        self.gammas
            .iter()
            .map(|g| 1.0 / g)
            .chain(self.mus.iter().copied())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInputs {
    pub u: BlockVector,
    pub e_star: BlockVector,
    pub f_star: BlockVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepProposal {
    pub u_star: BlockVector,
    pub y: BlockVector,
    pub a_star: BlockVector,
    pub y_star: BlockVector,
    pub pi: f64,
}

fn finite(v: BlockVector, stage: &str) -> Result<BlockVector> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Data(format!("non-finite value at stage {stage}")))
    }
}

pub fn t1_propose<K: Kernel>(
    x: &BlockVector,
    inputs: &StepInputs,
    kernel: &K,
    op: &ProductOperator<'_>,
    coupling: &LinearCoupling,
) -> Result<StepProposal> {
    let dims = coupling.signature().product_dims();
    for (v, name) in [
        (x, "x"),
        (&inputs.u, "u"),
        (&inputs.e_star, "e*"),
        (&inputs.f_star, "f*"),
    ] {
        v.check_conforms(&dims, name)?;
    }
    let fu = kernel.apply(&inputs.u)?;
    let su = coupling.skew_apply(&inputs.u)?;
    let u_star = finite(
        fu.sub(&su)?.add(&inputs.e_star)?.add(&inputs.f_star)?,
        "u*",
    )?;
    let y = finite(kernel.resolve(op, &u_star)?, "y")?;
    let a_star = finite(u_star.sub(&kernel.apply(&y)?)?, "a*")?;
    let y_star = finite(a_star.add(&coupling.skew_apply(&y)?)?, "y*")?;
    let pi = x.inner(&y_star)? - y.inner(&a_star)?;
    Ok(StepProposal {
        u_star,
        y,
        a_star,
        y_star,
        pi,
    })
}

/// Proposal followed by the halfspace projection.
pub fn t1_step<K: Kernel>(
    x: &BlockVector,
    inputs: &StepInputs,
    kernel: &K,
    op: &ProductOperator<'_>,
    coupling: &LinearCoupling,
    lambda: f64,
    epsilon: f64,
) -> Result<(StepProposal, ProjectionOutcome)> {
    let p = t1_propose(x, inputs, kernel, op, coupling)?;
    let out = halfspace_update(x, &p.y, &p.y_star, lambda, epsilon)?;
    Ok((p, out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibilityReport {
    /// `⟨u − y, f*⟩ + δ⟨u − y, F u − F y⟩`.
    pub cond1_margin: f64,
    /// `δ‖a* + S u − e*‖² − ⟨a* + S u − e*, f*⟩`.
    pub cond2_margin: f64,
    pub ok: bool,
}

impl AdmissibilityReport {
    pub fn ok_within(&self, slack: f64) -> bool {
        self.cond1_margin >= -slack && self.cond2_margin >= -slack
    }
}

#[allow(clippy::too_many_arguments)]
pub fn check_admissibility<K: Kernel>(
    u: &BlockVector,
    y: &BlockVector,
    a_star: &BlockVector,
    e_star: &BlockVector,
    f_star: &BlockVector,
    kernel: &K,
    coupling: &LinearCoupling,
    delta: f64,
) -> Result<AdmissibilityReport> {
    let u_minus_y = u.sub(y)?;
    let f_diff = kernel.apply(u)?.sub(&kernel.apply(y)?)?;
    let cond1_margin = u_minus_y.inner(f_star)? + delta * u_minus_y.inner(&f_diff)?;
    let w = a_star.add(&coupling.skew_apply(u)?)?.sub(e_star)?;
    let cond2_margin = delta * w.norm_squared() - w.inner(f_star)?;
    Ok(AdmissibilityReport {
        cond1_margin,
        cond2_margin,
        ok: cond1_margin >= 0.0 && cond2_margin >= 0.0,
    })
}
