//! Test instances and reference solutions.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::coupling::LinearCoupling;
use crate::error::{Error, Result};
use crate::errors::ErrorModelConfig;
use crate::hilbert::{BlockVector, SpaceSignature};
use crate::linalg::{solve_dense, Matrix};
use crate::operators::MonotoneOperator;
use crate::psplit::{kkt_residual, product_point, run, BlockSequence, ProblemInstance, RunOptions, Sequence, SolverConfig};
use crate::scheduler::{Policy, Schedule};

/// Residual a reference point must reach to be usable as an oracle.
pub const REFERENCE_TOL: f64 = 1e-8;

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| { let z: f64 = StandardNormal.sample(&mut *rng); scale * z })
        .collect();
    Matrix::from_row_major(rows, cols, data).expect("shape")
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| { let z: f64 = StandardNormal.sample(&mut *rng); scale * z }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LassoData {
    pub matrix: Matrix,
    pub target: Vec<f64>,
    pub tau: f64,
    /// `‖Mᵀ b‖_∞`: the smallest weight for which the solution is zero.
    pub tau_max: f64,
}

/// `min ½‖M x − b‖² + τ‖x‖₁` as `A = ∂(τ‖·‖₁)`, `B = ∂(½‖· − b‖²)`, `L = M`.
pub fn lasso_from_data(matrix: Matrix, target: Vec<f64>, tau: f64) -> Result<(ProblemInstance, LassoData)> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::Parameter(format!("tau = {tau} must be finite and >= 0")));
    }
    if target.len() != matrix.rows() {
        return Err(Error::Structure(format!(
            "target has {} entries, matrix has {} rows",
            target.len(),
            matrix.rows()
        )));
    }
    let (m, d) = (matrix.rows(), matrix.cols());
    let tau_max = matrix
        .mul_vec_transpose(&target)
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let sig = SpaceSignature::new(vec![d], vec![m])?;
    let inst = ProblemInstance::new(
        vec![MonotoneOperator::l1(d, tau)],
        vec![MonotoneOperator::translated_quadratic(target.clone())],
        vec![vec![0.0; d]],
        vec![vec![0.0; m]],
        LinearCoupling::new(sig, vec![vec![matrix.clone()]])?,
    )?;
    Ok((
        inst,
        LassoData {
            matrix,
            target,
            tau,
            tau_max,
        },
    ))
}

/// Random LASSO: Gaussian `M` with variance `1/m`, target from a half-sparse
/// ground truth plus small noise.
pub fn build_lasso(m: usize, d: usize, tau: f64, seed: u64) -> Result<(ProblemInstance, LassoData)> {
    if m == 0 || d == 0 {
        return Err(Error::Parameter("lasso needs m, d >= 1".into()));
    }
    let (matrix, target) = lasso_data(m, d, seed);
    lasso_from_data(matrix, target, tau)
}

fn lasso_data(m: usize, d: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix = gaussian_matrix(&mut rng, m, d, 1.0 / (m as f64).sqrt());
    let truth: Vec<f64> = (0..d)
        .map(|j| if j % 2 == 0 { StandardNormal.sample(&mut rng) } else { 0.0 })
        .collect();
    let noise = gaussian_vec(&mut rng, m, 0.1);
    let target = matrix
        .mul_vec(&truth)
        .iter()
        .zip(&noise)
        .map(|(a, b)| a + b)
        .collect();
    (matrix, target)
}

/// `‖Mᵀ b‖_∞` for the data `build_lasso(m, d, _, seed)` would draw.
pub fn lasso_tau_max(m: usize, d: usize, seed: u64) -> f64 {
    let (matrix, target) = lasso_data(m, d, seed);
    matrix
        .mul_vec_transpose(&target)
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
}

/// A point known to lie in the solution set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub x: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Certificate {
    pub fn point(&self) -> BlockVector {
        product_point(&self.x, &self.v)
    }
}

/// Find `x_i ∈ [lo_i, hi_i]` with `Σ_i L_{k,i} x_i = r_k` for all `k`.
///
/// A strictly interior point is sampled from the boxes and `r` is derived
/// from it, so the constraints are consistent. Each `B_k` is the normal cone
/// of `{0}`, which turns the dual inclusion into the equality `L x = r`.
pub fn build_feasibility(
    boxes: Vec<(Vec<f64>, Vec<f64>)>,
    couplings: Vec<Vec<Matrix>>,
    seed: u64,
) -> Result<(ProblemInstance, Certificate)> {
    if boxes.is_empty() || couplings.is_empty() {
        return Err(Error::Structure("feasibility needs at least one box and one constraint block".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x0 = Vec::with_capacity(boxes.len());
    for (i, (lo, hi)) in boxes.iter().enumerate() {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Structure(format!("box {i}: bound lengths {} and {}", lo.len(), hi.len())));
        }
        let mut p = Vec::with_capacity(lo.len());
        for (&l, &h) in lo.iter().zip(hi) {
            if l.is_nan() || h.is_nan() || l > h {
                return Err(Error::Parameter(format!("box {i}: empty interval [{l}, {h}]")));
            }
            let u: f64 = rng.random_range(0.25..0.75);
            p.push(match (l.is_finite(), h.is_finite()) {
                (true, true) => l + u * (h - l),
                (true, false) => l + u,
                (false, true) => h - u,
                (false, false) => 2.0 * u - 1.0,
            });
        }
        x0.push(p);
    }
    let primal_dims: Vec<usize> = boxes.iter().map(|b| b.0.len()).collect();
    let dual_dims: Vec<usize> = couplings
        .iter()
        .map(|row| row.iter().map(Matrix::rows).max().unwrap_or(0))
        .collect();
    let sig = SpaceSignature::new(primal_dims, dual_dims.clone())?;
    let coupling = LinearCoupling::new(sig, couplings)?;
    let r: Vec<Vec<f64>> = (0..dual_dims.len())
        .map(|k| coupling.forward_block(k, |i| &x0[i]))
        .collect();
    let inst = ProblemInstance::new(
        boxes
            .into_iter()
            .map(|(lo, hi)| MonotoneOperator::box_normal_cone(lo, hi))
            .collect(),
        dual_dims.iter().map(|&m| MonotoneOperator::point_normal_cone(vec![0.0; m])).collect(),
        x0.iter().map(|p| vec![0.0; p.len()]).collect(),
        r,
        coupling,
    )?;
    let cert = Certificate {
        x: x0,
        v: dual_dims.iter().map(|&m| vec![0.0; m]).collect(),
    };
    Ok((inst, cert))
}

/// Random boxes `[−1 − s, 1 + s]` and Gaussian constraint rows.
pub fn build_random_feasibility(
    primal_dims: &[usize],
    dual_dims: &[usize],
    seed: u64,
) -> Result<(ProblemInstance, Certificate)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfea5);
    let boxes = primal_dims
        .iter()
        .map(|&d| {
            let s: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            (s.iter().map(|v| -1.0 - v).collect(), s.iter().map(|v| 1.0 + v).collect())
        })
        .collect();
    let couplings = dual_dims
        .iter()
        .map(|&m| {
            primal_dims
                .iter()
                .map(|&d| gaussian_matrix(&mut rng, m, d, 1.0 / ((m + d) as f64).sqrt()))
                .collect()
        })
        .collect();
    build_feasibility(boxes, couplings, seed)
}

/// `A_i x = Q_i x + q_i` with `Q_i` strongly monotone (and nonsymmetric),
/// `B_k y = P_k y + p_k` with `P_k` positive semidefinite, random coupling.
/// Returns the instance and its solution from a dense solve.
pub fn build_multiblock_quadratic(
    primal_dims: &[usize],
    dual_dims: &[usize],
    seed: u64,
) -> Result<(ProblemInstance, Certificate)> {
    let total: usize = primal_dims.iter().chain(dual_dims).sum();
    if total > 200 {
        return Err(Error::Parameter(format!("total dimension {total} exceeds 200")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a_ops = primal_dims
        .iter()
        .map(|&d| {
            let g = gaussian_matrix(&mut rng, d, d, 1.0 / (d as f64).sqrt());
            let k = gaussian_matrix(&mut rng, d, d, 0.3 / (d as f64).sqrt());
            let mut q = Matrix::zeros(d, d);
            for r in 0..d {
                for c in 0..d {
                    let gram: f64 = (0..d).map(|j| g.get(j, r) * g.get(j, c)).sum();
                    let skew = k.get(r, c) - k.get(c, r);
                    q.set(r, c, gram + skew + if r == c { 0.5 } else { 0.0 });
                }
            }
            MonotoneOperator::affine(q, gaussian_vec(&mut rng, d, 1.0))
        })
        .collect();
    let b_ops = dual_dims
        .iter()
        .map(|&m| {
            let h = gaussian_matrix(&mut rng, m, m, 1.0 / (m as f64).sqrt());
            let mut p = Matrix::zeros(m, m);
            for r in 0..m {
                for c in 0..m {
                    p.set(r, c, (0..m).map(|j| h.get(j, r) * h.get(j, c)).sum());
                }
            }
            MonotoneOperator::affine(p, gaussian_vec(&mut rng, m, 1.0))
        })
        .collect();
    let couplings = dual_dims
        .iter()
        .map(|&m| {
            primal_dims
                .iter()
                .map(|&d| gaussian_matrix(&mut rng, m, d, 1.0 / ((m + d) as f64).sqrt()))
                .collect()
        })
        .collect();
    let z_star = primal_dims.iter().map(|&d| gaussian_vec(&mut rng, d, 1.0)).collect();
    let r = dual_dims.iter().map(|&m| gaussian_vec(&mut rng, m, 1.0)).collect();
    let sig = SpaceSignature::new(primal_dims.to_vec(), dual_dims.to_vec())?;
    let inst = ProblemInstance::new(a_ops, b_ops, z_star, r, LinearCoupling::new(sig, couplings)?)?;
    let (x, v) = solve_linearized(&inst, None)?;
    Ok((inst, Certificate { x, v }))
}

/// Locally, each operator's graph is affine: per coordinate either the
/// primal value is pinned, or the operator value is an affine function.
enum Piece {
    Pinned(f64),
    /// `value = coef · point + constant`, `coef` over the block's coordinates.
    Affine(Vec<f64>, f64),
}

/// Pieces of `op` around `(p, w)` with `w ∈ op(p)` approximately; `None`
/// for the guess means the operator must be globally affine.
fn pieces(op: &MonotoneOperator, guess: Option<(&[f64], &[f64])>) -> Result<Vec<Piece>> {
    let dim = op.dim();
    let unit = |j: usize, s: f64| {
        let mut c = vec![0.0; dim];
        c[j] = s;
        c
    };
    let near = match guess {
        Some((p, w)) => {
            let arg: Vec<f64> = p.iter().zip(w).map(|(a, b)| a + b).collect();
            Some(op.resolvent(1.0, &arg)?)
        }
        None => None,
    };
    let need = |what: &str| Error::Parameter(format!("{what} operator has no global affine form"));
    Ok(match op {
        MonotoneOperator::Zero { .. } => (0..dim).map(|_| Piece::Affine(vec![0.0; dim], 0.0)).collect(),
        MonotoneOperator::AffineMonotone { matrix, offset } => (0..dim)
            .map(|j| Piece::Affine(matrix.row(j).to_vec(), offset[j]))
            .collect(),
        MonotoneOperator::TranslatedQuadratic { center } => {
            (0..dim).map(|j| Piece::Affine(unit(j, 1.0), -center[j])).collect()
        }
        MonotoneOperator::L1 { weight, .. } => {
            let q = near.ok_or_else(|| need("l1"))?;
            q.iter()
                .map(|&qj| {
                    if qj == 0.0 {
                        Piece::Pinned(0.0)
                    } else {
                        Piece::Affine(vec![0.0; dim], weight * qj.signum())
                    }
                })
                .collect()
        }
        MonotoneOperator::BoxNormalCone { lower, upper } => {
            let q = near.ok_or_else(|| need("box"))?;
            (0..dim)
                .map(|j| {
                    if lower[j] == upper[j] || q[j] == lower[j] {
                        Piece::Pinned(lower[j])
                    } else if q[j] == upper[j] {
                        Piece::Pinned(upper[j])
                    } else {
                        Piece::Affine(vec![0.0; dim], 0.0)
                    }
                })
                .collect()
        }
    })
}

/// Solves the coupled inclusions as a linear system, with the nonsmooth
/// operators replaced by their affine pieces around `guess`.
fn solve_linearized(
    inst: &ProblemInstance,
    guess: Option<(&[Vec<f64>], &[Vec<f64>])>,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let sig = &inst.signature;
    let l = &inst.coupling;
    let (np, nd) = (sig.n_primal(), sig.n_dual());
    let mut po = Vec::with_capacity(np);
    let mut off = 0;
    for &d in &sig.primal_dims {
        po.push(off);
        off += d;
    }
    let mut dof = Vec::with_capacity(nd);
    for &m in &sig.dual_dims {
        dof.push(off);
        off += m;
    }
    let n = off;
    let mut mat = DMatrix::<f64>::zeros(n, n);
    let mut rhs = vec![0.0; n];

    for i in 0..np {
        let g = match guess {
            Some((x, v)) => {
                let ls = l.adjoint_block(i, |k| &v[k]);
                let w: Vec<f64> = inst.z_star[i].iter().zip(&ls).map(|(z, s)| z - s).collect();
                pieces(&inst.a_ops[i], Some((&x[i], &w)))?
            }
            None => pieces(&inst.a_ops[i], None)?,
        };
        for (j, piece) in g.into_iter().enumerate() {
            let row = po[i] + j;
            match piece {
                Piece::Pinned(c) => {
                    mat[(row, po[i] + j)] = 1.0;
                    rhs[row] = c;
                }
                // z*_j − (Σ_k L_{k,i}ᵀ v_k)_j = coef·x_i + constant
                Piece::Affine(coef, constant) => {
                    for (c, &w) in coef.iter().enumerate() {
                        mat[(row, po[i] + c)] += w;
                    }
                    for k in 0..nd {
                        let lk = l.block(k, i);
                        for mm in 0..lk.rows() {
                            mat[(row, dof[k] + mm)] += lk.get(mm, j);
                        }
                    }
                    rhs[row] = inst.z_star[i][j] - constant;
                }
            }
        }
    }
    for k in 0..nd {
        let g = match guess {
            Some((x, v)) => {
                let lx = l.forward_block(k, |i| &x[i]);
                let y: Vec<f64> = lx.iter().zip(&inst.r[k]).map(|(a, r)| a - r).collect();
                pieces(&inst.b_ops[k], Some((&y, &v[k])))?
            }
            None => pieces(&inst.b_ops[k], None)?,
        };
        for (j, piece) in g.into_iter().enumerate() {
            let row = dof[k] + j;
            match piece {
                // (Σ_i L_{k,i} x_i − r_k)_j = c
                Piece::Pinned(c) => {
                    for i in 0..np {
                        let lk = l.block(k, i);
                        for col in 0..lk.cols() {
                            mat[(row, po[i] + col)] += lk.get(j, col);
                        }
                    }
                    rhs[row] = c + inst.r[k][j];
                }
                // v_j = coef·(L x − r) + constant
                Piece::Affine(coef, constant) => {
                    mat[(row, dof[k] + j)] += 1.0;
                    for (mm, &w) in coef.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        for i in 0..np {
                            let lk = l.block(k, i);
                            for col in 0..lk.cols() {
                                mat[(row, po[i] + col)] -= w * lk.get(mm, col);
                            }
                        }
                    }
                    rhs[row] = constant - coef.iter().zip(&inst.r[k]).map(|(w, r)| w * r).sum::<f64>();
                }
            }
        }
    }
    let sol = solve_dense(&mat, &rhs, 1e-10)?;
    let x = (0..np).map(|i| sol[po[i]..po[i] + sig.primal_dims[i]].to_vec()).collect();
    let v = (0..nd).map(|k| sol[dof[k]..dof[k] + sig.dual_dims[k]].to_vec()).collect();
    Ok((x, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMethod {
    /// Every operator is affine: one dense linear solve.
    DenseSolve,
    /// Long synchronous errorless run, refined by a linear solve on the
    /// identified active pieces when that lowers the residual.
    SelfOracle { iterations: usize, refined: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reference {
    pub x: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub residual: f64,
    pub method: ReferenceMethod,
}

impl Reference {
    pub fn point(&self) -> BlockVector {
        product_point(&self.x, &self.v)
    }
}

fn is_affine(op: &MonotoneOperator) -> bool {
    matches!(
        op,
        MonotoneOperator::Zero { .. } | MonotoneOperator::AffineMonotone { .. } | MonotoneOperator::TranslatedQuadratic { .. }
    )
}

/// A point of the solution set, certified by `kkt_residual ≤ 1e−8`.
/// `budget` bounds the self-oracle run for nonsmooth instances.
pub fn reference_solution(inst: &ProblemInstance, budget: usize) -> Result<Reference> {
    if inst.a_ops.iter().chain(&inst.b_ops).all(is_affine) {
        let (x, v) = solve_linearized(inst, None)?;
        return certified(inst, x, v, ReferenceMethod::DenseSolve);
    }
    let cfg = SolverConfig {
        epsilon: 0.05,
        lambda: Sequence::Constant(1.5),
        gamma: BlockSequence::constant(1.0),
        mu: BlockSequence::constant(1.0),
        schedule: Schedule::generate(Policy::Synchronous, 0, 0, 0, inst.n_primal(), inst.n_dual(), budget)?,
        error_model: ErrorModelConfig::zero(),
        max_iter: budget,
        tol: 1e-10,
    };
    let (x0, v0) = inst.zero_point();
    let out = run(inst, &cfg, x0, v0, &RunOptions::default())?;
    let (mut x, mut v) = (out.final_x, out.final_v);
    let mut refined = false;
    if let Ok((xr, vr)) = solve_linearized(inst, Some((&x, &v))) {
        if kkt_residual(inst, &xr, &vr)? < kkt_residual(inst, &x, &v)? {
            (x, v, refined) = (xr, vr, true);
        }
    }
    certified(
        inst,
        x,
        v,
        ReferenceMethod::SelfOracle {
            iterations: out.records.len(),
            refined,
        },
    )
}

fn certified(inst: &ProblemInstance, x: Vec<Vec<f64>>, v: Vec<Vec<f64>>, method: ReferenceMethod) -> Result<Reference> {
    let residual = kkt_residual(inst, &x, &v)?;
    if !(residual <= REFERENCE_TOL) {
        return Err(Error::Assertion(format!(
            "reference residual {residual:e} above {REFERENCE_TOL:e}; instance unusable as an oracle"
        )));
    }
    Ok(Reference { x, v, residual, method })
}

/// Serializable description of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceRecipe {
    Lasso {
        m: usize,
        d: usize,
        /// Absolute weight; exclusive with `tau_fraction`.
        #[serde(default)]
        tau: Option<f64>,
        /// Weight as a fraction of `‖Mᵀ b‖_∞`.
        #[serde(default)]
        tau_fraction: Option<f64>,
        seed: u64,
    },
    Feasibility {
        primal_dims: Vec<usize>,
        dual_dims: Vec<usize>,
        seed: u64,
    },
    MultiblockQuadratic {
        primal_dims: Vec<usize>,
        dual_dims: Vec<usize>,
        seed: u64,
    },
    Inline {
        instance: ProblemInstance,
    },
}

#[derive(Debug, Clone)]
pub struct BuiltInstance {
    pub instance: ProblemInstance,
    /// A solution point known at build time, if the builder provides one.
    pub known_solution: Option<Certificate>,
}

impl InstanceRecipe {
    pub fn name(&self) -> &'static str {
        match self {
            InstanceRecipe::Lasso { .. } => "lasso",
            InstanceRecipe::Feasibility { .. } => "feasibility",
            InstanceRecipe::MultiblockQuadratic { .. } => "multiblock_quadratic",
            InstanceRecipe::Inline { .. } => "inline",
        }
    }

    pub fn build(&self) -> Result<BuiltInstance> {
        Ok(match self {
            InstanceRecipe::Lasso {
                m,
                d,
                tau,
                tau_fraction,
                seed,
            } => {
                let tau = match (tau, tau_fraction) {
                    (Some(t), None) => *t,
                    (None, Some(f)) => f * lasso_tau_max(*m, *d, *seed),
                    _ => {
                        return Err(Error::Parameter(
                            "lasso: exactly one of tau, tau_fraction must be given".into(),
                        ))
                    }
                };
                BuiltInstance {
                    instance: build_lasso(*m, *d, tau, *seed)?.0,
                    known_solution: None,
                }
            }
            InstanceRecipe::Feasibility {
                primal_dims,
                dual_dims,
                seed,
            } => {
                let (instance, cert) = build_random_feasibility(primal_dims, dual_dims, *seed)?;
                BuiltInstance {
                    instance,
                    known_solution: Some(cert),
                }
            }
            InstanceRecipe::MultiblockQuadratic {
                primal_dims,
                dual_dims,
                seed,
            } => {
                let (instance, cert) = build_multiblock_quadratic(primal_dims, dual_dims, *seed)?;
                BuiltInstance {
                    instance,
                    known_solution: Some(cert),
                }
            }
            InstanceRecipe::Inline { instance } => {
                instance.validate()?;
                BuiltInstance {
                    instance: instance.clone(),
                    known_solution: None,
                }
            }
        })
    }
}
