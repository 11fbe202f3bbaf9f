//! Asynchronous block-iterative projective splitting.
//!
//! Each iteration updates the active primal blocks `i ∈ I_n` from the delayed
//! iterate `n' = c_i(n)` and the active dual blocks `k ∈ K_n` from `d_k(n)`,
//! then projects the current point onto the separating halfspace built from
//! `t* = a* + L* b*` and `t = b − L a`. Inactive blocks carry their previous
//! `a, a*` (resp. `b, b*`), but `t_k` is always rebuilt from the fresh `a`.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coupling::LinearCoupling;
use crate::error::{Error, Result};
use crate::errors::{
    admit_with_shrink, check_dual_conditions, check_primal_conditions, propose_dual_error,
    propose_primal_error, ConditionReport, ErrorModelConfig,
};
use crate::hilbert::{dot, norm2, vsub, BlockVector, SpaceSignature};
use crate::operators::MonotoneOperator;
use crate::scheduler::{ActivationTracker, Schedule};
use crate::theorem1::{
    check_admissibility, t1_propose, AdmissibilityReport, DiagonalKernel, ProductOperator, StepInputs,
};
use crate::warped_core::{check_epsilon, check_relaxation, halfspace_update};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInstance {
    pub signature: SpaceSignature,
    pub a_ops: Vec<MonotoneOperator>,
    pub b_ops: Vec<MonotoneOperator>,
    pub z_star: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub coupling: LinearCoupling,
}

impl ProblemInstance {
    pub fn new(
        a_ops: Vec<MonotoneOperator>,
        b_ops: Vec<MonotoneOperator>,
        z_star: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        coupling: LinearCoupling,
    ) -> Result<Self> {
        let inst = ProblemInstance {
            signature: coupling.signature().clone(),
            a_ops,
            b_ops,
            z_star,
            r,
            coupling,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let sig = &self.signature;
        sig.validate()?;
        if self.coupling.signature() != sig {
            return Err(Error::Structure("coupling signature differs from instance signature".into()));
        }
        self.coupling.validate()?;
        let check = |ops: &[MonotoneOperator], vecs: &[Vec<f64>], dims: &[usize], op: &str, vec: &str| {
            if ops.len() != dims.len() || vecs.len() != dims.len() {
                return Err(Error::Structure(format!(
                    "{} blocks expected, got {} {op} and {} {vec}",
                    dims.len(),
                    ops.len(),
                    vecs.len()
                )));
            }
            for (j, ((o, v), &d)) in ops.iter().zip(vecs).zip(dims).enumerate() {
                o.validate()?;
                if o.dim() != d || v.len() != d {
                    return Err(Error::Structure(format!(
                        "block {j}: dimension {d} expected, {op} has {} and {vec} has {}",
                        o.dim(),
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Data(format!("{vec}[{j}] is not finite")));
                }
            }
            Ok(())
        };
        check(&self.a_ops, &self.z_star, &sig.primal_dims, "a_ops", "z_star")?;
        check(&self.b_ops, &self.r, &sig.dual_dims, "b_ops", "r")
    }

    pub fn product_operator(&self) -> ProductOperator<'_> {
        ProductOperator {
            a_ops: &self.a_ops,
            z_star: &self.z_star,
            b_ops: &self.b_ops,
            r: &self.r,
        }
    }

    pub fn n_primal(&self) -> usize {
        self.signature.n_primal()
    }

    pub fn n_dual(&self) -> usize {
        self.signature.n_dual()
    }

    pub fn zero_point(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            self.signature.primal_dims.iter().map(|&d| vec![0.0; d]).collect(),
            self.signature.dual_dims.iter().map(|&d| vec![0.0; d]).collect(),
        )
    }
}

/// Product-space point `(x, v*)`.
pub fn product_point(x: &[Vec<f64>], v: &[Vec<f64>]) -> BlockVector {
    BlockVector::new(x.iter().chain(v).cloned().collect())
}

/// KKT residual; zero exactly when `(x, v*)` solves the coupled inclusions.
pub fn kkt_residual(inst: &ProblemInstance, x: &[Vec<f64>], v: &[Vec<f64>]) -> Result<f64> {
    let l = &inst.coupling;
    let mut sum = 0.0;
    for i in 0..inst.n_primal() {
        let ls = l.adjoint_block(i, |k| &v[k]);
        let arg: Vec<f64> = x[i]
            .iter()
            .zip(&inst.z_star[i])
            .zip(&ls)
            .map(|((xi, z), s)| xi + z - s)
            .collect();
        let p = inst.a_ops[i].resolvent(1.0, &arg)?;
        let d = vsub(&x[i], &p);
        sum += dot(&d, &d);
    }
    for k in 0..inst.n_dual() {
        let lx = l.forward_block(k, |i| &x[i]);
        let w: Vec<f64> = v[k]
            .iter()
            .zip(&lx)
            .zip(&inst.r[k])
            .map(|((vk, a), rk)| vk + a - rk)
            .collect();
        let jb = inst.b_ops[k].resolvent(1.0, &w)?;
        let d: Vec<f64> = v[k]
            .iter()
            .zip(w.iter().zip(&jb))
            .map(|(vk, (wk, j))| vk - (wk - j))
            .collect();
        sum += dot(&d, &d);
    }
    Ok(sum.sqrt())
}

/// A scalar sequence indexed by iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sequence {
    Constant(f64),
    /// Repeats the listed values with period equal to their count.
    Cycle(Vec<f64>),
}

impl Sequence {
    pub fn value(&self, n: usize) -> f64 {
        match self {
            Sequence::Constant(v) => *v,
            Sequence::Cycle(vs) => vs[n % vs.len()],
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            Sequence::Constant(v) => std::slice::from_ref(v),
            Sequence::Cycle(vs) => vs,
        }
    }

    fn check(&self, what: &str, lo: f64, hi: f64, interval: &str) -> Result<()> {
        if self.values().is_empty() {
            return Err(Error::Parameter(format!("{what}: cycle must not be empty")));
        }
        for &v in self.values() {
            if !(v >= lo && v <= hi) {
                return Err(Error::Parameter(format!(
                    "{what} = {v} outside {interval} = [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Per-block sequences, either shared by every block or listed blockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockSequence {
    Shared(Sequence),
    PerBlock(Vec<Sequence>),
}

impl BlockSequence {
    pub fn constant(v: f64) -> Self {
        BlockSequence::Shared(Sequence::Constant(v))
    }

    pub fn value(&self, block: usize, n: usize) -> f64 {
        match self {
            BlockSequence::Shared(s) => s.value(n),
            BlockSequence::PerBlock(ss) => ss[block].value(n),
        }
    }

    fn check(&self, what: &str, blocks: usize, epsilon: f64) -> Result<()> {
        let hi = 1.0 / epsilon;
        match self {
            BlockSequence::Shared(s) => s.check(what, epsilon, hi, "[epsilon, 1/epsilon]"),
            BlockSequence::PerBlock(ss) => {
                if ss.len() != blocks {
                    return Err(Error::Parameter(format!(
                        "{what}: {} per-block sequences for {blocks} blocks",
                        ss.len()
                    )));
                }
                for (j, s) in ss.iter().enumerate() {
                    s.check(&format!("{what}[{j}]"), epsilon, hi, "[epsilon, 1/epsilon]")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub lambda: Sequence,
    pub gamma: BlockSequence,
    pub mu: BlockSequence,
    pub schedule: Schedule,
    #[serde(default)]
    pub error_model: ErrorModelConfig,
    pub max_iter: usize,
    pub tol: f64,
}

impl SolverConfig {
    pub fn validate(&self, inst: &ProblemInstance) -> Result<()> {
        check_epsilon(self.epsilon)?;
        self.lambda
            .check("lambda", self.epsilon, 2.0 - self.epsilon, "[epsilon, 2 - epsilon]")?;
        self.gamma.check("gamma", inst.n_primal(), self.epsilon)?;
        self.mu.check("mu", inst.n_dual(), self.epsilon)?;
        self.error_model.validate()?;
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::Parameter(format!("tol = {} must be >= 0", self.tol)));
        }
        if self.schedule.n_primal() != inst.n_primal() || self.schedule.n_dual() != inst.n_dual() {
            return Err(Error::Structure(format!(
                "schedule covers {}x{} blocks, instance has {}x{}",
                self.schedule.n_primal(),
                self.schedule.n_dual(),
                inst.n_primal(),
                inst.n_dual()
            )));
        }
        if self.schedule.len() < self.max_iter {
            return Err(Error::Parameter(format!(
                "schedule has {} records, max_iter = {}",
                self.schedule.len(),
                self.max_iter
            )));
        }
        self.schedule
            .validate()
            .map_err(|v| Error::Parameter(format!("invalid schedule: {v}")))
    }
}

/// Solver state: current point, carried block values and the delay buffer.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub n: usize,
    pub x: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub a_star: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub b_star: Vec<Vec<f64>>,
    /// `history[j]` holds the iterate `n − j`, for `j ≤ D`.
    history: VecDeque<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
    depth: usize,
}

impl SolverState {
    pub fn new(inst: &ProblemInstance, x0: Vec<Vec<f64>>, v0: Vec<Vec<f64>>, delay_bound: usize) -> Result<Self> {
        let x_bv = BlockVector::new(x0);
        let v_bv = BlockVector::new(v0);
        x_bv.check_conforms(&inst.signature.primal_dims, "x0")?;
        v_bv.check_conforms(&inst.signature.dual_dims, "v0")?;
        x_bv.check_finite("x0")?;
        v_bv.check_finite("v0")?;
        let (x, v) = (x_bv.into_blocks(), v_bv.into_blocks());
        let (za, zb) = inst.zero_point();
        let mut history = VecDeque::with_capacity(delay_bound + 1);
        history.push_front((x.clone(), v.clone()));
        Ok(SolverState {
            n: 0,
            x,
            v,
            a: za.clone(),
            a_star: za,
            b: zb.clone(),
            b_star: zb,
            history,
            depth: delay_bound + 1,
        })
    }

    fn delayed(&self, j: usize) -> Result<&(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if j > self.n || self.n - j >= self.history.len() {
            return Err(Error::Structure(format!(
                "delayed read of iterate {j} at iteration {} outside buffer of depth {}",
                self.n, self.depth
            )));
        }
        Ok(&self.history[self.n - j])
    }

    pub fn point(&self) -> BlockVector {
        product_point(&self.x, &self.v)
    }
}

/// One trace row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub n: usize,
    pub pi: f64,
    pub tau: f64,
    pub theta: f64,
    /// `‖x_{n+1} − x_n‖` in the product space.
    pub step_norm: f64,
    /// Residual at `x_{n+1}`.
    pub kkt_residual: f64,
    pub dist_to_reference: Option<f64>,
    pub wall_clock_ns: u64,
}

/// Everything a single iteration computed, for certificates and replay.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationDetail {
    pub n: usize,
    pub primal_errors: Vec<Option<Vec<f64>>>,
    pub dual_errors: Vec<Option<Vec<f64>>>,
    pub primal_reports: Vec<Option<ConditionReport>>,
    pub dual_reports: Vec<Option<ConditionReport>>,
    pub a: Vec<Vec<f64>>,
    pub a_star: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub b_star: Vec<Vec<f64>>,
    pub t_star: Vec<Vec<f64>>,
    pub t: Vec<Vec<f64>>,
    /// `x_{n+1}` in the product space.
    pub next_point: BlockVector,
}

pub struct StepOutcome {
    pub pi: f64,
    pub tau: f64,
    pub theta: f64,
    pub step_norm: f64,
    pub detail: IterationDetail,
}

/// Performs iteration `state.n` and advances the state.
pub fn iterate(state: &mut SolverState, inst: &ProblemInstance, cfg: &SolverConfig) -> Result<StepOutcome> {
    let n = state.n;
    iterate_inner(state, inst, cfg).map_err(|e| e.at_iteration(n))
}

fn iterate_inner(state: &mut SolverState, inst: &ProblemInstance, cfg: &SolverConfig) -> Result<StepOutcome> {
    let n = state.n;
    if n >= cfg.schedule.len() {
        return Err(Error::Parameter(format!("schedule has no record for iteration {n}")));
    }
    let rec = cfg.schedule.record(n);
    let lambda = cfg.lambda.value(n);
    check_relaxation(lambda, cfg.epsilon)?;
    let em = &cfg.error_model;
    let l = &inst.coupling;
    let (np, nd) = (inst.n_primal(), inst.n_dual());

    let mut primal_errors = vec![None; np];
    let mut primal_reports = vec![None; np];
    for &i in &rec.active_primal {
        let c = rec.c[i];
        let (xh, vh) = state.delayed(c)?;
        let xd = &xh[i];
        let ls = l.adjoint_block(i, |k| &vh[k]);
        let g = cfg.gamma.value(i, c);
        let base: Vec<f64> = xd
            .iter()
            .zip(&inst.z_star[i])
            .zip(&ls)
            .map(|((x, z), s)| x + g * (z - s))
            .collect();
        let op = &inst.a_ops[i];
        let candidate = propose_primal_error(em, i, n, xd.len());
        let got = admit_with_shrink(candidate, |e| {
            let arg: Vec<f64> = base.iter().zip(e).map(|(p, q)| p + q).collect();
            let a = op.resolvent(g, &arg)?;
            let a_star: Vec<f64> = xd
                .iter()
                .zip(&a)
                .zip(e)
                .zip(&ls)
                .map(|(((x, ai), ei), s)| (x - ai + ei) / g - s)
                .collect();
            let report = check_primal_conditions(xd, &a, e, &a_star, &ls, g, em.sigma);
            Ok(((a, a_star), report))
        })?;
        let (a, a_star) = got.output;
        state.a[i] = a;
        state.a_star[i] = a_star;
        primal_errors[i] = Some(got.error);
        primal_reports[i] = Some(got.report);
    }

    let mut dual_errors = vec![None; nd];
    let mut dual_reports = vec![None; nd];
    for &k in &rec.active_dual {
        let d = rec.d[k];
        let (xh, vh) = state.delayed(d)?;
        let lk = l.forward_block(k, |i| &xh[i]);
        let vd = &vh[k];
        let mu = cfg.mu.value(k, d);
        let rk = &inst.r[k];
        let base: Vec<f64> = lk
            .iter()
            .zip(vd)
            .zip(rk)
            .map(|((a, v), r)| a + mu * v - r)
            .collect();
        let op = &inst.b_ops[k];
        let candidate = propose_dual_error(em, k, n, vd.len());
        let got = admit_with_shrink(candidate, |f| {
            let arg: Vec<f64> = base.iter().zip(f).map(|(p, q)| p + q).collect();
            let j = op.resolvent(mu, &arg)?;
            let b: Vec<f64> = rk.iter().zip(&j).map(|(r, j)| r + j).collect();
            let b_star: Vec<f64> = vd
                .iter()
                .zip(&lk)
                .zip(&b)
                .zip(f)
                .map(|(((v, a), bb), ff)| v + (a - bb + ff) / mu)
                .collect();
            let report = check_dual_conditions(&lk, &b, f, &b_star, vd, mu, em.zeta);
            Ok(((b, b_star), report))
        })?;
        let (b, b_star) = got.output;
        state.b[k] = b;
        state.b_star[k] = b_star;
        dual_errors[k] = Some(got.error);
        dual_reports[k] = Some(got.report);
    }

    // t_k is rebuilt for every k, active or not, from the current a.
    let t: Vec<Vec<f64>> = (0..nd)
        .map(|k| vsub(&state.b[k], &l.forward_block(k, |i| &state.a[i])))
        .collect();
    let t_star: Vec<Vec<f64>> = (0..np)
        .map(|i| {
            let s = l.adjoint_block(i, |k| &state.b_star[k]);
            state.a_star[i].iter().zip(&s).map(|(a, s)| a + s).collect()
        })
        .collect();

    // Σ_i (⟨x_i, t*_i⟩ − ⟨a_i, a*_i⟩) + Σ_k (⟨t_k, v*_k⟩ − ⟨b_k, b*_k⟩), regrouped as
    // Σ_i ⟨x_i − a_i, t*_i⟩ + Σ_k ⟨v*_k − b*_k, t_k⟩: the cross terms
    // ⟨a, L* b*⟩ − ⟨b*, L a⟩ cancel, and the grouped form avoids cancellation
    // between O(1) terms once the iterates approach the solution set.
    let mut pi = 0.0;
    for i in 0..np {
        pi += dot(&vsub(&state.x[i], &state.a[i]), &t_star[i]);
    }
    for k in 0..nd {
        pi += dot(&vsub(&state.v[k], &state.b_star[k]), &t[k]);
    }
    let tau: f64 = t_star.iter().chain(&t).map(|w| dot(w, w)).sum();
    if !pi.is_finite() || !tau.is_finite() {
        return Err(Error::Data(format!("non-finite separator (pi = {pi}, tau = {tau})")));
    }
    let theta = if pi > 0.0 {
        if tau == 0.0 {
            return Err(Error::Assertion(format!("positive separator {pi:e} with tau = 0")));
        }
        lambda * pi / tau
    } else {
        0.0
    };

    let mut step_sq = 0.0;
    for (xi, ts) in state.x.iter_mut().zip(&t_star) {
        for (p, q) in xi.iter_mut().zip(ts) {
            let next = *p - theta * q;
            step_sq += (next - *p) * (next - *p);
            *p = next;
        }
    }
    for (vk, tk) in state.v.iter_mut().zip(&t) {
        for (p, q) in vk.iter_mut().zip(tk) {
            let next = *p - theta * q;
            step_sq += (next - *p) * (next - *p);
            *p = next;
        }
    }
    let next_point = state.point();
    next_point.check_finite("iterate")?;

    state.n += 1;
    state.history.push_front((state.x.clone(), state.v.clone()));
    state.history.truncate(state.depth);

    Ok(StepOutcome {
        pi,
        tau,
        theta,
        step_norm: step_sq.sqrt(),
        detail: IterationDetail {
            n,
            primal_errors,
            dual_errors,
            primal_reports,
            dual_reports,
            a: state.a.clone(),
            a_star: state.a_star.clone(),
            b: state.b.clone(),
            b_star: state.b_star.clone(),
            t_star,
            t,
            next_point,
        },
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep an [`IterationDetail`] for every iteration.
    pub keep_details: bool,
    /// Point to report `dist_to_reference` against.
    pub reference: Option<BlockVector>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<IterationRecord>,
    pub details: Vec<IterationDetail>,
    pub initial_kkt: f64,
    pub final_x: Vec<Vec<f64>>,
    pub final_v: Vec<Vec<f64>>,
    pub converged: bool,
}

impl RunOutput {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_kkt(&self) -> f64 {
        self.records.last().map_or(self.initial_kkt, |r| r.kkt_residual)
    }

    pub fn final_point(&self) -> BlockVector {
        product_point(&self.final_x, &self.final_v)
    }
}

/// Iterates until the KKT residual drops to `cfg.tol` or `cfg.max_iter` is hit.
pub fn run(
    inst: &ProblemInstance,
    cfg: &SolverConfig,
    x0: Vec<Vec<f64>>,
    v0: Vec<Vec<f64>>,
    opts: &RunOptions,
) -> Result<RunOutput> {
    inst.validate()?;
    cfg.validate(inst)?;
    if let Some(z) = &opts.reference {
        z.check_conforms(&inst.signature.product_dims(), "reference")?;
    }
    let start = Instant::now();
    let mut state = SolverState::new(inst, x0, v0, cfg.schedule.delay_bound)?;
    let initial_kkt = kkt_residual(inst, &state.x, &state.v)?;
    let mut records = Vec::new();
    let mut details = Vec::new();
    let mut converged = initial_kkt <= cfg.tol;
    while !converged && state.n < cfg.max_iter {
        let n = state.n;
        let out = iterate(&mut state, inst, cfg)?;
        let kkt = kkt_residual(inst, &state.x, &state.v).map_err(|e| e.at_iteration(n))?;
        let dist_to_reference = match &opts.reference {
            Some(z) => Some(out.detail.next_point.distance(z)?),
            None => None,
        };
        records.push(IterationRecord {
            n,
            pi: out.pi,
            tau: out.tau,
            theta: out.theta,
            step_norm: out.step_norm,
            kkt_residual: kkt,
            dist_to_reference,
            wall_clock_ns: start.elapsed().as_nanos() as u64,
        });
        if opts.keep_details {
            details.push(out.detail);
        }
        converged = kkt <= cfg.tol;
    }
    Ok(RunOutput {
        records,
        details,
        initial_kkt,
        final_x: state.x,
        final_v: state.v,
        converged,
    })
}

/// Largest violation of `a*_i ∈ −z*_i + A_i a_i` and `b_k ∈ r_k + B_k^{-1} b*_k`.
pub fn inclusion_certificate(inst: &ProblemInstance, detail: &IterationDetail) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..inst.n_primal() {
        // z* + a* ∈ A a  ⟺  a = J_A(a + a* + z*)
        let arg: Vec<f64> = detail.a[i]
            .iter()
            .zip(&detail.a_star[i])
            .zip(&inst.z_star[i])
            .map(|((a, s), z)| a + s + z)
            .collect();
        worst = worst.max(inst.a_ops[i].verify_resolvent_inclusion(1.0, &arg, &detail.a[i])?);
    }
    for k in 0..inst.n_dual() {
        // b* ∈ B(b − r)  ⟺  b − r = J_B(b − r + b*)
        let y = vsub(&detail.b[k], &inst.r[k]);
        let arg: Vec<f64> = y.iter().zip(&detail.b_star[k]).map(|(p, q)| p + q).collect();
        worst = worst.max(inst.b_ops[k].verify_resolvent_inclusion(1.0, &arg, &y)?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Primal(usize),
    Dual(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Divergence {
    pub iteration: usize,
    pub component: Component,
    pub magnitude: f64,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (side, b) = match self.component {
            Component::Primal(i) => ("primal", i),
            Component::Dual(k) => ("dual", k),
        };
        write!(
            f,
            "iteration {}: {side} block {b} differs by {:e}",
            self.iteration, self.magnitude
        )
    }
}

/// Per-iteration data of the replay through the skew-decomposed step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedStep {
    pub n: usize,
    pub u: BlockVector,
    pub e_star: BlockVector,
    pub f_star: BlockVector,
    pub kernel: DiagonalKernel,
    pub admissibility: AdmissibilityReport,
    /// Product-space distance between the two next iterates.
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct EmbeddingReport {
    pub steps: Vec<EmbeddedStep>,
    pub embedded_points: Vec<BlockVector>,
    pub max_distance: f64,
    /// First iteration whose next iterates differ by more than the tolerance.
    pub first_divergence: Option<Divergence>,
    pub min_admissibility_margin: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EmbedOptions {
    pub tolerance: f64,
    /// Test hook: doubles the first primal kernel step at this iteration.
    pub corrupt_at: Option<usize>,
}

/// Replays a recorded direct run through `t1_propose` and the halfspace
/// projection, building `u_n`, `e*_n`, `f*_n` and `F_n` from the schedule's
/// most recent activations, and compares the two iterate streams.
pub fn embed_to_theorem1(
    inst: &ProblemInstance,
    cfg: &SolverConfig,
    x0: Vec<Vec<f64>>,
    v0: Vec<Vec<f64>>,
    direct: &RunOutput,
    opts: EmbedOptions,
) -> Result<EmbeddingReport> {
    if direct.details.len() != direct.records.len() {
        return Err(Error::Parameter("embedding needs a run recorded with keep_details".into()));
    }
    let (np, nd) = (inst.n_primal(), inst.n_dual());
    let op = inst.product_operator();
    let l = &inst.coupling;
    let schedule = &cfg.schedule;
    let depth = schedule.coverage_window + schedule.delay_bound + 1;
    let delta = cfg.error_model.delta();

    let mut x = product_point(&x0, &v0);
    // ring buffer of embedded iterates; history[j] is iterate n − j
    let mut history: VecDeque<BlockVector> = VecDeque::from([x.clone()]);
    let mut tracker = ActivationTracker::new(np, nd);
    let mut steps = Vec::with_capacity(direct.details.len());
    let mut embedded_points = Vec::with_capacity(direct.details.len());
    let mut max_distance: f64 = 0.0;
    let mut first_divergence = None;
    let mut min_margin = f64::INFINITY;

    for (n, detail) in direct.details.iter().enumerate() {
        let rec = schedule.record(n);
        tracker.observe(n, rec);
        let at = |j: usize| -> Result<&BlockVector> {
            if j > n || n - j >= history.len() {
                return Err(Error::Structure(format!("embedded read of iterate {j} at {n} out of range")).at_iteration(n));
            }
            Ok(&history[n - j])
        };

        let mut u = Vec::with_capacity(np + nd);
        let mut e_star = Vec::with_capacity(np + nd);
        let mut f_star = Vec::with_capacity(np + nd);
        let mut gammas = Vec::with_capacity(np);
        let mut mus = Vec::with_capacity(nd);
        let primal_reads: Vec<(usize, usize)> = (0..np).map(|i| tracker.primal(i)).collect();
        let dual_reads: Vec<(usize, usize)> = (0..nd).map(|k| tracker.dual(k)).collect();

        for (i, &(lbar, ell)) in primal_reads.iter().enumerate() {
            let xl = at(ell)?;
            u.push(xl.block(i).to_vec());
            // Σ_k L*_{k,i} v*_{k,ϑ_k(n)} − Σ_k L*_{k,i} v*_{k,ℓ_i(n)}
            let mut reads = Vec::with_capacity(nd);
            for &(_, th) in &dual_reads {
                reads.push(at(th)?);
            }
            let fresh = l.adjoint_block(i, |k| reads[k].block(np + k));
            let stale = l.adjoint_block(i, |k| xl.block(np + k));
            e_star.push(vsub(&fresh, &stale));
            let mut g = cfg.gamma.value(i, ell);
            if i == 0 && opts.corrupt_at == Some(n) {
                g *= 2.0;
            }
            gammas.push(g);
            let e = error_at(&direct.details, lbar, |d| d.primal_errors[i].as_ref(), "primal", i)?;
            f_star.push(e.iter().map(|v| v / cfg.gamma.value(i, ell)).collect());
        }
        for (k, &(tbar, th)) in dual_reads.iter().enumerate() {
            let pt = at(th)?;
            u.push(pt.block(np + k).to_vec());
            // Σ_i L_{k,i} x_{i,ϑ_k(n)} − Σ_i L_{k,i} x_{i,ℓ_i(n)}
            let mut reads = Vec::with_capacity(np);
            for &(_, ell) in &primal_reads {
                reads.push(at(ell)?);
            }
            let fresh = l.forward_block(k, |i| pt.block(i));
            let stale = l.forward_block(k, |i| reads[i].block(i));
            e_star.push(vsub(&fresh, &stale));
            mus.push(cfg.mu.value(k, th));
            let f = error_at(&direct.details, tbar, |d| d.dual_errors[k].as_ref(), "dual", k)?;
            f_star.push(f.clone());
        }

        let inputs = StepInputs {
            u: BlockVector::new(u),
            e_star: BlockVector::new(e_star),
            f_star: BlockVector::new(f_star),
        };
        let kernel = DiagonalKernel::new(gammas, mus).map_err(|e| e.at_iteration(n))?;
        let prop = t1_propose(&x, &inputs, &kernel, &op, l).map_err(|e| e.at_iteration(n))?;
        let out = halfspace_update(&x, &prop.y, &prop.y_star, cfg.lambda.value(n), cfg.epsilon)
            .map_err(|e| e.at_iteration(n))?;
        let admissibility = check_admissibility(
            &inputs.u,
            &prop.y,
            &prop.a_star,
            &inputs.e_star,
            &inputs.f_star,
            &kernel,
            l,
            delta,
        )?;
        min_margin = min_margin
            .min(admissibility.cond1_margin)
            .min(admissibility.cond2_margin);

        let distance = out.next_x.distance(&detail.next_point)?;
        max_distance = max_distance.max(distance);
        if first_divergence.is_none() && !(distance <= opts.tolerance) {
            first_divergence = Some(locate(n, np, &out.next_x, &detail.next_point));
        }
        x = out.next_x;
        history.push_front(x.clone());
        history.truncate(depth);
        embedded_points.push(x.clone());
        steps.push(EmbeddedStep {
            n,
            u: inputs.u,
            e_star: inputs.e_star,
            f_star: inputs.f_star,
            kernel,
            admissibility,
            distance,
        });
    }
    Ok(EmbeddingReport {
        steps,
        embedded_points,
        max_distance,
        first_divergence,
        min_admissibility_margin: min_margin,
    })
}

fn error_at<'a>(
    details: &'a [IterationDetail],
    j: usize,
    pick: impl Fn(&'a IterationDetail) -> Option<&'a Vec<f64>>,
    side: &str,
    block: usize,
) -> Result<&'a Vec<f64>> {
    pick(&details[j]).ok_or_else(|| {
        Error::Structure(format!("no recorded {side} error for block {block} at activation {j}")).at_iteration(j)
    })
}

fn locate(n: usize, np: usize, p: &BlockVector, q: &BlockVector) -> Divergence {
    let (mut best, mut mag) = (0, -1.0);
    for j in 0..p.n_blocks() {
        let d = norm2(&vsub(p.block(j), q.block(j)));
        if !(d <= mag) {
            best = j;
            mag = d;
        }
    }
    Divergence {
        iteration: n,
        component: if best < np {
            Component::Primal(best)
        } else {
            Component::Dual(best - np)
        },
        magnitude: mag,
    }
}
