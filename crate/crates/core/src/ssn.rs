//! Semismooth Newton solver for the augmented Lagrangian subproblem
//!
//! ```text
//! phi(x) = f(x) + (sigma/2) sum_l || max(v_l - proj_{B_kl}(v_l), 0) ||^2
//!               + (sigma/2) || w - proj_X(w) ||^2 + (m_scale / (2 sigma)) ||x - x_anchor||^2
//! v_l = A_l x + b_l + lambda_l / sigma,   w = x + mu / sigma
//! ```
//!
//! The residual `v - proj(v)` is `lambda_bar * mu_bar`, supported on the
//! `alpha ∪ beta` rows of each block, so gradients and Newton matrices only
//! touch those rows.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{mismatch, Error, Result};
use crate::jacobian::{build_reduced_factor_masked, case_of};
use crate::model::{axpy, dot, norm2, Objective, Problem, RowMatrix};
use crate::projection::{next_hint, project_bk_with_hint_timed, TopKProjection};
use crate::trace::Timings;

/// How the proximal weight `M = m_scale * I` is chosen for a given `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProxPolicy {
    /// `m_scale = 1` for linear objectives (a proximal weight `1/sigma` that
    /// fades as sigma grows), `1e-6 * sigma` otherwise.
    Auto,
    Fixed(f64),
}

impl ProxPolicy {
    pub fn m_scale(&self, objective: &Objective, sigma: f64) -> f64 {
        match *self {
            ProxPolicy::Auto if objective.is_linear() => 1.0,
            ProxPolicy::Auto => 1e-6 * sigma,
            ProxPolicy::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsnSettings {
    pub max_iter: usize,
    /// Backtracking factor.
    pub ls_delta: f64,
    /// Armijo constant.
    pub ls_c: f64,
    pub max_backtracks: usize,
}

impl Default for SsnSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            ls_delta: 0.5,
            ls_c: 1e-4,
            max_backtracks: 50,
        }
    }
}

/// Data fixed during one subproblem solve.
#[derive(Debug, Clone, Copy)]
pub struct SubproblemContext<'a> {
    pub prob: &'a Problem,
    /// Stacked block multipliers.
    pub lambda: &'a [f64],
    pub mu: &'a [f64],
    pub sigma: f64,
    pub m_scale: f64,
    pub x_anchor: &'a [f64],
}

impl<'a> SubproblemContext<'a> {
    pub fn new(
        prob: &'a Problem,
        lambda: &'a [f64],
        mu: &'a [f64],
        sigma: f64,
        m_scale: f64,
        x_anchor: &'a [f64],
    ) -> Result<Self> {
        let n = prob.n();
        if lambda.len() != prob.total_rows() || mu.len() != n || x_anchor.len() != n {
            return Err(mismatch(format!(
                "subproblem expects lambda/mu/anchor of lengths {}/{n}/{n}, got {}/{}/{}",
                prob.total_rows(),
                lambda.len(),
                mu.len(),
                x_anchor.len()
            )));
        }
        if !(sigma > 0.0) || !(m_scale >= 0.0) {
            return Err(crate::error::invalid(format!(
                "need sigma > 0 and m_scale >= 0, got {sigma} and {m_scale}"
            )));
        }
        Ok(Self {
            prob,
            lambda,
            mu,
            sigma,
            m_scale,
            x_anchor,
        })
    }
}

/// Per-solve scratch: partial-sort hints per block and kernel timings.
#[derive(Debug, Clone)]
pub struct Workspace {
    hints: Vec<usize>,
    pub timings: Timings,
    /// Projections computed so far.
    pub projections: u64,
    /// Projections whose hinted prefix had to be enlarged.
    pub resorts: u64,
}

impl Workspace {
    pub fn new(prob: &Problem) -> Self {
        Self {
            hints: prob.blocks.iter().map(|b| next_hint(b.k, b.m())).collect(),
            timings: Timings::default(),
            projections: 0,
            resorts: 0,
        }
    }

    /// Projects every block of the stacked vector `v`.
    pub fn project_blocks(&mut self, prob: &Problem, v: &[f64]) -> Result<Vec<TopKProjection>> {
        let offsets = prob.offsets();
        let mut out = Vec::with_capacity(prob.blocks.len());
        for (l, blk) in prob.blocks.iter().enumerate() {
            let p = project_bk_with_hint_timed(&v[offsets[l]..offsets[l + 1]], blk.k, self.hints[l], &mut self.timings)?;
            self.hints[l] = next_hint(p.pair.k1, blk.m());
            self.projections += 1;
            self.resorts += u64::from(p.retries > 0);
            out.push(p);
        }
        Ok(out)
    }
}

/// `phi` and the projections behind it at one point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub x: Vec<f64>,
    /// Stacked `A x + b`.
    pub g: Vec<f64>,
    /// Per-block projections of `v = g + lambda / sigma`.
    pub projections: Vec<TopKProjection>,
    /// `w = x + mu / sigma`.
    pub w: Vec<f64>,
    pub value: f64,
}

impl Evaluation {
    /// Stacked `proj(v)`, i.e. the `y` recovered from this point.
    pub fn y(&self) -> Vec<f64> {
        self.projections.iter().flat_map(|p| p.ybar.iter().copied()).collect()
    }

    /// `proj_X(w)`, i.e. the `z` recovered from this point.
    pub fn z(&self, prob: &Problem) -> Vec<f64> {
        prob.bounds.project(&self.w)
    }
}

/// Residual `max(v_i - ybar_i, 0)` on the `alpha ∪ beta` rows of one block,
/// in sorted order.
fn block_residual(ctx: &SubproblemContext, g: &[f64], lam: &[f64], p: &TopKProjection) -> Vec<f64> {
    debug_assert!(
        p.perm[p.pair.k1..]
            .iter()
            .all(|&i| p.ybar[i] == g[i] + lam[i] / ctx.sigma),
        "projection residual escapes alpha ∪ beta"
    );
    if p.is_interior() {
        return Vec::new();
    }
    p.effective_indices()
        .iter()
        .map(|&i| (g[i] + lam[i] / ctx.sigma - p.ybar[i]).max(0.0))
        .collect()
}

fn evaluate(ctx: &SubproblemContext, x: Vec<f64>, g: Vec<f64>, ws: &mut Workspace) -> Result<Evaluation> {
    let prob = ctx.prob;
    let v: Vec<f64> = g.iter().zip(ctx.lambda).map(|(gi, li)| gi + li / ctx.sigma).collect();
    let projections = ws.project_blocks(prob, &v)?;
    let offsets = prob.offsets();
    let mut pen = 0.0;
    for (l, p) in projections.iter().enumerate() {
        let r = block_residual(ctx, &g[offsets[l]..offsets[l + 1]], &ctx.lambda[offsets[l]..offsets[l + 1]], p);
        pen += r.iter().map(|v| v * v).sum::<f64>();
    }
    let w: Vec<f64> = x.iter().zip(ctx.mu).map(|(xi, mi)| xi + mi / ctx.sigma).collect();
    let wp = prob.bounds.project(&w);
    let box_pen: f64 = w.iter().zip(&wp).map(|(a, b)| (a - b) * (a - b)).sum();
    let prox: f64 = x.iter().zip(ctx.x_anchor).map(|(a, b)| (a - b) * (a - b)).sum();
    let value = prob.objective.value(&x)
        + 0.5 * ctx.sigma * (pen + box_pen)
        + 0.5 * ctx.m_scale / ctx.sigma * prox;
    Ok(Evaluation {
        x,
        g,
        projections,
        w,
        value,
    })
}

fn gradient(ctx: &SubproblemContext, ev: &Evaluation, ws: &mut Workspace) -> Vec<f64> {
    let t = Instant::now();
    let prob = ctx.prob;
    let mut grad = prob.objective.grad(&ev.x);
    let offsets = prob.offsets();
    for (l, (blk, p)) in prob.blocks.iter().zip(&ev.projections).enumerate() {
        let r = block_residual(ctx, &ev.g[offsets[l]..offsets[l + 1]], &ctx.lambda[offsets[l]..offsets[l + 1]], p);
        let scaled: Vec<f64> = r.iter().map(|v| ctx.sigma * v).collect();
        blk.a.rows_mul_add(&p.perm[..r.len()], &scaled, &mut grad);
    }
    let wp = prob.bounds.project(&ev.w);
    for i in 0..grad.len() {
        grad[i] += ctx.sigma * (ev.w[i] - wp[i]) + ctx.m_scale / ctx.sigma * (ev.x[i] - ctx.x_anchor[i]);
    }
    ws.timings.gradient += t.elapsed();
    grad
}

/// Newton matrix `V = diag(ddiag) + sigma * factor^T factor`.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonSystem {
    pub ddiag: Vec<f64>,
    pub sigma: f64,
    /// Reduced factors of all blocks, stacked.
    pub factor: RowMatrix,
    /// Number of factor rows contributed by each block.
    pub block_rows: Vec<usize>,
    /// Diagonal of `J_X`.
    pub box_active: Vec<bool>,
}

impl NewtonSystem {
    pub fn n(&self) -> usize {
        self.ddiag.len()
    }

    pub fn dense(&self) -> RowMatrix {
        let n = self.n();
        let mut v = RowMatrix::zeros(n, n);
        for i in 0..n {
            v.set(i, i, self.ddiag[i]);
        }
        for r in 0..self.factor.rows() {
            let row = self.factor.row(r);
            for i in 0..n {
                if row[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    v.set(i, j, v.get(i, j) + self.sigma * row[i] * row[j]);
                }
            }
        }
        v
    }

    /// `V x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = x.iter().zip(&self.ddiag).map(|(a, d)| a * d).collect();
        for r in 0..self.factor.rows() {
            let row = self.factor.row(r);
            axpy(self.sigma * dot(row, x), row, &mut out);
        }
        out
    }

    /// Whether [`Self::solve`] takes the reduced (Woodbury) route.
    pub fn uses_reduced(&self) -> bool {
        self.factor.rows() < self.n() && self.ddiag.iter().all(|&d| d > 0.0)
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.n() {
            return Err(mismatch(format!("rhs of length {} for system of size {}", rhs.len(), self.n())));
        }
        if self.uses_reduced() {
            self.solve_reduced(rhs)
        } else {
            self.solve_full(rhs)
        }
    }

    /// Woodbury solve through the `r x r` matrix `I/sigma + T D^-1 T^T`.
    pub fn solve_reduced(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let r = self.factor.rows();
        if let Some(i) = self.ddiag.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::Numerical(format!(
                "reduced solve needs a positive diagonal, entry {i} is {} (sigma = {})",
                self.ddiag[i], self.sigma
            )));
        }
        let dinv_rhs: Vec<f64> = rhs.iter().zip(&self.ddiag).map(|(b, d)| b / d).collect();
        if r == 0 {
            return Ok(dinv_rhs);
        }
        // W = T D^{-1/2}
        let w = DMatrix::from_fn(r, n, |i, j| self.factor.get(i, j) / self.ddiag[j].sqrt());
        let mut k = &w * w.transpose();
        for i in 0..r {
            k[(i, i)] += 1.0 / self.sigma;
        }
        let chol = k.cholesky().ok_or_else(|| {
            Error::Numerical(format!("Cholesky of the {r}x{r} reduced matrix failed (sigma = {})", self.sigma))
        })?;
        let t_rhs = DVector::from_iterator(r, (0..r).map(|i| dot(self.factor.row(i), &dinv_rhs)));
        let u = chol.solve(&t_rhs);
        let mut out = dinv_rhs;
        for (i, &ui) in u.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o -= self.factor.get(i, j) * ui / self.ddiag[j];
            }
        }
        Ok(out)
    }

    /// Direct Cholesky solve of the `n x n` matrix `V`.
    pub fn solve_full(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let r = self.factor.rows();
        let t = DMatrix::from_row_slice(r, n, self.factor.data());
        let mut v = t.transpose() * &t * self.sigma;
        for i in 0..n {
            v[(i, i)] += self.ddiag[i];
        }
        let chol = v.cholesky().ok_or_else(|| {
            Error::Numerical(format!(
                "Cholesky of the {n}x{n} Newton matrix failed (sigma = {}); a positive proximal weight keeps it definite",
                self.sigma
            ))
        })?;
        Ok(chol.solve(&DVector::from_column_slice(rhs)).iter().copied().collect())
    }
}

pub fn solve_newton(sys: &NewtonSystem, rhs: &[f64]) -> Result<Vec<f64>> {
    sys.solve(rhs)
}

fn assemble(ctx: &SubproblemContext, ev: &Evaluation) -> Result<NewtonSystem> {
    let prob = ctx.prob;
    let n = prob.n();
    let hess = prob.objective.hess_diag();
    let box_active: Vec<bool> = (0..n).map(|i| prob.bounds.contains_coord(i, ev.w[i])).collect();
    let ddiag: Vec<f64> = (0..n)
        .map(|i| hess[i] + ctx.m_scale / ctx.sigma + if box_active[i] { 0.0 } else { ctx.sigma })
        .collect();
    let offsets = prob.offsets();
    let mut data = Vec::new();
    let mut block_rows = Vec::with_capacity(prob.blocks.len());
    for (l, (blk, p)) in prob.blocks.iter().zip(&ev.projections).enumerate() {
        let r = block_residual(ctx, &ev.g[offsets[l]..offsets[l + 1]], &ctx.lambda[offsets[l]..offsets[l + 1]], p);
        let active: Vec<bool> = r.iter().map(|&v| v > 0.0).collect();
        let f = build_reduced_factor_masked(&blk.a, p, case_of(p), &active)?;
        block_rows.push(f.len());
        data.extend_from_slice(f.rows.data());
    }
    let rows = block_rows.iter().sum();
    Ok(NewtonSystem {
        ddiag,
        sigma: ctx.sigma,
        factor: RowMatrix::new(rows, n, data)?,
        block_rows,
        box_active,
    })
}

fn check_point(ctx: &SubproblemContext, x: &[f64]) -> Result<()> {
    if x.len() != ctx.prob.n() {
        return Err(mismatch(format!("point of length {}, expected {}", x.len(), ctx.prob.n())));
    }
    Ok(())
}

fn start(ctx: &SubproblemContext, x: &[f64], ws: &mut Workspace) -> Result<Evaluation> {
    check_point(ctx, x)?;
    let t = Instant::now();
    let g = ctx.prob.constraint_values(x);
    ws.timings.gradient += t.elapsed();
    evaluate(ctx, x.to_vec(), g, ws)
}

pub fn phi_value(ctx: &SubproblemContext, x: &[f64]) -> Result<f64> {
    let mut ws = Workspace::new(ctx.prob);
    Ok(start(ctx, x, &mut ws)?.value)
}

pub fn phi_grad(ctx: &SubproblemContext, x: &[f64]) -> Result<Vec<f64>> {
    let mut ws = Workspace::new(ctx.prob);
    let ev = start(ctx, x, &mut ws)?;
    Ok(gradient(ctx, &ev, &mut ws))
}

pub fn assemble_newton(ctx: &SubproblemContext, x: &[f64]) -> Result<NewtonSystem> {
    let mut ws = Workspace::new(ctx.prob);
    let ev = start(ctx, x, &mut ws)?;
    assemble(ctx, &ev)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LineSearchStats {
    pub backtracks: usize,
    /// Steps accepted because the Armijo decrease was below the resolution of
    /// `phi` while the gradient norm still dropped.
    pub roundoff_accepts: usize,
    /// Whether the last line search ran out of backtracks.
    pub failed: bool,
    /// Whether the solve stopped because `phi` no longer decreased.
    pub stalled: bool,
}

/// Consecutive accepted steps with no measurable decrease before giving up.
const STALL_STEPS: usize = 5;

#[derive(Debug, Clone)]
pub struct SsnOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub line_search: LineSearchStats,
    /// Evaluation at the returned point.
    pub eval: Evaluation,
}

/// Runs semismooth Newton from `x0` until `‖∇phi‖ <= inner_tol`.
pub fn ssn_solve(ctx: &SubproblemContext, x0: &[f64], inner_tol: f64, settings: &SsnSettings) -> Result<SsnOutcome> {
    if !(inner_tol > 0.0) {
        return Err(crate::error::invalid(format!("inner tolerance must be positive, got {inner_tol}")));
    }
    let mut ws = Workspace::new(ctx.prob);
    ssn_run(ctx, x0, settings, &mut ws, &mut |_, gn| gn <= inner_tol)
}

/// Semismooth Newton with a caller-supplied stopping test on
/// `(evaluation, ‖∇phi‖)`.
pub fn ssn_run(
    ctx: &SubproblemContext,
    x0: &[f64],
    settings: &SsnSettings,
    ws: &mut Workspace,
    stop: &mut dyn FnMut(&Evaluation, f64) -> bool,
) -> Result<SsnOutcome> {
    let prob = ctx.prob;
    let mut ev = start(ctx, x0, ws)?;
    let mut grad = gradient(ctx, &ev, ws);
    let mut stats = LineSearchStats::default();
    let mut iterations = 0;
    let mut converged = false;
    let mut flat = 0;
    let mut last_step = 1.0f64;
    loop {
        let gn = norm2(&grad);
        if stop(&ev, gn) {
            converged = true;
            break;
        }
        if iterations >= settings.max_iter {
            break;
        }

        let t = Instant::now();
        let sys = assemble(ctx, &ev)?;
        let neg: Vec<f64> = grad.iter().map(|v| -v).collect();
        let mut d = sys.solve(&neg)?;
        ws.timings.linear_solve += t.elapsed();
        let mut gd = dot(&grad, &d);
        if !(gd < 0.0) {
            // V is positive definite, so this only happens through round-off.
            d = neg;
            gd = -gn * gn;
        }

        let t = Instant::now();
        let mut ad = Vec::with_capacity(ev.g.len());
        for blk in &prob.blocks {
            ad.extend(blk.a.mul_vec(&d));
        }
        ws.timings.gradient += t.elapsed();

        let resolution = 64.0 * f64::EPSILON * (1.0 + ev.value.abs());
        // Start near the last accepted step instead of at 1: on problems
        // with many kinks the unit step overshoots for long stretches.
        let mut step = (4.0 * last_step).min(1.0);
        let mut accepted = None;
        for _ in 0..=settings.max_backtracks {
            let xt: Vec<f64> = ev.x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let gt: Vec<f64> = ev.g.iter().zip(&ad).map(|(a, b)| a + step * b).collect();
            let et = evaluate(ctx, xt, gt, ws)?;
            let decrease = settings.ls_c * step * gd;
            if et.value <= ev.value + decrease {
                let gt = gradient(ctx, &et, ws);
                accepted = Some((et, gt));
                break;
            }
            if decrease.abs() <= resolution {
                let gt = gradient(ctx, &et, ws);
                if norm2(&gt) < gn {
                    stats.roundoff_accepts += 1;
                    accepted = Some((et, gt));
                    break;
                }
            }
            stats.backtracks += 1;
            step *= settings.ls_delta;
        }
        match accepted {
            Some((et, gt)) => {
                // phi is flat to working precision: more Newton steps only churn.
                if ev.value - et.value <= resolution {
                    flat += 1;
                } else {
                    flat = 0;
                }
                ev = et;
                grad = gt;
                iterations += 1;
                last_step = step;
                if flat >= STALL_STEPS {
                    stats.stalled = true;
                    break;
                }
            }
            None => {
                stats.failed = true;
                break;
            }
        }
    }
    let grad_norm = norm2(&grad);
    Ok(SsnOutcome {
        x: ev.x.clone(),
        iterations,
        converged,
        grad_norm,
        line_search: stats,
        eval: ev,
    })
}
