//! Outer augmented Lagrangian loop.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::model::{dual_infeasibility, kkt_residuals, Problem, Residuals};
use crate::ssn::{ssn_run, ProxPolicy, SsnSettings, SubproblemContext, Workspace};
use crate::trace::{TimingBreakdown, Timings};

#[derive(Debug, Clone, PartialEq)]
pub struct AlmSettings {
    pub tol: f64,
    pub sigma0: f64,
    pub sigma_growth: f64,
    pub sigma_max: f64,
    pub max_outer: usize,
    /// `eps_nu = eps0 * eps_rate^nu`
    pub eps0: f64,
    pub eps_rate: f64,
    /// `delta_nu = delta_rate^(nu + 1)`
    pub delta_rate: f64,
    /// Lower bound on the inner tolerance, below which `phi` can no longer
    /// resolve the Armijo decrease.
    pub inner_tol_floor: f64,
    pub prox: ProxPolicy,
    pub ssn: SsnSettings,
}

impl Default for AlmSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            sigma0: 1.0,
            sigma_growth: 2.0,
            sigma_max: 1e8,
            max_outer: 200,
            eps0: 10.0,
            eps_rate: 0.5,
            delta_rate: 0.5,
            inner_tol_floor: 1e-12,
            prox: ProxPolicy::Auto,
            ssn: SsnSettings::default(),
        }
    }
}

impl AlmSettings {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.sigma0 > 0.0) || !(self.sigma_growth >= 1.0) || !(self.sigma_max >= self.sigma0) {
            return Err(invalid(format!(
                "need sigma0 > 0, sigma_growth >= 1, sigma_max >= sigma0; got {}, {}, {}",
                self.sigma0, self.sigma_growth, self.sigma_max
            )));
        }
        if !(self.eps_rate > 0.0 && self.eps_rate < 1.0 && self.delta_rate > 0.0 && self.delta_rate < 1.0) {
            return Err(invalid("schedule rates must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn eps(&self, nu: usize) -> f64 {
        self.eps0 * self.eps_rate.powi(nu as i32)
    }

    pub fn delta(&self, nu: usize) -> f64 {
        self.delta_rate.powi(nu as i32 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// Stacked over blocks.
    pub y: Vec<f64>,
    /// Stacked over blocks, nonnegative.
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: f64,
    pub outer_iter: usize,
}

impl IterateState {
    /// `x = z = 0`, `y = proj(A 0 + b)`, zero multipliers.
    pub fn initial(prob: &Problem, sigma: f64) -> Result<Self> {
        let n = prob.n();
        let x = vec![0.0; n];
        let mut ws = Workspace::new(prob);
        let g = prob.constraint_values(&x);
        let y = ws.project_blocks(prob, &g)?.iter().flat_map(|p| p.ybar.iter().copied()).collect();
        Ok(Self {
            z: prob.bounds.project(&x),
            x,
            y,
            lambda: vec![0.0; prob.total_rows()],
            mu: vec![0.0; n],
            sigma,
            outer_iter: 0,
        })
    }

    fn check(&self, prob: &Problem) -> Result<()> {
        let (n, m) = (prob.n(), prob.total_rows());
        if self.x.len() != n || self.z.len() != n || self.mu.len() != n || self.y.len() != m || self.lambda.len() != m {
            return Err(mismatch(format!(
                "warm state has lengths x {} z {} mu {} y {} lambda {}, problem needs n = {n}, rows = {m}",
                self.x.len(),
                self.z.len(),
                self.mu.len(),
                self.y.len(),
                self.lambda.len()
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(invalid(format!("warm state has sigma = {}", self.sigma)));
        }
        Ok(())
    }

    pub fn residuals(&self, prob: &Problem) -> Result<Residuals> {
        kkt_residuals(prob, &self.x, &self.y, &self.z, &self.lambda, &self.mu)
    }
}

/// One outer iteration as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iter: usize,
    /// Penalty used for this iteration's subproblem.
    pub sigma: f64,
    pub inner_tol: f64,
    pub ssn_iterations: usize,
    pub ssn_converged: bool,
    pub backtracks: usize,
    pub grad_norm: f64,
    pub residuals: Residuals,
    /// `‖∇f + A^T lambda + mu‖ / (1 + ‖∇f‖)` right after the dual update.
    pub dual_feasibility: f64,
    pub projections: u64,
    pub resorts: u64,
    pub sort_secs: f64,
    pub projection_secs: f64,
    pub gradient_secs: f64,
    pub linear_solve_secs: f64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlmTrace {
    pub records: Vec<OuterRecord>,
    pub timings: Timings,
    pub total: Duration,
}

impl AlmTrace {
    pub fn breakdown(&self) -> TimingBreakdown {
        self.timings.breakdown(self.total)
    }

    /// Fraction of projections that were certified on the first hinted prefix.
    pub fn hint_hit_rate(&self) -> f64 {
        let p: u64 = self.records.iter().map(|r| r.projections).sum();
        let s: u64 = self.records.iter().map(|r| r.resorts).sum();
        if p == 0 {
            1.0
        } else {
            1.0 - s as f64 / p as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlmResult {
    pub state: IterateState,
    pub residuals: Residuals,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub trace: AlmTrace,
}

/// `min(sigma * growth, sigma_max)` when the lagging residual did not halve
/// since the previous outer iteration.
///
/// The lagging residual is `eta_p` until it reaches `tol`, then `eta_d`: with
/// exact inner solves the dual residual is the proximal step over sigma, so a
/// stalled `eta_d` means the outer loop is crawling. Sigma is held after a
/// failed inner solve, since stiffening a subproblem SSN could not finish
/// only makes the next one harder.
pub fn update_sigma(sigma: f64, cur: &Residuals, prev: Option<&Residuals>, inner_converged: bool, settings: &AlmSettings) -> f64 {
    if !inner_converged {
        return sigma;
    }
    let lagging = |r: &Residuals| if cur.eta_p > settings.tol { r.eta_p } else { r.eta_d };
    match prev {
        Some(p) if lagging(cur) <= 0.5 * lagging(p) => sigma,
        _ => (sigma * settings.sigma_growth).min(settings.sigma_max),
    }
}

pub fn dual_feasibility_check(prob: &Problem, state: &IterateState) -> Result<f64> {
    dual_infeasibility(prob, &state.x, &state.lambda, &state.mu)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn alm_solve(prob: &Problem, settings: &AlmSettings, warm: Option<&IterateState>) -> Result<AlmResult> {
    settings.validate()?;
    let clock = Instant::now();
    let mut state = match warm {
        Some(w) => {
            w.check(prob)?;
            // Keep the iterates but not the penalty: a sigma tuned to the old
            // problem makes the first subproblems needlessly stiff.
            let mut s = w.clone();
            s.outer_iter = 0;
            s.sigma = settings.sigma0;
            s
        }
        None => IterateState::initial(prob, settings.sigma0)?,
    };
    let mut trace = AlmTrace::default();
    let mut residuals = state.residuals(prob)?;
    if warm.is_some() && residuals.eta <= settings.tol {
        trace.total = clock.elapsed();
        return Ok(AlmResult {
            state,
            residuals,
            converged: true,
            outer_iterations: 0,
            inner_iterations: 0,
            trace,
        });
    }

    let mut ws = Workspace::new(prob);
    let mut best: Option<(IterateState, Residuals)> = None;
    let mut prev_res: Option<Residuals> = None;
    let mut inner_total = 0;
    let mut converged = false;
    for nu in 0..settings.max_outer {
        let sigma = state.sigma;
        let m_scale = settings.prox.m_scale(&prob.objective, sigma);
        let ctx = SubproblemContext::new(prob, &state.lambda, &state.mu, sigma, m_scale, &state.x)?;
        let eps = settings.eps(nu);
        let delta = settings.delta(nu);
        let before = ws.timings;
        let (p0, r0) = (ws.projections, ws.resorts);
        let mut used_tol = f64::INFINITY;
        let (x_prev, y_prev, z_prev) = (&state.x, &state.y, &state.z);
        let mut stop = |ev: &crate::ssn::Evaluation, gn: f64| {
            let mut tol = eps / sigma;
            if gn <= settings.inner_tol_floor {
                used_tol = tol.min(used_tol);
                return true;
            }
            if gn > tol {
                return false;
            }
            let dx = sq_dist(&ev.x, x_prev);
            let dy = sq_dist(&ev.y(), y_prev);
            let dz = sq_dist(&ev.z(prob), z_prev);
            let step = (m_scale * dx + dy + dz).sqrt();
            tol = tol.min(delta * step / sigma).max(settings.inner_tol_floor);
            used_tol = tol;
            gn <= tol
        };
        let out = ssn_run(&ctx, &state.x, &settings.ssn, &mut ws, &mut stop)?;
        inner_total += out.iterations;

        // Recover (y, z) and update the multipliers from a fresh A x + b.
        let x = out.x;
        let g = prob.constraint_values(&x);
        let v: Vec<f64> = g.iter().zip(&state.lambda).map(|(gi, li)| gi + li / sigma).collect();
        let y: Vec<f64> = ws.project_blocks(prob, &v)?.iter().flat_map(|p| p.ybar.iter().copied()).collect();
        let w: Vec<f64> = x.iter().zip(&state.mu).map(|(xi, mi)| xi + mi / sigma).collect();
        let z = prob.bounds.project(&w);
        let lambda: Vec<f64> = state
            .lambda
            .iter()
            .zip(g.iter().zip(&y))
            .map(|(l, (gi, yi))| (l + sigma * (gi - yi)).max(0.0))
            .collect();
        let mu: Vec<f64> = state
            .mu
            .iter()
            .zip(x.iter().zip(&z))
            .map(|(m, (xi, zi))| m + sigma * (xi - zi))
            .collect();
        state = IterateState {
            x,
            z,
            y,
            lambda,
            mu,
            sigma,
            outer_iter: nu + 1,
        };
        residuals = state.residuals(prob)?;
        let dual_feasibility = dual_feasibility_check(prob, &state)?;

        let spent = ws.timings;
        trace.records.push(OuterRecord {
            iter: nu,
            sigma,
            inner_tol: used_tol,
            ssn_iterations: out.iterations,
            ssn_converged: out.converged,
            backtracks: out.line_search.backtracks,
            grad_norm: out.grad_norm,
            residuals,
            dual_feasibility,
            projections: ws.projections - p0,
            resorts: ws.resorts - r0,
            sort_secs: (spent.sort - before.sort).as_secs_f64(),
            projection_secs: (spent.projection - before.projection).as_secs_f64(),
            gradient_secs: (spent.gradient - before.gradient).as_secs_f64(),
            linear_solve_secs: (spent.linear_solve - before.linear_solve).as_secs_f64(),
            elapsed_secs: clock.elapsed().as_secs_f64(),
        });

        if best.as_ref().is_none_or(|(_, r)| residuals.eta < r.eta) {
            best = Some((state.clone(), residuals));
        }
        if residuals.eta <= settings.tol {
            converged = true;
            break;
        }
        state.sigma = update_sigma(sigma, &residuals, prev_res.as_ref(), out.converged, settings);
        prev_res = Some(residuals);
    }

    let outer_iterations = trace.records.len();
    if !converged {
        if let Some((s, r)) = best {
            state = s;
            residuals = r;
        }
    }
    trace.timings = ws.timings;
    trace.total = clock.elapsed();
    Ok(AlmResult {
        state,
        residuals,
        converged,
        outer_iterations,
        inner_iterations: inner_total,
        trace,
    })
}
