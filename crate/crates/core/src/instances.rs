//! Synthetic superquantile-constrained instances and quantile regression.
//!
//! Random streams: every array is drawn from `ChaCha8Rng::seed_from_u64(seed)`
//! with its stream set to `(block << 8) | tag`, where `tag` names the array
//! (see the `STREAM_*` constants). Instances are therefore reproducible
//! bit for bit from the seed.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::alm::{alm_solve, AlmSettings, IterateState};
use crate::error::{invalid, mismatch, Result};
use crate::model::{k_of_tau, ConstraintBlock, Objective, Problem, Residuals, RowMatrix};
use crate::projection::BoxConstraint;
use crate::topk::{sort_desc, topk_sum};
use crate::trace::TimingBreakdown;

pub const STREAM_A: u64 = 1;
pub const STREAM_B: u64 = 2;
pub const STREAM_WITNESS: u64 = 3;
pub const STREAM_OBJECTIVE: u64 = 4;
pub const STREAM_QR: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Linear,
    DiagQuadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub m: usize,
    pub n: usize,
    pub l: usize,
    pub k_fraction: f64,
    pub objective: ObjectiveKind,
    pub seed: u64,
}

impl SynthSpec {
    /// `ceil(k_fraction * m)`, guarded against round-off just above an integer.
    pub fn k(&self) -> Result<usize> {
        k_from_fraction(self.m, self.k_fraction)
    }
}

pub fn k_from_fraction(m: usize, k_fraction: f64) -> Result<usize> {
    if !(k_fraction > 0.0 && k_fraction <= 1.0) {
        return Err(invalid(format!("k fraction {k_fraction} must lie in (0, 1]")));
    }
    let k = (k_fraction * m as f64 - 1e-9).ceil();
    if k < 1.0 {
        return Err(invalid(format!("k fraction {k_fraction} gives k = 0 for m = {m}")));
    }
    Ok((k as usize).min(m))
}

fn rng(seed: u64, block: usize, tag: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((block as u64) << 8) | tag);
    r
}

/// Number of witness candidates, `ceil(ln(m L))`, at least one.
pub fn witness_count(m: usize, l: usize) -> usize {
    ((m * l) as f64).ln().ceil().max(1.0) as usize
}

/// Random instance plus a point that satisfies every constraint.
///
/// `A` has N(0, 10^2) entries with each column scaled to unit infinity norm,
/// the box is `[-1, 1]^n`, and `b = b~ - c 1` where `b~ ~ N(0, 1)` and the
/// shift `c >= 0` puts the best witness candidate on the boundary of the
/// tightest constraint.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Problem, Vec<f64>)> {
    let SynthSpec { m, n, l, seed, .. } = *spec;
    if m == 0 || n == 0 || l == 0 {
        return Err(invalid(format!("sizes must be positive, got m = {m}, n = {n}, L = {l}")));
    }
    let k = spec.k()?;
    let normal10 = Normal::new(0.0, 10.0).expect("valid normal");

    let mut mats = Vec::with_capacity(l);
    let mut offsets = Vec::with_capacity(l);
    for block in 0..l {
        let mut r = rng(seed, block, STREAM_A);
        let mut a = RowMatrix::new(m, n, (0..m * n).map(|_| normal10.sample(&mut r)).collect())?;
        for j in 0..n {
            let s = a.col_inf_norm(j);
            if s > 0.0 {
                for i in 0..m {
                    a.set(i, j, a.get(i, j) / s);
                }
            }
        }
        let mut r = rng(seed, block, STREAM_B);
        let b: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut r)).collect();
        mats.push(a);
        offsets.push(b);
    }

    let mut r = rng(seed, 0, STREAM_WITNESS);
    let candidates: Vec<Vec<f64>> = (0..witness_count(m, l))
        .map(|_| (0..n).map(|_| -1.0 + 2.0 * r.random::<f64>()).collect())
        .collect();
    // scaled top-k sums per (candidate, block)
    let scores: Vec<Vec<f64>> = candidates
        .iter()
        .map(|x| {
            mats.iter()
                .zip(&offsets)
                .map(|(a, b)| {
                    let y: Vec<f64> = a.mul_vec(x).iter().zip(b).map(|(p, q)| p + q).collect();
                    topk_sum(&y, k).expect("k validated")
                })
                .collect()
        })
        .collect();
    let worst = |s: &Vec<f64>| s.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let best = (0..candidates.len())
        .min_by(|&i, &j| worst(&scores[i]).total_cmp(&worst(&scores[j])))
        .expect("at least one candidate");

    let mut blocks = Vec::with_capacity(l);
    for (block, (a, mut b)) in mats.into_iter().zip(offsets).enumerate() {
        let shift = scores[best][block].max(0.0) / k as f64;
        b.iter_mut().for_each(|v| *v -= shift);
        blocks.push(ConstraintBlock::new(a, b, k)?);
    }

    let mut r = rng(seed, 0, STREAM_OBJECTIVE);
    let objective = match spec.objective {
        ObjectiveKind::Linear => Objective::linear((0..n).map(|_| StandardNormal.sample(&mut r)).collect()),
        ObjectiveKind::DiagQuadratic => {
            let cdiag: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(StandardNormal).abs()).collect();
            let c: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
            Objective::diag_quadratic(cdiag, c)?
        }
    };
    let problem = Problem::new(objective, blocks, BoxConstraint::uniform(n, -1.0, 1.0)?)?;
    Ok((problem, candidates[best].clone()))
}

/// Quantile-regression data: features (one row per observation), response,
/// and an increasing grid of levels.
#[derive(Debug, Clone, PartialEq)]
pub struct QrSpec {
    pub features: RowMatrix,
    pub response: Vec<f64>,
    pub tau_grid: Vec<f64>,
}

impl QrSpec {
    pub fn new(features: RowMatrix, response: Vec<f64>, tau_grid: Vec<f64>) -> Result<Self> {
        if features.rows() != response.len() {
            return Err(mismatch(format!(
                "{} feature rows for {} responses",
                features.rows(),
                response.len()
            )));
        }
        if response.is_empty() {
            return Err(invalid("quantile regression needs at least one observation"));
        }
        if tau_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("tau grid must be strictly increasing"));
        }
        for &tau in &tau_grid {
            k_of_tau(response.len(), qr_level(tau))?;
        }
        Ok(Self {
            features,
            response,
            tau_grid,
        })
    }

    pub fn m(&self) -> usize {
        self.response.len()
    }

    pub fn n(&self) -> usize {
        self.features.cols()
    }

    /// Column means of the features.
    pub fn feature_mean(&self) -> Vec<f64> {
        let (m, n) = (self.m(), self.n());
        let mut mean = vec![0.0; n];
        for i in 0..m {
            for (acc, v) in mean.iter_mut().zip(self.features.row(i)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        mean
    }
}

/// Level actually solved for `tau`: levels above one half are solved at
/// `1 - tau` on sign-flipped data.
fn qr_level(tau: f64) -> f64 {
    if tau > 0.5 {
        1.0 - tau
    } else {
        tau
    }
}

/// The superquantile form of quantile regression at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct QrProblem {
    /// Variables `(x, t)`; objective `a_mean^T x + t`; one block with rows
    /// `b_i - a_i^T x - t` and `k = (1 - tau) m`.
    pub problem: Problem,
    pub tau: f64,
    /// Level of the solved problem.
    pub solved_tau: f64,
    /// Whether features and response were negated.
    pub flipped: bool,
}

pub fn build_quantile_regression(spec: &QrSpec, tau: f64) -> Result<QrProblem> {
    let (m, n) = (spec.m(), spec.n());
    let flipped = tau > 0.5;
    let solved_tau = qr_level(tau);
    let k = k_of_tau(m, solved_tau)?;
    let sign = if flipped { -1.0 } else { 1.0 };
    let mut data = Vec::with_capacity(m * (n + 1));
    for i in 0..m {
        data.extend(spec.features.row(i).iter().map(|v| -sign * v));
        data.push(-1.0);
    }
    let a = RowMatrix::new(m, n + 1, data)?;
    let b: Vec<f64> = spec.response.iter().map(|v| sign * v).collect();
    let mut c: Vec<f64> = spec.feature_mean().iter().map(|v| sign * v).collect();
    c.push(1.0);
    let problem = Problem::new(
        Objective::linear(c),
        vec![ConstraintBlock::new(a, b, k)?],
        BoxConstraint::unbounded(n + 1),
    )?;
    Ok(QrProblem {
        problem,
        tau,
        solved_tau,
        flipped,
    })
}

/// `T_k(b - F x) / k + a_mean^T x` with `k = (1 - tau) m`: the superquantile
/// objective with `t` eliminated.
pub fn qr_objective(spec: &QrSpec, tau: f64, x: &[f64]) -> Result<f64> {
    let k = k_of_tau(spec.m(), tau)?;
    if x.len() != spec.n() {
        return Err(mismatch(format!("{} coefficients for {} features", x.len(), spec.n())));
    }
    let r = residuals_of(spec, x);
    let mean = spec.feature_mean();
    Ok(topk_sum(&r, k)? / k as f64 + mean.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
}

fn residuals_of(spec: &QrSpec, x: &[f64]) -> Vec<f64> {
    spec.features
        .mul_vec(x)
        .iter()
        .zip(&spec.response)
        .map(|(fx, b)| b - fx)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrSolution {
    /// Regression coefficients.
    pub x: Vec<f64>,
    /// Optimal `t` of the original (unflipped) superquantile form.
    pub t: f64,
    /// Objective of the original superquantile form.
    pub objective: f64,
    /// `tau`-quantile of the fitted residuals (k-th largest of `b - F x`):
    /// the intercept of the corresponding quantile regression fit.
    pub quantile_intercept: f64,
}

fn solution_from(spec: &QrSpec, tau: f64, vars: &[f64]) -> Result<QrSolution> {
    let n = spec.n();
    let x = vars[..n].to_vec();
    let k = k_of_tau(spec.m(), tau)?;
    let r = residuals_of(spec, &x);
    let t = topk_sum(&r, k)? / k as f64;
    let objective = qr_objective(spec, tau, &x)?;
    let quantile_intercept = sort_desc(&r).values[k - 1];
    Ok(QrSolution {
        x,
        t,
        objective,
        quantile_intercept,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub tau: f64,
    pub solution: Option<QrSolution>,
    pub residuals: Option<Residuals>,
    pub converged: bool,
    pub warm_started: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub timings: Option<TimingBreakdown>,
    pub error: Option<String>,
}

/// Solves the grid in order, warm-starting each solve from the previous one.
pub fn solve_path(spec: &QrSpec, settings: &AlmSettings) -> Vec<PathEntry> {
    solve_path_with(spec, settings, true)
}

/// As [`solve_path`]; with `warm = false` every level is solved cold.
pub fn solve_path_with(spec: &QrSpec, settings: &AlmSettings, warm: bool) -> Vec<PathEntry> {
    let mut prev: Option<(bool, IterateState)> = None;
    let mut out = Vec::with_capacity(spec.tau_grid.len());
    for &tau in &spec.tau_grid {
        let start = Instant::now();
        let attempt = build_quantile_regression(spec, tau).and_then(|qp| {
            let warm_state = match &prev {
                Some((flipped, s)) if warm && *flipped == qp.flipped => Some(s),
                _ => None,
            };
            let res = alm_solve(&qp.problem, settings, warm_state)?;
            Ok((qp.flipped, warm_state.is_some(), res))
        });
        match attempt {
            Ok((flipped, warm_started, res)) => {
                let solution = solution_from(spec, tau, &res.state.x);
                let mut t = res.trace.timings.breakdown(start.elapsed());
                t.total_secs = start.elapsed().as_secs_f64();
                out.push(PathEntry {
                    tau,
                    error: solution.as_ref().err().map(ToString::to_string),
                    solution: solution.ok(),
                    residuals: Some(res.residuals),
                    converged: res.converged,
                    warm_started,
                    outer_iterations: res.outer_iterations,
                    inner_iterations: res.inner_iterations,
                    timings: Some(t),
                });
                prev = Some((flipped, res.state));
            }
            Err(e) => out.push(PathEntry {
                tau,
                solution: None,
                residuals: None,
                converged: false,
                warm_started: false,
                outer_iterations: 0,
                inner_iterations: 0,
                timings: None,
                error: Some(e.to_string()),
            }),
        }
    }
    out
}

/// Heteroscedastic linear-model data for quantile-regression experiments:
/// standard normal features, response `1 + F beta + (1 + |F_1| / 2) e`
/// with `beta_j = 1 / (j + 1)` and standard normal noise `e`.
pub fn synthetic_qr_data(m: usize, n: usize, seed: u64) -> (RowMatrix, Vec<f64>) {
    let mut r = rng(seed, 0, STREAM_QR);
    let data: Vec<f64> = (0..m * n).map(|_| StandardNormal.sample(&mut r)).collect();
    let features = RowMatrix::new(m, n, data).expect("sizes agree");
    let response = (0..m)
        .map(|i| {
            let row = features.row(i);
            let lin: f64 = row.iter().enumerate().map(|(j, v)| v / (j + 1) as f64).sum();
            let scale = 1.0 + 0.5 * row.first().map_or(0.0, |v| v.abs());
            1.0 + lin + scale * r.sample::<f64, _>(StandardNormal)
        })
        .collect();
    (features, response)
}
