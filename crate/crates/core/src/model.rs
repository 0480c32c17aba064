//! Problem data, KKT residuals and the dual objective.
//!
//! A problem is
//!
//! ```text
//! minimize f(x)  subject to  T_k(A_l x + b_l) <= 0  (l = 1..L),  p <= x <= q
//! ```
//!
//! with `f` linear or a separable convex quadratic.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::projection::{project_bk, BoxConstraint};
use crate::topk::sort_desc;

/// Dense row-major matrix. Rows are scenarios, so row access is the hot path.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RowMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(n, n);
        for i in 0..n {
            a.data[i * n + i] = 1.0;
        }
        a
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != cols) {
            return Err(mismatch(format!("row {i} has length {}, expected {cols}", rows[i].len())));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            *o = dot(row, x);
        }
        if self.cols == 0 {
            out.iter_mut().for_each(|o| *o = 0.0);
        }
    }

    /// `out += A^T w`.
    pub fn tr_mul_add(&self, w: &[f64], out: &mut [f64]) {
        for (i, &wi) in w.iter().enumerate() {
            if wi != 0.0 {
                axpy(wi, self.row(i), out);
            }
        }
    }

    /// `out += sum_j w[j] * A[rows[j], :]`.
    pub fn rows_mul_add(&self, rows: &[usize], w: &[f64], out: &mut [f64]) {
        for (&i, &wi) in rows.iter().zip(w) {
            if wi != 0.0 {
                axpy(wi, self.row(i), out);
            }
        }
    }

    pub fn col_inf_norm(&self, j: usize) -> f64 {
        (0..self.rows).fold(0.0, |acc, i| acc.max(self.get(i, j).abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn transpose(&self) -> RowMatrix {
        let mut t = RowMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Smooth convex objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// `c^T x`
    Linear { c: Vec<f64> },
    /// `0.5 x^T diag(cdiag) x + c^T x` with `cdiag >= 0`
    DiagQuadratic { cdiag: Vec<f64>, c: Vec<f64> },
}

impl Objective {
    pub fn linear(c: Vec<f64>) -> Self {
        Objective::Linear { c }
    }

    pub fn diag_quadratic(cdiag: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if cdiag.len() != c.len() {
            return Err(mismatch(format!(
                "quadratic diagonal has length {}, linear term {}",
                cdiag.len(),
                c.len()
            )));
        }
        if let Some(i) = cdiag.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(invalid(format!("quadratic diagonal entry {i} = {} is not a finite nonnegative number", cdiag[i])));
        }
        Ok(Objective::DiagQuadratic { cdiag, c })
    }

    pub fn dim(&self) -> usize {
        self.linear_term().len()
    }

    pub fn linear_term(&self) -> &[f64] {
        match self {
            Objective::Linear { c } | Objective::DiagQuadratic { c, .. } => c,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Objective::Linear { .. })
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(mismatch(format!("point of length {} for objective of dimension {}", x.len(), self.dim())));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Objective::Linear { c } => dot(c, x),
            Objective::DiagQuadratic { cdiag, c } => x
                .iter()
                .zip(cdiag.iter().zip(c))
                .map(|(&xi, (&di, &ci))| 0.5 * di * xi * xi + ci * xi)
                .sum(),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Objective::Linear { c } => c.clone(),
            Objective::DiagQuadratic { cdiag, c } => x
                .iter()
                .zip(cdiag.iter().zip(c))
                .map(|(&xi, (&di, &ci))| di * xi + ci)
                .collect(),
        }
    }

    pub fn hess_diag(&self) -> Vec<f64> {
        match self {
            Objective::Linear { c } => vec![0.0; c.len()],
            Objective::DiagQuadratic { cdiag, .. } => cdiag.clone(),
        }
    }

    /// Conjugate `f*(w)`, with linear coordinates contributing zero whatever
    /// `w` is. The mismatch those coordinates hide shows up in `eta_d`.
    pub fn conjugate_for_gap(&self, w: &[f64]) -> f64 {
        match self {
            Objective::Linear { .. } => 0.0,
            Objective::DiagQuadratic { cdiag, c } => w
                .iter()
                .zip(cdiag.iter().zip(c))
                .filter(|(_, (&d, _))| d > 0.0)
                .map(|(&wi, (&d, &ci))| (wi - ci) * (wi - ci) / (2.0 * d))
                .sum(),
        }
    }
}

pub fn objective_value(obj: &Objective, x: &[f64]) -> Result<f64> {
    obj.check(x)?;
    Ok(obj.value(x))
}

pub fn objective_grad(obj: &Objective, x: &[f64]) -> Result<Vec<f64>> {
    obj.check(x)?;
    Ok(obj.grad(x))
}

pub fn objective_hess_diag(obj: &Objective) -> Vec<f64> {
    obj.hess_diag()
}

/// One superquantile constraint `T_k(A x + b) <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    pub a: RowMatrix,
    pub b: Vec<f64>,
    pub k: usize,
}

impl ConstraintBlock {
    pub fn new(a: RowMatrix, b: Vec<f64>, k: usize) -> Result<Self> {
        if a.rows() != b.len() {
            return Err(mismatch(format!("A has {} rows but b has {} entries", a.rows(), b.len())));
        }
        if k == 0 || k > b.len() {
            return Err(invalid(format!("k = {k} outside 1..={}", b.len())));
        }
        Ok(Self { a, b, k })
    }

    /// Block for confidence level `tau`; `(1 - tau) m` must be an integer.
    pub fn from_tau(a: RowMatrix, b: Vec<f64>, tau: f64) -> Result<Self> {
        let k = k_of_tau(b.len(), tau)?;
        Self::new(a, b, k)
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn tau(&self) -> f64 {
        1.0 - self.k as f64 / self.m() as f64
    }

    /// `A x + b`
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.a.mul_vec(x);
        for (gi, bi) in g.iter_mut().zip(&self.b) {
            *gi += bi;
        }
        g
    }
}

/// `k = (1 - tau) m`, rejected unless it is an integer in `1..=m`.
pub fn k_of_tau(m: usize, tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(invalid(format!("tau = {tau} must lie in (0, 1)")));
    }
    let kf = (1.0 - tau) * m as f64;
    let k = kf.round();
    if (kf - k).abs() > 1e-9 * m.max(1) as f64 || k < 1.0 {
        return Err(invalid(format!("(1 - tau) m = {kf} is not a positive integer for tau = {tau}, m = {m}")));
    }
    Ok(k as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub objective: Objective,
    pub blocks: Vec<ConstraintBlock>,
    pub bounds: BoxConstraint,
}

impl Problem {
    pub fn new(objective: Objective, blocks: Vec<ConstraintBlock>, bounds: BoxConstraint) -> Result<Self> {
        let n = objective.dim();
        if bounds.dim() != n {
            return Err(mismatch(format!("box has dimension {}, objective {n}", bounds.dim())));
        }
        for (l, blk) in blocks.iter().enumerate() {
            if blk.a.cols() != n {
                return Err(mismatch(format!("block {l} has {} columns, expected {n}", blk.a.cols())));
            }
        }
        Ok(Self {
            objective,
            blocks,
            bounds,
        })
    }

    pub fn n(&self) -> usize {
        self.objective.dim()
    }

    pub fn total_rows(&self) -> usize {
        self.blocks.iter().map(ConstraintBlock::m).sum()
    }

    /// Start of each block in the stacked `y` / `lambda` vectors, plus the total.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.blocks.len() + 1);
        off.push(0);
        for blk in &self.blocks {
            off.push(off.last().unwrap() + blk.m());
        }
        off
    }

    /// Stacked `G(x) = (A_l x + b_l)_l`.
    pub fn constraint_values(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_rows());
        for blk in &self.blocks {
            out.extend(blk.eval(x));
        }
        out
    }

    /// Largest `T_k(A_l x + b_l) / k_l` over the blocks, or `-inf` without blocks.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|blk| {
                let g = blk.eval(x);
                crate::topk::topk_sum(&g, blk.k).expect("k validated") / blk.k as f64
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub eta_p: f64,
    pub eta_d: f64,
    pub eta_r: f64,
    pub eta: f64,
}

impl Residuals {
    fn from_parts(eta_p: f64, eta_d: f64, eta_r: f64) -> Self {
        Self {
            eta_p,
            eta_d,
            eta_r,
            eta: eta_p.max(eta_d).max(eta_r),
        }
    }
}

/// Relative slack used for polar-cone membership.
pub const POLAR_SLACK: f64 = 1e-9;

/// Whether `lambda` lies in the polar cone of `B_k`, i.e. `lambda >= 0` and
/// `max(lambda) <= sum(lambda) / k`.
pub fn in_polar_cone(lambda: &[f64], k: usize) -> bool {
    if lambda.iter().any(|&v| v < 0.0) {
        return false;
    }
    let sum: f64 = lambda.iter().sum();
    let max = lambda.iter().fold(0.0f64, |a, &v| a.max(v));
    max <= sum / k as f64 + POLAR_SLACK * (1.0 + max)
}

fn check_lengths(prob: &Problem, lambda: &[f64], mu: &[f64]) -> Result<()> {
    if lambda.len() != prob.total_rows() {
        return Err(mismatch(format!("lambda has length {}, expected {}", lambda.len(), prob.total_rows())));
    }
    if mu.len() != prob.n() {
        return Err(mismatch(format!("mu has length {}, expected {}", mu.len(), prob.n())));
    }
    Ok(())
}

/// `b^T lambda - s_X(mu) - f*(-A^T lambda - mu)`, where `s_X` is the support
/// function of the box. Returns `-inf` when `lambda` leaves the polar cone or
/// `mu` points along an unbounded direction of the box.
pub fn dual_objective(prob: &Problem, lambda: &[f64], mu: &[f64]) -> Result<f64> {
    check_lengths(prob, lambda, mu)?;
    let offsets = prob.offsets();
    let mut w: Vec<f64> = mu.iter().map(|v| -v).collect();
    let mut value = 0.0;
    for (l, blk) in prob.blocks.iter().enumerate() {
        let lam = &lambda[offsets[l]..offsets[l + 1]];
        if !in_polar_cone(lam, blk.k) {
            return Ok(f64::NEG_INFINITY);
        }
        value += dot(&blk.b, lam);
        for (i, &li) in lam.iter().enumerate() {
            if li != 0.0 {
                axpy(-li, blk.a.row(i), &mut w);
            }
        }
    }
    let support = prob.bounds.support(mu);
    if support.is_infinite() || support.is_nan() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(value - support - prob.objective.conjugate_for_gap(&w))
}

/// Normalized primal, dual and gap residuals of a candidate KKT tuple.
pub fn kkt_residuals(
    prob: &Problem,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    lambda: &[f64],
    mu: &[f64],
) -> Result<Residuals> {
    let n = prob.n();
    if x.len() != n || z.len() != n {
        return Err(mismatch(format!("x and z must have length {n}, got {} and {}", x.len(), z.len())));
    }
    if y.len() != prob.total_rows() {
        return Err(mismatch(format!("y has length {}, expected {}", y.len(), prob.total_rows())));
    }
    check_lengths(prob, lambda, mu)?;
    let offsets = prob.offsets();

    let mut viol_sq = 0.0;
    let mut b_sq = 0.0;
    let mut proj_sq = 0.0;
    for (l, blk) in prob.blocks.iter().enumerate() {
        let yl = &y[offsets[l]..offsets[l + 1]];
        let g = blk.eval(x);
        viol_sq += g.iter().zip(yl).map(|(gi, yi)| (gi - yi).max(0.0).powi(2)).sum::<f64>();
        b_sq += blk.b.iter().map(|v| v * v).sum::<f64>();
        let p = project_bk(yl, blk.k)?;
        proj_sq += yl.iter().zip(&p.ybar).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let y_norm = norm2(y);
    let z_norm = norm2(z);
    let xz: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
    let zp = prob.bounds.project(z);
    let zz: Vec<f64> = z.iter().zip(&zp).map(|(a, b)| a - b).collect();
    let eta_p = (viol_sq.sqrt() / (1.0 + b_sq.sqrt()))
        .max(proj_sq.sqrt() / (1.0 + y_norm))
        .max(norm2(&xz) / (1.0 + z_norm))
        .max(norm2(&zz) / (1.0 + z_norm));

    let eta_d = dual_infeasibility(prob, x, lambda, mu)?;

    let obj_p = prob.objective.value(x);
    let obj_d = dual_objective(prob, lambda, mu)?;
    let eta_r = if obj_d.is_finite() {
        (obj_p - obj_d).abs() / (1.0 + obj_p.abs())
    } else {
        f64::INFINITY
    };
    Ok(Residuals::from_parts(eta_p, eta_d, eta_r))
}

/// `||grad f(x) + A^T lambda + mu|| / (1 + ||grad f(x)||)`.
pub fn dual_infeasibility(prob: &Problem, x: &[f64], lambda: &[f64], mu: &[f64]) -> Result<f64> {
    check_lengths(prob, lambda, mu)?;
    let grad = objective_grad(&prob.objective, x)?;
    let mut r = grad.clone();
    axpy(1.0, mu, &mut r);
    let offsets = prob.offsets();
    for (l, blk) in prob.blocks.iter().enumerate() {
        blk.a.tr_mul_add(&lambda[offsets[l]..offsets[l + 1]], &mut r);
    }
    Ok(norm2(&r) / (1.0 + norm2(&grad)))
}

/// Empirical superquantile at level `1 - k/m`: the infimum over `t` of
/// `t + (1/k) sum max(v_i - t, 0)`, attained at the k-th largest value.
pub fn empirical_superquantile(values: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > values.len() {
        return Err(invalid(format!("k = {k} outside 1..={}", values.len())));
    }
    let sorted = sort_desc(values).values;
    let t = sorted[k - 1];
    let excess: f64 = values.iter().map(|&v| (v - t).max(0.0)).sum();
    Ok(t + excess / k as f64)
}
