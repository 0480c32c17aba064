//! Generalized Jacobian of the top-k projection and the reduced factor that
//! carries it into the Newton matrix.
//!
//! With `kappa = alpha ∪ beta` (the first `k1` sorted positions) the Jacobian
//! is `J = I - Q` on `kappa` and the identity on `gamma`. `Q` is
//!
//! * `0` when the input is feasible,
//! * `11^T / k1` when `k1 = k`,
//! * the block matrix described by [`QBlocks`] otherwise.

use crate::error::{invalid, mismatch, Result};
use crate::model::{axpy, RowMatrix};
use crate::projection::TopKProjection;
use crate::topk::topk_sum;

/// Absolute slack on the strict inequalities of the differentiability test.
pub const CLASSIFY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianCase {
    /// `T_k(y) <= 0`; the projection is the identity.
    Interior,
    /// `T_k(y) > 0` and `k < k1`.
    General,
    /// `T_k(y) > 0` and `k1 = k`.
    Boundary,
}

/// Case of a projection, read off from its multiplier and index pair.
///
/// Non-differentiable inputs get the case whose formula is used as the limit
/// element; see [`is_differentiable`] for the strict test.
pub fn case_of(proj: &TopKProjection) -> JacobianCase {
    if proj.is_interior() {
        JacobianCase::Interior
    } else if proj.pair.k1 == proj.k {
        JacobianCase::Boundary
    } else {
        JacobianCase::General
    }
}

pub fn classify(y: &[f64], k: usize, proj: &TopKProjection) -> Result<JacobianCase> {
    if proj.k != k || proj.m() != y.len() {
        return Err(invalid(format!(
            "projection computed for (m, k) = ({}, {}) used with ({}, {k})",
            proj.m(),
            proj.k,
            y.len()
        )));
    }
    Ok(case_of(proj))
}

/// Whether the projection is differentiable at `y` (strict inequalities
/// checked with [`CLASSIFY_SLACK`]).
pub fn is_differentiable(y: &[f64], proj: &TopKProjection) -> Result<bool> {
    let tk = topk_sum(y, proj.k)?;
    if tk < 0.0 {
        return Ok(true);
    }
    if tk == 0.0 || proj.is_interior() {
        return Ok(false);
    }
    let (k0, k1) = (proj.pair.k0, proj.pair.k1);
    if k1 == proj.k {
        return Ok(true);
    }
    let s = &proj.sorted;
    Ok(s[k0] - proj.lambda < proj.theta - CLASSIFY_SLACK && proj.theta < s[k1 - 1] - CLASSIFY_SLACK)
}

/// Closed-form `Q` for the general case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QBlocks {
    pub k: usize,
    pub k0: usize,
    pub k1: usize,
    pub rho: f64,
}

impl QBlocks {
    pub fn new(k: usize, k0: usize, k1: usize) -> Result<Self> {
        if !(k0 < k && k <= k1) {
            return Err(invalid(format!("need k0 < k <= k1, got ({k}, {k0}, {k1})")));
        }
        let (kf, k0f, k1f) = (k as f64, k0 as f64, k1 as f64);
        Ok(Self {
            k,
            k0,
            k1,
            rho: kf * kf - 2.0 * kf * k0f + k0f * k1f,
        })
    }

    /// Coefficients `(p, q, s)` with `Q11 = p 11^T`, `Q12 = q 11^T`,
    /// `Q22 = I - s 11^T`.
    pub fn coefficients(&self) -> (f64, f64, f64) {
        (
            (self.k1 - self.k0) as f64 / self.rho,
            (self.k - self.k0) as f64 / self.rho,
            self.k0 as f64 / self.rho,
        )
    }

    pub fn dense(&self) -> RowMatrix {
        let (p, q, s) = self.coefficients();
        let mut out = RowMatrix::zeros(self.k1, self.k1);
        for i in 0..self.k1 {
            for j in 0..self.k1 {
                let v = match (i < self.k0, j < self.k0) {
                    (true, true) => p,
                    (true, false) | (false, true) => q,
                    (false, false) => f64::from(u8::from(i == j)) - s,
                };
                out.set(i, j, v);
            }
        }
        out
    }

    /// `Q d` for `d` of length `k1`, in O(k1).
    pub fn apply(&self, d: &[f64]) -> Vec<f64> {
        let (p, q, s) = self.coefficients();
        let sa: f64 = d[..self.k0].iter().sum();
        let sb: f64 = d[self.k0..self.k1].iter().sum();
        let mut out = Vec::with_capacity(self.k1);
        out.extend(std::iter::repeat_n(p * sa + q * sb, self.k0));
        out.extend(d[self.k0..self.k1].iter().map(|&di| q * sa + di - s * sb));
        out
    }
}

/// `J d` without forming `J`; `d` is indexed like the projected vector.
pub fn jacobian_apply(proj: &TopKProjection, case: JacobianCase, d: &[f64]) -> Result<Vec<f64>> {
    if d.len() != proj.m() {
        return Err(mismatch(format!("direction of length {} for projection of length {}", d.len(), proj.m())));
    }
    let mut out = d.to_vec();
    if case == JacobianCase::Interior {
        return Ok(out);
    }
    let kappa = proj.effective_indices();
    let dk: Vec<f64> = kappa.iter().map(|&i| d[i]).collect();
    let qd = match case {
        JacobianCase::Boundary => {
            let avg = dk.iter().sum::<f64>() / dk.len() as f64;
            vec![avg; dk.len()]
        }
        _ => QBlocks::new(proj.k, proj.pair.k0, proj.pair.k1)?.apply(&dk),
    };
    for (&i, v) in kappa.iter().zip(qd) {
        out[i] -= v;
    }
    Ok(out)
}

/// Factor `T` with `T^T T = A^T (I - J) A`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedFactor {
    pub rows: RowMatrix,
    /// Original indices of the scenarios that enter `rows`.
    pub row_indices: Vec<usize>,
}

impl ReducedFactor {
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }
}

pub fn build_reduced_factor(a: &RowMatrix, proj: &TopKProjection, case: JacobianCase) -> Result<ReducedFactor> {
    let active = vec![true; proj.pair.k1];
    build_reduced_factor_masked(a, proj, case, &active)
}

/// As [`build_reduced_factor`] for `A^T P (I - J) P A`, where `P` keeps the
/// sorted positions of `kappa` flagged in `active` (length `k1`).
pub fn build_reduced_factor_masked(
    a: &RowMatrix,
    proj: &TopKProjection,
    case: JacobianCase,
    active: &[bool],
) -> Result<ReducedFactor> {
    if a.rows() != proj.m() {
        return Err(mismatch(format!("A has {} rows, projection has length {}", a.rows(), proj.m())));
    }
    let n = a.cols();
    if case == JacobianCase::Interior {
        return Ok(ReducedFactor {
            rows: RowMatrix::zeros(0, n),
            row_indices: Vec::new(),
        });
    }
    let (k0, k1) = (proj.pair.k0, proj.pair.k1);
    if active.len() != k1 {
        return Err(mismatch(format!("mask of length {} for k1 = {k1}", active.len())));
    }
    let kappa = proj.effective_indices();
    let mut sum_alpha = vec![0.0; n];
    let mut sum_beta = vec![0.0; n];
    for (pos, &i) in kappa.iter().enumerate() {
        if active[pos] {
            axpy(1.0, a.row(i), if pos < k0 { &mut sum_alpha } else { &mut sum_beta });
        }
    }
    let row_indices = kappa.to_vec();

    if case == JacobianCase::Boundary {
        let scale = 1.0 / (k1 as f64).sqrt();
        let data = sum_alpha.iter().zip(&sum_beta).map(|(x, y)| (x + y) * scale).collect();
        return Ok(ReducedFactor {
            rows: RowMatrix::new(1, n, data)?,
            row_indices,
        });
    }

    let qb = QBlocks::new(proj.k, k0, k1)?;
    let (p, q, s) = qb.coefficients();
    let lead = usize::from(k0 > 0);
    let mut rows = RowMatrix::zeros(lead + k1 - k0, n);
    if k0 > 0 {
        let w = (k0 as f64).sqrt();
        for (j, out) in rows.row_mut(0).iter_mut().enumerate() {
            *out = w * (p * sum_alpha[j] + q * sum_beta[j]);
        }
    }
    for pos in k0..k1 {
        let out = rows.row_mut(lead + pos - k0);
        for j in 0..n {
            out[j] = q * sum_alpha[j] - s * sum_beta[j];
        }
        if active[pos] {
            axpy(1.0, a.row(kappa[pos]), out);
        }
    }
    Ok(ReducedFactor { rows, row_indices })
}
