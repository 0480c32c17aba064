//! Slow reference implementations for tests. Nothing here calls the fast
//! kernels it is meant to check; only the plain data types are shared.

use crate::error::{invalid, mismatch, Error, Result};
use crate::model::{ConstraintBlock, RowMatrix};
use crate::projection::TopKProjection;
use crate::ssn::SubproblemContext;
use crate::topk::IndexPair;

/// One checked condition; `slack >= 0` means it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport<T> {
    pub value: T,
    pub certificate: Vec<Check>,
}

impl<T> OracleReport<T> {
    pub fn min_slack(&self) -> f64 {
        self.certificate.iter().map(|c| c.slack).fold(f64::INFINITY, f64::min)
    }
}

/// Descending order with ties broken by index, by insertion sort.
fn order_desc(y: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = Vec::with_capacity(y.len());
    for i in 0..y.len() {
        let mut pos = idx.len();
        while pos > 0 && y[idx[pos - 1]] < y[i] {
            pos -= 1;
        }
        idx.insert(pos, i);
    }
    idx
}

/// Projection onto `B_k` by trying every index pair `(k0, k1)`.
///
/// For each pair the two linear KKT equations are solved by Cramer's rule and
/// the inequalities are checked; the pair with the largest worst-case slack
/// wins. Inputs with `T_k(y) <= 0` are returned unchanged.
pub fn brute_force_project(y: &[f64], k: usize) -> Result<OracleReport<TopKProjection>> {
    let m = y.len();
    if k == 0 || k > m {
        return Err(invalid(format!("k = {k} outside 1..={m}")));
    }
    if m > 400 {
        return Err(invalid(format!("brute force limited to m <= 400, got {m}")));
    }
    let perm = order_desc(y);
    let s: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
    let tk: f64 = s[..k].iter().sum();
    let scale = 1.0 + s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if tk <= 0.0 {
        let mut k0 = k - 1;
        while k0 > 0 && s[k0 - 1] == s[k - 1] {
            k0 -= 1;
        }
        let mut k1 = k;
        while k1 < m && s[k1] == s[k - 1] {
            k1 += 1;
        }
        return Ok(OracleReport {
            value: TopKProjection {
                k,
                ybar: y.to_vec(),
                pair: IndexPair { k0, k1 },
                lambda: 0.0,
                theta: s[k - 1],
                perm,
                sorted: s,
                sorted_from: 0,
                retries: 0,
            },
            certificate: vec![Check {
                name: "T_k(y) <= 0",
                slack: -tk,
            }],
        });
    }

    let mut best: Option<(f64, IndexPair, f64, f64, Vec<Check>)> = None;
    for k0 in 0..k {
        for k1 in k..=m {
            let sa: f64 = s[..k0].iter().sum();
            let sb: f64 = s[k0..k1].iter().sum();
            // [ -k0       k-k0    ] [lambda]   [ -sa ]
            // [ -(k-k0)  -(k1-k0) ] [theta ] = [ -sb ]
            let (a11, a12) = (-(k0 as f64), (k - k0) as f64);
            let (a21, a22) = (-((k - k0) as f64), -((k1 - k0) as f64));
            let det = a11 * a22 - a12 * a21;
            if det == 0.0 {
                continue;
            }
            let lambda = (-sa * a22 - a12 * -sb) / det;
            let theta = (a11 * -sb - -sa * a21) / det;
            let mut checks = vec![Check {
                name: "lambda > 0",
                slack: lambda,
            }];
            if lambda > 0.0 {
                let mu: Vec<f64> = s[k0..k1].iter().map(|v| (v - theta) / lambda).collect();
                checks.push(Check {
                    name: "mu_beta >= 0",
                    slack: mu.iter().copied().fold(f64::INFINITY, f64::min) * lambda / scale,
                });
                checks.push(Check {
                    name: "mu_beta <= 1",
                    slack: mu.iter().map(|v| 1.0 - v).fold(f64::INFINITY, f64::min) * lambda / scale,
                });
            } else {
                // without a multiplier the block cannot move
                checks.push(Check {
                    name: "ybar_beta = y_beta",
                    slack: -s[k0..k1].iter().map(|v| (v - theta).abs()).fold(0.0, f64::max) / scale,
                });
            }
            if k0 > 0 {
                checks.push(Check {
                    name: "ybar[k0] > theta",
                    slack: (s[k0 - 1] - lambda - theta) / scale,
                });
            }
            if k1 < m {
                checks.push(Check {
                    name: "theta > ybar[k1 + 1]",
                    slack: (theta - s[k1]) / scale,
                });
            }
            let worst = checks.iter().map(|c| c.slack).fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|b| worst > b.0) {
                best = Some((worst, IndexPair { k0, k1 }, lambda, theta, checks));
            }
        }
    }
    let (worst, pair, lambda, theta, mut checks) = best.ok_or_else(|| Error::Numerical("no index pair".into()))?;
    if worst < -1e-10 {
        return Err(Error::Numerical(format!("no index pair satisfies the KKT system (best slack {worst})")));
    }
    let mut ybar = y.to_vec();
    for (pos, &i) in perm.iter().enumerate().take(pair.k1) {
        ybar[i] = if pos < pair.k0 { s[pos] - lambda } else { theta };
    }
    let tk_bar: f64 = {
        let o = order_desc(&ybar);
        o[..k].iter().map(|&i| ybar[i]).sum()
    };
    checks.push(Check {
        name: "|T_k(ybar)| <= 1e-10 scale",
        slack: 1e-10 - tk_bar.abs() / scale,
    });
    Ok(OracleReport {
        value: TopKProjection {
            k,
            ybar,
            pair,
            lambda,
            theta,
            perm,
            sorted: s,
            sorted_from: 0,
            retries: 0,
        },
        certificate: checks,
    })
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &RowMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(mismatch(format!("need a square system, got {}x{} with rhs {}", n, a.cols(), b.len())));
    }
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = a.row(i).to_vec();
            r.push(b[i]);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
            .expect("non-empty range");
        if aug[piv][col] == 0.0 {
            return Err(Error::Numerical(format!("singular matrix at column {col}")));
        }
        aug.swap(col, piv);
        for i in col + 1..n {
            let f = aug[i][col] / aug[col][col];
            if f != 0.0 {
                for j in col..=n {
                    aug[i][j] -= f * aug[col][j];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = aug[i][n];
        for j in i + 1..n {
            acc -= aug[i][j] * x[j];
        }
        x[i] = acc / aug[i][i];
    }
    Ok(x)
}

fn inverse(a: &RowMatrix) -> Result<RowMatrix> {
    let n = a.rows();
    let mut inv = RowMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = dense_solve(a, &e)?;
        for i in 0..n {
            inv.set(i, j, col[i]);
        }
    }
    Ok(inv)
}

fn matmul(a: &RowMatrix, b: &RowMatrix) -> RowMatrix {
    let mut out = RowMatrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for l in 0..a.cols() {
            let v = a.get(i, l);
            if v != 0.0 {
                for j in 0..b.cols() {
                    out.set(i, j, out.get(i, j) + v * b.get(l, j));
                }
            }
        }
    }
    out
}

/// `I - J` on the first `k1` sorted positions, built from the constraint
/// matrix `B = [1^T mu^T; 0 C]` (general case) or `c c^T / ‖c‖^2` (when
/// `k1 = k`); empty for feasible inputs.
pub fn dense_q(proj: &TopKProjection) -> Result<RowMatrix> {
    if proj.lambda == 0.0 {
        return Ok(RowMatrix::zeros(0, 0));
    }
    let (k0, k1) = (proj.pair.k0, proj.pair.k1);
    if k1 == proj.k {
        let mut q = RowMatrix::zeros(k1, k1);
        for i in 0..k1 {
            for j in 0..k1 {
                q.set(i, j, 1.0 / k1 as f64);
            }
        }
        return Ok(q);
    }
    let nb = k1 - k0;
    let mut b = RowMatrix::zeros(nb, k1);
    for j in 0..k0 {
        b.set(0, j, 1.0);
    }
    for j in k0..k1 {
        b.set(0, j, (proj.sorted[j] - proj.theta) / proj.lambda);
    }
    for r in 1..nb {
        b.set(r, k0 + r - 1, 1.0);
        b.set(r, k0 + r, -1.0);
    }
    let bbt = matmul(&b, &b.transpose());
    Ok(matmul(&matmul(&b.transpose(), &inverse(&bbt)?), &b))
}

/// Dense Newton matrix of the subproblem at `x`, assembled from the
/// brute-force projection and [`dense_q`].
pub fn dense_newton(ctx: &SubproblemContext, x: &[f64]) -> Result<RowMatrix> {
    let prob = ctx.prob;
    let n = prob.n();
    if x.len() != n {
        return Err(mismatch(format!("point of length {}, expected {n}", x.len())));
    }
    let mut v = RowMatrix::zeros(n, n);
    let hess = prob.objective.hess_diag();
    for i in 0..n {
        let w = x[i] + ctx.mu[i] / ctx.sigma;
        let inside = prob.bounds.lower[i] <= w && w <= prob.bounds.upper[i];
        v.set(i, i, hess[i] + ctx.m_scale / ctx.sigma + if inside { 0.0 } else { ctx.sigma });
    }
    let mut off = 0;
    for blk in &prob.blocks {
        add_block(&mut v, ctx, blk, &ctx.lambda[off..off + blk.m()], x)?;
        off += blk.m();
    }
    Ok(v)
}

fn add_block(v: &mut RowMatrix, ctx: &SubproblemContext, blk: &ConstraintBlock, lam: &[f64], x: &[f64]) -> Result<()> {
    let n = x.len();
    let vals: Vec<f64> = (0..blk.m())
        .map(|i| (0..n).map(|j| blk.a.get(i, j) * x[j]).sum::<f64>() + blk.b[i] + lam[i] / ctx.sigma)
        .collect();
    let proj = brute_force_project(&vals, blk.k)?.value;
    let q = dense_q(&proj)?;
    let k1 = q.rows();
    // rows of P A on the first k1 sorted positions
    let mut pa = RowMatrix::zeros(k1, n);
    for pos in 0..k1 {
        let i = proj.perm[pos];
        if vals[i] - proj.ybar[i] > 0.0 {
            pa.row_mut(pos).copy_from_slice(blk.a.row(i));
        }
    }
    let contrib = matmul(&matmul(&pa.transpose(), &q), &pa);
    for i in 0..n {
        for j in 0..n {
            v.set(i, j, v.get(i, j) + ctx.sigma * contrib.get(i, j));
        }
    }
    Ok(())
}

/// `T_k(b - F x) / k + a_mean^T x`, with the top-k sum taken by sorting.
fn qr_value(features: &RowMatrix, response: &[f64], k: usize, mean: &[f64], x: &[f64]) -> (f64, Vec<usize>) {
    let r: Vec<f64> = (0..response.len())
        .map(|i| response[i] - (0..x.len()).map(|j| features.get(i, j) * x[j]).sum::<f64>())
        .collect();
    let order = order_desc(&r);
    let top: f64 = order[..k].iter().map(|&i| r[i]).sum();
    let lin: f64 = mean.iter().zip(x).map(|(a, b)| a * b).sum();
    (top / k as f64 + lin, order)
}

/// Polyak subgradient method with a dynamic target level on the quantile
/// regression objective `T_k(b - F x) / k + a_mean^T x`.
///
/// The target is `best - delta`; `delta` halves whenever the path travelled
/// since the last sufficient decrease exceeds a budget, and the iterate
/// restarts from the best point. Returns the best value and its point.
pub fn subgradient_reference(features: &RowMatrix, response: &[f64], k: usize, iters: usize) -> Result<(f64, Vec<f64>)> {
    let (m, n) = (features.rows(), features.cols());
    if response.len() != m {
        return Err(mismatch(format!("{m} feature rows for {} responses", response.len())));
    }
    if k == 0 || k > m {
        return Err(invalid(format!("k = {k} outside 1..={m}")));
    }
    let mut mean = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            mean[j] += features.get(i, j) / m as f64;
        }
    }
    let mut x = vec![0.0; n];
    let (f0, _) = qr_value(features, response, k, &mean, &x);
    let mut best = (f0, x.clone());
    let mut delta = 0.5 * (1.0 + f0.abs());
    let budget = 1.0 + response.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut path = 0.0;
    let mut reference = f0;
    for _ in 0..iters {
        let (f, order) = qr_value(features, response, k, &mean, &x);
        if f < best.0 {
            best = (f, x.clone());
        }
        if f <= reference - 0.5 * delta {
            reference = best.0;
            path = 0.0;
        } else if path > budget {
            delta *= 0.5;
            path = 0.0;
            reference = best.0;
            x = best.1.clone();
            continue;
        }
        let mut g = mean.clone();
        for &i in &order[..k] {
            for j in 0..n {
                g[j] -= features.get(i, j) / k as f64;
            }
        }
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg == 0.0 {
            break;
        }
        let level = reference - delta;
        let step = (f - level) / gg;
        for j in 0..n {
            x[j] -= step * g[j];
        }
        path += step * gg.sqrt();
    }
    Ok(best)
}

/// Mean of the `(1 - tau) m` largest responses: the optimal `t` of the
/// featureless superquantile regression.
pub fn analytic_qr_intercept(b: &[f64], tau: f64) -> Result<f64> {
    let kf = (1.0 - tau) * b.len() as f64;
    let k = kf.round();
    if !(tau > 0.0 && tau < 1.0) || (kf - k).abs() > 1e-9 * b.len() as f64 || k < 1.0 {
        return Err(invalid(format!("(1 - tau) m = {kf} is not a positive integer")));
    }
    let order = order_desc(b);
    let k = k as usize;
    Ok(order[..k].iter().map(|&i| b[i]).sum::<f64>() / k as f64)
}
