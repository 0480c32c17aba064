//! Euclidean projection onto `B_k = { y : T_k(y) <= 0 }` and onto boxes.
//!
//! The top-k projection sorts (lazily, or only a window around position `k`
//! when a hint is available) and then pivots the index pair `(k0, k1)`
//! outward from `(k - 1, k)` until the sorted KKT system is satisfied:
//!
//! ```text
//! ybar[..k0]   = s[..k0] - lambda
//! ybar[k0..k1] = theta
//! ybar[k1..]   = s[k1..]
//! sum(s[..k0]) - k0 * lambda + (k - k0) * theta = 0
//! ```

use std::time::Instant;

use crate::error::{invalid, mismatch, Result};
use crate::topk::{desc_key, IndexPair, LazySorter, Partition};
use crate::trace::Timings;

/// Projection of a vector onto `B_k` plus the data that certifies it.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKProjection {
    pub k: usize,
    pub ybar: Vec<f64>,
    /// Index pair of the sorted projection.
    pub pair: IndexPair,
    /// Multiplier of the top-k-sum constraint; zero iff the input was feasible.
    pub lambda: f64,
    /// Common value of the tie block `beta` in the projection.
    pub theta: f64,
    /// Ordering used. Positions `sorted_from..sorted.len()` are in canonical
    /// descending order; positions before `sorted_from` hold the largest
    /// entries in no particular order.
    pub perm: Vec<usize>,
    /// Input values along `perm` (at least `k1` long).
    pub sorted: Vec<f64>,
    /// Start of the canonically sorted window; never above `k0`.
    pub sorted_from: usize,
    /// How many times the partial-sort prefix had to be enlarged.
    pub retries: u32,
}

impl TopKProjection {
    pub fn m(&self) -> usize {
        self.ybar.len()
    }

    pub fn is_interior(&self) -> bool {
        self.lambda == 0.0
    }

    pub fn partition(&self) -> Partition {
        self.pair.partition(self.m())
    }

    /// Implied multipliers `(s_i - theta) / lambda` on the tie block.
    ///
    /// Empty for feasible inputs.
    pub fn beta_multipliers(&self) -> Vec<f64> {
        if self.is_interior() {
            return Vec::new();
        }
        self.sorted[self.pair.k0..self.pair.k1]
            .iter()
            .map(|&s| (s - self.theta) / self.lambda)
            .collect()
    }

    /// Original indices of the `alpha ∪ beta` block, in sorted order.
    pub fn effective_indices(&self) -> &[usize] {
        &self.perm[..self.pair.k1]
    }
}

enum Fetch {
    Value(f64),
    End,
    Unavailable,
}

/// Source of values in canonical descending order, possibly only a prefix.
trait SortedSource {
    fn fetch(&mut self, i: usize) -> Fetch;

    /// `(lo, s[0] + ... + s[lo-1])`: the pivot may not look below `lo`.
    fn head(&self) -> (usize, f64) {
        (0, 0.0)
    }
}

struct HeapSource<'a> {
    sorter: Option<LazySorter>,
    perm: Vec<usize>,
    values: Vec<f64>,
    m: usize,
    timings: &'a mut Timings,
}

impl SortedSource for HeapSource<'_> {
    fn fetch(&mut self, i: usize) -> Fetch {
        if i >= self.m {
            return Fetch::End;
        }
        let t = Instant::now();
        while self.values.len() <= i {
            let (idx, v) = self
                .sorter
                .as_mut()
                .and_then(|s| s.pop())
                .expect("heap holds every index below m");
            self.perm.push(idx);
            self.values.push(v);
        }
        self.timings.sort += t.elapsed();
        Fetch::Value(self.values[i])
    }
}

/// Values sorted on `lo..values.len()`; the first `lo` are the largest, in
/// any order, and only their sum is exposed.
struct WindowSource<'a> {
    values: &'a [f64],
    lo: usize,
    head_sum: f64,
    m: usize,
}

impl SortedSource for WindowSource<'_> {
    fn fetch(&mut self, i: usize) -> Fetch {
        if i >= self.m {
            Fetch::End
        } else if i >= self.lo && i < self.values.len() {
            Fetch::Value(self.values[i])
        } else {
            Fetch::Unavailable
        }
    }

    fn head(&self) -> (usize, f64) {
        (self.lo, self.head_sum)
    }
}

struct PivotResult {
    pair: IndexPair,
    lambda: f64,
    theta: f64,
    /// Number of sorted values the result depends on.
    used: usize,
}

struct NeedMore;

fn get<S: SortedSource>(src: &mut S, i: usize) -> std::result::Result<f64, NeedMore> {
    match src.fetch(i) {
        Fetch::Value(v) => Ok(v),
        Fetch::Unavailable => Err(NeedMore),
        Fetch::End => unreachable!("index {i} requested past the end"),
    }
}

/// Solves the two linear KKT equations for `(lambda, theta)` given the pair.
#[inline]
pub(crate) fn solve_multipliers(k: usize, k0: usize, k1: usize, sum_alpha: f64, sum_beta: f64) -> (f64, f64) {
    let (k, k0, k1) = (k as f64, k0 as f64, k1 as f64);
    let rho = k * k - 2.0 * k * k0 + k0 * k1;
    let lambda = (sum_alpha * (k1 - k0) + (k - k0) * sum_beta) / rho;
    let theta = (k0 * sum_beta - (k - k0) * sum_alpha) / rho;
    (lambda, theta)
}

/// `s[0] + ... + s[i-1]` for `i >= lo`.
struct Prefix {
    lo: usize,
    sums: Vec<f64>,
}

impl Prefix {
    fn at(&self, i: usize) -> f64 {
        self.sums[i - self.lo]
    }

    fn len(&self) -> usize {
        self.lo + self.sums.len()
    }

    fn push(&mut self, v: f64) {
        let last = *self.sums.last().expect("prefix starts non-empty");
        self.sums.push(last + v);
    }
}

fn pivot<S: SortedSource>(src: &mut S, k: usize, m: usize) -> std::result::Result<PivotResult, NeedMore> {
    let (lo, head_sum) = src.head();
    if lo >= k {
        return Err(NeedMore);
    }
    let mut prefix = Prefix {
        lo,
        sums: Vec::with_capacity(k - lo + 2),
    };
    prefix.sums.push(head_sum);
    for i in lo..k {
        prefix.push(get(src, i)?);
    }
    if prefix.at(k) <= 0.0 {
        // Feasible: identity projection. Report the index pair of the input.
        let pivot_val = get(src, k - 1)?;
        let mut k0 = k - 1;
        while k0 > 0 && get(src, k0 - 1)? == pivot_val {
            k0 -= 1;
        }
        let mut k1 = k;
        while k1 < m && get(src, k1)? == pivot_val {
            k1 += 1;
        }
        let used = if k1 < m { k1 + 1 } else { m };
        return Ok(PivotResult {
            pair: IndexPair { k0, k1 },
            lambda: 0.0,
            theta: pivot_val,
            used,
        });
    }

    let mut k0 = k - 1;
    let mut k1 = k;
    loop {
        let (lambda, theta) = solve_multipliers(k, k0, k1, prefix.at(k0), prefix.at(k1) - prefix.at(k0));
        if k1 < m {
            let next = get(src, k1)?;
            if theta <= next {
                if prefix.len() == k1 + 1 {
                    prefix.push(next);
                }
                k1 += 1;
                continue;
            }
        }
        if k0 >= 1 && get(src, k0 - 1)? - lambda <= theta {
            k0 -= 1;
            continue;
        }
        // Equal inputs project to equal values, so exact ties at either edge
        // belong to the theta block. Round-off alone may leave them outside,
        // differently for hinted and unhinted runs.
        let (mut t0, mut t1) = (k0, k1);
        while t0 >= 1 && t0 < t1 && get(src, t0 - 1)? == get(src, t0)? {
            t0 -= 1;
        }
        while t1 < m && t1 > t0 && get(src, t1)? == get(src, t1 - 1)? {
            if prefix.len() == t1 + 1 {
                prefix.push(get(src, t1)?);
            }
            t1 += 1;
        }
        if (t0, t1) != (k0, k1) {
            (k0, k1) = (t0, t1);
            let (lambda, theta) = solve_multipliers(k, k0, k1, prefix.at(k0), prefix.at(k1) - prefix.at(k0));
            let used = if k1 < m { k1 + 1 } else { m };
            return Ok(PivotResult {
                pair: IndexPair { k0, k1 },
                lambda,
                theta,
                used,
            });
        }
        let used = if k1 < m { k1 + 1 } else { m };
        return Ok(PivotResult {
            pair: IndexPair { k0, k1 },
            lambda,
            theta,
            used,
        });
    }
}

fn assemble(
    y: &[f64],
    k: usize,
    res: PivotResult,
    perm: Vec<usize>,
    mut sorted: Vec<f64>,
    sorted_from: usize,
    retries: u32,
) -> TopKProjection {
    let mut ybar = y.to_vec();
    if res.lambda > 0.0 {
        let IndexPair { k0, k1 } = res.pair;
        for (&i, &s) in perm[..k0].iter().zip(&sorted[..k0]) {
            ybar[i] = s - res.lambda;
        }
        for &i in &perm[k0..k1] {
            ybar[i] = res.theta;
        }
    }
    sorted.truncate(res.used);
    TopKProjection {
        k,
        ybar,
        pair: res.pair,
        lambda: res.lambda,
        theta: res.theta,
        perm,
        sorted,
        sorted_from,
        retries,
    }
}

fn check_k(m: usize, k: usize) -> Result<()> {
    if k == 0 || k > m {
        return Err(invalid(format!("k = {k} outside 1..={m}")));
    }
    Ok(())
}

/// Projects `y` onto `B_k`.
///
/// Sorting is done lazily from a max-heap, so the cost is O(m + k1 log m)
/// where `k1` is the right end of the projection's tie block.
pub fn project_bk(y: &[f64], k: usize) -> Result<TopKProjection> {
    project_bk_timed(y, k, &mut Timings::default())
}

pub fn project_bk_timed(y: &[f64], k: usize, timings: &mut Timings) -> Result<TopKProjection> {
    let m = y.len();
    check_k(m, k)?;
    let start = Instant::now();
    let sort_before = timings.sort;
    let t = Instant::now();
    let sorter = LazySorter::new(y);
    timings.sort += t.elapsed();
    let mut src = HeapSource {
        sorter: Some(sorter),
        perm: Vec::with_capacity(k + 1),
        values: Vec::with_capacity(k + 1),
        m,
        timings,
    };
    let res = match pivot(&mut src, k, m) {
        Ok(r) => r,
        Err(NeedMore) => unreachable!("heap source never runs dry"),
    };
    let HeapSource {
        sorter,
        mut perm,
        values,
        timings,
        ..
    } = src;
    perm.extend(sorter.expect("sorter present").into_remaining());
    let out = assemble(y, k, res, perm, values, 0, 0);
    timings.add_projection(start.elapsed(), sort_before);
    Ok(out)
}

/// Projects `y` onto `B_k` sorting only a window of positions around `k`:
/// up to `hint_k1` from above and symmetrically below. Entries above the
/// window are selected but left unsorted, since only their sum matters.
/// The window is widened until the pivot stays inside it.
///
/// The result agrees with [`project_bk`] up to summation order in the
/// multipliers; the index pair is the same.
pub fn project_bk_with_hint(y: &[f64], k: usize, hint_k1: usize) -> Result<TopKProjection> {
    project_bk_with_hint_timed(y, k, hint_k1, &mut Timings::default())
}

pub fn project_bk_with_hint_timed(
    y: &[f64],
    k: usize,
    hint_k1: usize,
    timings: &mut Timings,
) -> Result<TopKProjection> {
    let m = y.len();
    check_k(m, k)?;
    if hint_k1 == 0 || hint_k1 > m {
        return Err(invalid(format!("hint {hint_k1} outside 1..={m}")));
    }
    let start = Instant::now();
    let sort_before = timings.sort;
    let mut above = hint_k1.max(k + 1).min(m) - k;
    let mut below = above + WINDOW_PAD;
    let mut retries = 0;
    loop {
        let (lo, hi) = (k.saturating_sub(below), (k + above).min(m));
        let t = Instant::now();
        let perm = sort_window(y, lo, hi);
        let values: Vec<f64> = perm[..hi].iter().map(|&i| y[i]).collect();
        let head_sum: f64 = values[..lo].iter().sum();
        timings.sort += t.elapsed();
        let mut src = WindowSource {
            values: &values,
            lo,
            head_sum,
            m,
        };
        match pivot(&mut src, k, m) {
            Ok(res) => {
                let out = assemble(y, k, res, perm, values, lo, retries);
                timings.add_projection(start.elapsed(), sort_before);
                return Ok(out);
            }
            Err(NeedMore) => {
                above = (2 * above).max(above + 16);
                below = (2 * below).max(below + 16);
                retries += 1;
            }
        }
    }
}

/// Extra room below `k`, where the tie block usually extends only a little.
const WINDOW_PAD: usize = 8;

/// Ordering whose positions `lo..hi` are canonical and whose first `lo`
/// positions hold the `lo` largest entries.
fn sort_window(y: &[f64], lo: usize, hi: usize) -> Vec<usize> {
    let mut keyed: Vec<(u64, usize)> = y.iter().enumerate().map(|(i, &v)| (desc_key(v), i)).collect();
    if hi < keyed.len() {
        keyed.select_nth_unstable(hi - 1);
    }
    let top = &mut keyed[..hi];
    if lo > 0 {
        top.select_nth_unstable(lo);
    }
    top[lo..].sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Suggested prefix length for the next projection given the last `k1`.
pub fn next_hint(last_k1: usize, m: usize) -> usize {
    let h = (1.05 * last_k1 as f64).ceil() as usize + 10;
    h.clamp(1, m.max(1))
}

/// Componentwise bounds `lower <= x <= upper`; infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraint {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxConstraint {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(mismatch(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(invalid(format!(
                "box bound {i}: lower {} exceeds upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; n], vec![upper; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains_coord(&self, i: usize, v: f64) -> bool {
        self.lower[i] <= v && v <= self.upper[i]
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| v.max(lo).min(hi))
            .collect()
    }

    /// Support function `sup_{z in box} <w, z>`, `+inf` when unbounded.
    pub fn support(&self, w: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            if wi > 0.0 {
                total += wi * self.upper[i];
            } else if wi < 0.0 {
                total += wi * self.lower[i];
            }
        }
        total
    }
}

/// Clamps `x` to the box; see [`BoxConstraint::project`].
pub fn project_box(x: &[f64], bx: &BoxConstraint) -> Result<Vec<f64>> {
    if x.len() != bx.dim() {
        return Err(mismatch(format!("vector of length {} vs box of dimension {}", x.len(), bx.dim())));
    }
    Ok(bx.project(x))
}
