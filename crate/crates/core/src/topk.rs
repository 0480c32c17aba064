//! Top-k-sum operator and the ordering machinery shared by the projection,
//! the generalized Jacobian and the Newton system.
//!
//! Orders are always "value descending, original index ascending", so ties
//! resolve the same way in every code path (full sort, partial sort, lazy heap).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::Range;

use crate::error::{invalid, Result};

/// Comparator for the canonical descending order of `x`.
///
/// NaN entries are unsupported; they compare equal to everything.
#[inline]
pub fn cmp_desc(x: &[f64], a: usize, b: usize) -> Ordering {
    x[b].partial_cmp(&x[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// A (possibly partial) nonincreasing rearrangement of a vector.
///
/// `values[i] == input[perm[i]]` for every `i`. The first `sorted_len` values
/// are nonincreasing and every later value is `<= values[sorted_len - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedView {
    pub perm: Vec<usize>,
    pub values: Vec<f64>,
    pub sorted_len: usize,
}

impl SortedView {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The sorted prefix.
    pub fn prefix(&self) -> &[f64] {
        &self.values[..self.sorted_len]
    }
}

/// Stable nonincreasing sort; ties keep their original order.
pub fn sort_desc(x: &[f64]) -> SortedView {
    let mut perm: Vec<usize> = (0..x.len()).collect();
    perm.sort_by(|&a, &b| cmp_desc(x, a, b));
    let values = perm.iter().map(|&i| x[i]).collect();
    SortedView {
        perm,
        values,
        sorted_len: x.len(),
    }
}

/// Sorts only the `top` largest entries (quickselect followed by a sort of
/// the selected prefix).
pub fn partial_sort_desc(x: &[f64], top: usize) -> Result<SortedView> {
    let m = x.len();
    if top == 0 || top > m {
        return Err(invalid(format!("partial sort size {top} outside 1..={m}")));
    }
    let mut perm: Vec<usize> = (0..m).collect();
    partial_sort_indices(x, &mut perm, top);
    let values = perm.iter().map(|&i| x[i]).collect();
    Ok(SortedView {
        perm,
        values,
        sorted_len: top,
    })
}

/// Integer key whose ascending order is the descending order of `v`
/// (`-0.0` and `0.0` compare equal, as under `partial_cmp`).
pub(crate) fn desc_key(v: f64) -> u64 {
    let v = if v == 0.0 { 0.0 } else { v };
    let bits = v.to_bits();
    let asc = if bits >> 63 == 1 { !bits } else { bits | (1 << 63) };
    !asc
}

/// Same ordering as sorting `idx` by [`cmp_desc`], but on packed integer keys,
/// which avoids the indirect loads of a comparator sort.
pub(crate) fn partial_sort_indices(x: &[f64], idx: &mut [usize], top: usize) {
    let mut keyed: Vec<(u64, usize)> = idx.iter().map(|&i| (desc_key(x[i]), i)).collect();
    if top < keyed.len() {
        keyed.select_nth_unstable(top - 1);
    }
    keyed[..top].sort_unstable();
    for (slot, (_, i)) in idx.iter_mut().zip(keyed) {
        *slot = i;
    }
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    value: f64,
    index: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .partial_cmp(&other.value)
            .unwrap_or(Ordering::Equal)
            .then(other.index.cmp(&self.index))
    }
}

/// Max-heap that hands out entries in canonical descending order on demand.
///
/// Construction is O(m); each extraction is O(log m).
pub(crate) struct LazySorter {
    heap: BinaryHeap<HeapEntry>,
}

impl LazySorter {
    pub(crate) fn new(x: &[f64]) -> Self {
        let entries: Vec<HeapEntry> = x
            .iter()
            .enumerate()
            .map(|(index, &value)| HeapEntry { value, index })
            .collect();
        Self {
            heap: BinaryHeap::from(entries),
        }
    }

    pub(crate) fn pop(&mut self) -> Option<(usize, f64)> {
        self.heap.pop().map(|e| (e.index, e.value))
    }

    /// Indices still in the heap (unordered).
    pub(crate) fn into_remaining(self) -> impl Iterator<Item = usize> {
        self.heap.into_vec().into_iter().map(|e| e.index)
    }
}

/// Sum of the `k` largest entries of `x`.
///
/// Uses a heap built in O(m) and `k` extractions, so the cost is
/// O(m + k log m) rather than a full sort.
pub fn topk_sum(x: &[f64], k: usize) -> Result<f64> {
    let m = x.len();
    if k == 0 || k > m {
        return Err(invalid(format!("k = {k} outside 1..={m}")));
    }
    let mut sorter = LazySorter::new(x);
    let mut sum = 0.0;
    for _ in 0..k {
        let (_, v) = sorter.pop().expect("heap holds m >= k entries");
        sum += v;
    }
    Ok(sum)
}

/// Boundaries of the block of entries tied with the k-th largest value.
///
/// Counts, not positions: `k0` entries lie strictly above the tie block and
/// `k1` is the number of entries down to and including its last member.
/// So `0 <= k0 < k <= k1 <= m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IndexPair {
    pub k0: usize,
    pub k1: usize,
}

/// The index sets induced by an [`IndexPair`], as zero-based ranges into the
/// sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub alpha: Range<usize>,
    pub beta: Range<usize>,
    pub gamma: Range<usize>,
}

impl IndexPair {
    pub fn partition(&self, m: usize) -> Partition {
        Partition {
            alpha: 0..self.k0,
            beta: self.k0..self.k1,
            gamma: self.k1..m,
        }
    }
}

/// Index pair of a nonincreasing vector with respect to `k`, using exact
/// equality for ties.
pub fn partition_of(sorted: &[f64], k: usize) -> Result<(IndexPair, Partition)> {
    partition_of_with_tol(sorted, k, 0.0)
}

/// As [`partition_of`], but entries within `rel_tol * max(1, |s_k|)` of the
/// k-th value count as tied.
pub fn partition_of_with_tol(
    sorted: &[f64],
    k: usize,
    rel_tol: f64,
) -> Result<(IndexPair, Partition)> {
    let m = sorted.len();
    if k == 0 || k > m {
        return Err(invalid(format!("k = {k} outside 1..={m}")));
    }
    if rel_tol < 0.0 {
        return Err(invalid("tie tolerance must be nonnegative"));
    }
    let pivot = sorted[k - 1];
    let slack = rel_tol * pivot.abs().max(1.0);
    let tied = |v: f64| (v - pivot).abs() <= slack;
    let mut k0 = k - 1;
    while k0 > 0 && tied(sorted[k0 - 1]) {
        k0 -= 1;
    }
    let mut k1 = k;
    while k1 < m && tied(sorted[k1]) {
        k1 += 1;
    }
    let pair = IndexPair { k0, k1 };
    Ok((pair, pair.partition(m)))
}
