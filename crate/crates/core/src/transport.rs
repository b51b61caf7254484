//! Exact 2-Wasserstein distance between equal-size uniform point clouds.
//!
//! With uniform weights and equal sizes the optimal plan is a permutation,
//! so W2² is the optimum of a dense linear assignment problem on squared
//! Euclidean costs. The assignment is solved with a shortest augmenting
//! path method (Jonker-Volgenant / Crouse variant), O(n³) worst case.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::par;
use crate::rng;
use crate::stats::SampleMatrix;

/// Largest cloud solved exactly without explicit subsampling.
pub const DEFAULT_MAX_EXACT: usize = 4096;
/// Largest cloud accepted by [`brute_force_w2`].
pub const BRUTE_FORCE_MAX: usize = 8;

/// An optimal pairing `i → permutation[i]` and its mean squared cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub permutation: Vec<usize>,
    pub cost: f64,
}

/// Dense `n × n` squared-Euclidean cost matrix, row-major.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    n: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn squared_euclidean(p: &SampleMatrix, q: &SampleMatrix) -> Result<Self> {
        check_shapes(p, q)?;
        let (n, d) = p.shape();
        // transpose so each sample is a contiguous column
        let pt = p.as_matrix().transpose();
        let qt = q.as_matrix().transpose();
        let (ps, qs) = (pt.as_slice(), qt.as_slice());
        let mut values = vec![0.0; n * n];
        par::fill_rows(&mut values, n, |i, row| {
            let pi = &ps[i * d..(i + 1) * d];
            for (j, c) in row.iter_mut().enumerate() {
                let qj = &qs[j * d..(j + 1) * d];
                *c = pi.iter().zip(qj).map(|(a, b)| (a - b) * (a - b)).sum();
            }
        });
        Ok(CostMatrix { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Mean cost of a pairing, summed in row order.
    pub fn mean_cost(&self, perm: &[usize]) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        perm.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum::<f64>() / self.n as f64
    }
}

fn check_shapes(p: &SampleMatrix, q: &SampleMatrix) -> Result<()> {
    if p.shape() != q.shape() {
        return Err(Error::ShapeMismatch(format!("point clouds {:?} vs {:?}", p.shape(), q.shape())));
    }
    if p.nrows() == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    Ok(())
}

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns `col_for_row`. Ties resolve deterministically.
pub fn solve_assignment(cost: &CostMatrix) -> Vec<usize> {
    const NONE: usize = usize::MAX;
    let n = cost.n();
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];
    let mut col_for_row = vec![NONE; n];
    let mut row_for_col = vec![NONE; n];
    let mut path = vec![NONE; n];
    let mut shortest = vec![f64::INFINITY; n];
    let mut seen_row = vec![false; n];
    let mut seen_col = vec![false; n];
    let mut remaining: Vec<usize> = Vec::with_capacity(n);

    for start in 0..n {
        shortest.fill(f64::INFINITY);
        seen_row.fill(false);
        seen_col.fill(false);
        remaining.clear();
        // reverse order makes a constant cost matrix resolve to the identity
        remaining.extend((0..n).rev());

        let mut min_val = 0.0;
        let mut i = start;
        let sink = loop {
            seen_row[i] = true;
            let row = cost.row(i);
            let mut best = NONE;
            let mut lowest = f64::INFINITY;
            for (k, &j) in remaining.iter().enumerate() {
                let r = min_val + row[j] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                if shortest[j] < lowest || (shortest[j] == lowest && row_for_col[j] == NONE) {
                    lowest = shortest[j];
                    best = k;
                }
            }
            min_val = lowest;
            let j = remaining.swap_remove(best);
            seen_col[j] = true;
            if row_for_col[j] == NONE {
                break j;
            }
            i = row_for_col[j];
        };

        u[start] += min_val;
        for r in 0..n {
            if seen_row[r] && r != start {
                u[r] += min_val - shortest[col_for_row[r]];
            }
        }
        for c in 0..n {
            if seen_col[c] {
                v[c] -= min_val - shortest[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row_for_col[j] = r;
            std::mem::swap(&mut col_for_row[r], &mut j);
            if r == start {
                break;
            }
        }
    }
    col_for_row
}

/// Exact empirical W2 with the default size limit.
pub fn assignment_w2(p: &SampleMatrix, q: &SampleMatrix) -> Result<(f64, Assignment)> {
    assignment_w2_limited(p, q, DEFAULT_MAX_EXACT)
}

/// Exact empirical W2; errors with `TooLarge` above `max_exact` points.
pub fn assignment_w2_limited(p: &SampleMatrix, q: &SampleMatrix, max_exact: usize) -> Result<(f64, Assignment)> {
    check_shapes(p, q)?;
    if p.nrows() > max_exact {
        return Err(Error::TooLarge(format!(
            "{} points exceed the exact-transport limit of {max_exact}; subsample first",
            p.nrows()
        )));
    }
    let cost = CostMatrix::squared_euclidean(p, q)?;
    let permutation = solve_assignment(&cost);
    let mean = cost.mean_cost(&permutation).max(0.0);
    Ok((mean.sqrt(), Assignment { permutation, cost: mean }))
}

/// Minimum over all `n!` pairings. Test oracle for small clouds.
pub fn brute_force_w2(p: &SampleMatrix, q: &SampleMatrix) -> Result<f64> {
    check_shapes(p, q)?;
    let n = p.nrows();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::TooLarge(format!("brute force is limited to {BRUTE_FORCE_MAX} points, got {n}")));
    }
    let cost = CostMatrix::squared_euclidean(p, q)?;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = cost.mean_cost(&perm);
    // Heap's algorithm, iterative form
    let mut c = vec![0usize; n];
    let mut k = 0;
    while k < n {
        if c[k] < k {
            if k % 2 == 0 {
                perm.swap(0, k);
            } else {
                perm.swap(c[k], k);
            }
            best = best.min(cost.mean_cost(&perm));
            c[k] += 1;
            k = 0;
        } else {
            c[k] = 0;
            k += 1;
        }
    }
    Ok(best.max(0.0).sqrt())
}

/// The same `m` uniformly drawn rows of both clouds (sorted indices).
pub fn subsample(p: &SampleMatrix, q: &SampleMatrix, m: usize, seed: u64) -> Result<(SampleMatrix, SampleMatrix)> {
    if p.nrows() != q.nrows() {
        return Err(Error::ShapeMismatch(format!("{} rows vs {} rows", p.nrows(), q.nrows())));
    }
    let n = p.nrows();
    if m > n {
        return Err(Error::TooLarge(format!("cannot draw {m} rows from {n}")));
    }
    if m == n {
        return Ok((p.clone(), q.clone()));
    }
    let mut idx = sample(&mut rng::rng(seed), n, m).into_vec();
    idx.sort_unstable();
    Ok((p.select_rows(&idx), q.select_rows(&idx)))
}
