//! k-DPP probabilities and MAP subset selection.
//!
//! The greedy selector keeps, for every candidate, the row of the Cholesky
//! factor of the selected submatrix extended by that candidate. The squared
//! last entry of that row is the candidate's conditional variance, i.e. the
//! factor by which `det(K_S)` grows if it is added next.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{numerical_rank, KernelMatrix, DEFAULT_RANK_TOL};

/// Conditional variances below this fraction of the largest diagonal entry
/// count as zero.
pub const GAIN_FLOOR: f64 = 1e-12;

/// Upper bound on `C(N, k)` accepted by [`brute_force_map`].
pub const BRUTE_FORCE_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSelection {
    /// Selected rows, in selection order.
    pub indices: Vec<usize>,
    /// `log det(K_S)`; negative infinity when `degenerate` is set.
    pub log_det: f64,
    /// The selected principal submatrix is (numerically) singular.
    pub degenerate: bool,
}

impl SubsetSelection {
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn sorted_indices(&self) -> Vec<usize> {
        let mut v = self.indices.clone();
        v.sort_unstable();
        v
    }
}

/// Greedy MAP run with its per-step log-det gains.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyTrace {
    pub selection: SubsetSelection,
    pub gains: Vec<f64>,
}

/// Log-determinant of a principal submatrix, flagged when singular.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    pub value: f64,
    pub degenerate: bool,
}

/// Log-probability that may be negative infinity for singular subsets.
pub type LogProb = LogDet;

/// Log-determinant of `K[indices, indices]` by Cholesky factorisation.
/// Pivots at or below `GAIN_FLOOR` times the largest diagonal entry of the
/// submatrix mark it degenerate.
pub fn subset_log_det(kernel: &KernelMatrix, indices: &[usize]) -> LogDet {
    let k = indices.len();
    if k == 0 {
        return LogDet {
            value: 0.0,
            degenerate: false,
        };
    }
    let scale = indices
        .iter()
        .map(|&i| kernel.get(i, i))
        .fold(0.0, f64::max);
    let floor = GAIN_FLOOR * scale;
    let mut l = vec![0.0; k * k];
    let mut log_det = 0.0;
    for a in 0..k {
        for b in 0..=a {
            let mut s = kernel.get(indices[a], indices[b]);
            for c in 0..b {
                s -= l[a * k + c] * l[b * k + c];
            }
            if a == b {
                if s.is_nan() || s <= floor {
                    return LogDet {
                        value: f64::NEG_INFINITY,
                        degenerate: true,
                    };
                }
                log_det += s.ln();
                l[a * k + a] = s.sqrt();
            } else {
                l[a * k + b] = s / l[b * k + b];
            }
        }
    }
    LogDet {
        value: log_det,
        degenerate: false,
    }
}

fn check_indices(kernel: &KernelMatrix, indices: &[usize]) -> Result<()> {
    let n = kernel.n();
    let mut seen = vec![false; n];
    for &i in indices {
        if i >= n {
            return Err(Error::Parameter(format!(
                "index {i} out of range for N = {n}"
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Parameter(format!("index {i} selected twice")));
        }
    }
    Ok(())
}

/// Plain greedy over conditional variances. Stops early, without error, once
/// every remaining candidate falls below the gain floor.
fn greedy_core(kernel: &KernelMatrix, k: usize) -> (Vec<usize>, Vec<f64>) {
    let n = kernel.n();
    let floor = GAIN_FLOOR * kernel.max_diagonal();
    let mut variance: Vec<f64> = (0..n).map(|i| kernel.get(i, i)).collect();
    // chol[i] holds the factor row of candidate i against the selected items.
    let mut chol: Vec<Vec<f64>> = vec![Vec::with_capacity(k); n];
    let mut chosen = vec![false; n];
    let mut picks = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);

    while picks.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if chosen[i] || variance[i].is_nan() || variance[i] <= floor {
                continue;
            }
            if best.is_none_or(|b| variance[i] > variance[b]) {
                best = Some(i);
            }
        }
        let Some(j) = best else { break };
        let dj = variance[j].sqrt();
        chosen[j] = true;
        picks.push(j);
        gains.push(variance[j].ln());

        let cj = chol[j].clone();
        for i in 0..n {
            if chosen[i] {
                continue;
            }
            let dot: f64 = cj.iter().zip(&chol[i]).map(|(a, b)| a * b).sum();
            let e = (kernel.get(j, i) - dot) / dj;
            chol[i].push(e);
            variance[i] -= e * e;
        }
    }
    (picks, gains)
}

fn check_cardinality(kernel: &KernelMatrix, k: usize) -> Result<()> {
    let n = kernel.n();
    if k < 1 || k > n {
        return Err(Error::Parameter(format!("k must lie in [1, {n}], got {k}")));
    }
    Ok(())
}

/// Greedy approximation of the k-DPP MAP subset.
///
/// At each step picks the candidate with the largest conditional variance
/// (largest log-det gain), lowest index on ties.
pub fn greedy_map_kdpp(kernel: &KernelMatrix, k: usize) -> Result<SubsetSelection> {
    greedy_map_kdpp_trace(kernel, k).map(|t| t.selection)
}

pub fn greedy_map_kdpp_trace(kernel: &KernelMatrix, k: usize) -> Result<GreedyTrace> {
    check_cardinality(kernel, k)?;
    let rank = numerical_rank(kernel, DEFAULT_RANK_TOL)?;
    if k > rank {
        return Err(Error::Rank { requested: k, rank });
    }
    let (indices, gains) = greedy_core(kernel, k);
    if indices.len() < k {
        return Err(Error::Rank {
            requested: k,
            rank: indices.len(),
        });
    }
    Ok(GreedyTrace {
        selection: SubsetSelection {
            log_det: gains.iter().sum(),
            indices,
            degenerate: false,
        },
        gains,
    })
}

/// Greedy selection that tolerates `k` above the kernel rank.
#[derive(Debug, Clone, PartialEq)]
pub struct FilledSelection {
    pub indices: Vec<usize>,
    /// How many of `indices` came from the greedy MAP pass.
    pub dpp_picks: usize,
    /// Set when the kernel ran out of rank and lowest unselected indices were
    /// appended to reach `k`.
    pub rank_fallback: bool,
}

pub fn greedy_map_with_fill(kernel: &KernelMatrix, k: usize) -> Result<FilledSelection> {
    let n = kernel.n();
    if k > n {
        return Err(Error::Parameter(format!("k = {k} exceeds N = {n}")));
    }
    let (mut indices, _) = greedy_core(kernel, k);
    let dpp_picks = indices.len();
    if dpp_picks < k {
        let mut taken = vec![false; n];
        for &i in &indices {
            taken[i] = true;
        }
        indices.extend((0..n).filter(|&i| !taken[i]).take(k - dpp_picks));
    }
    Ok(FilledSelection {
        indices,
        dpp_picks,
        rank_fallback: dpp_picks < k,
    })
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Calls `visit` on every size-`k` subset of `0..n` in lexicographic order.
pub fn for_each_combination(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let Some(pos) = (0..k).rev().find(|&p| idx[p] != p + n - k) else {
            return;
        };
        idx[pos] += 1;
        for q in pos + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Exact MAP subset by exhaustive enumeration. Ties keep the
/// lexicographically smallest subset.
pub fn brute_force_map(kernel: &KernelMatrix, k: usize) -> Result<SubsetSelection> {
    let n = kernel.n();
    if k > n {
        return Err(Error::Parameter(format!("k = {k} exceeds N = {n}")));
    }
    if binomial(n, k) > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            n,
            k,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut best: Option<(Vec<usize>, LogDet)> = None;
    for_each_combination(n, k, |subset| {
        let ld = subset_log_det(kernel, subset);
        if best.as_ref().is_none_or(|(_, b)| ld.value > b.value) {
            best = Some((subset.to_vec(), ld));
        }
    });
    let (indices, ld) = best.expect("at least one subset exists when k <= n");
    Ok(SubsetSelection {
        indices,
        log_det: ld.value,
        degenerate: ld.degenerate,
    })
}

/// `e_k(λ_1, ..., λ_N)` by the one-pass recurrence
/// `e_j ← e_j + λ_n e_{j-1}`. Returns 0 when `k > N`.
pub fn elementary_symmetric(eigvals: &[f64], k: usize) -> f64 {
    if k > eigvals.len() {
        return 0.0;
    }
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for (n, &lambda) in eigvals.iter().enumerate() {
        for j in (1..=k.min(n + 1)).rev() {
            e[j] += lambda * e[j - 1];
        }
    }
    e[k]
}

/// `log P(S)` under the k-DPP with `k = |S|`.
pub fn kdpp_log_prob(kernel: &KernelMatrix, subset: &[usize]) -> Result<LogProb> {
    check_indices(kernel, subset)?;
    let k = subset.len();
    let eig = kernel.eigenvalues()?;
    let rank = numerical_rank(kernel, DEFAULT_RANK_TOL)?;
    if k > rank {
        return Err(Error::Rank { requested: k, rank });
    }
    let norm = elementary_symmetric(&eig, k);
    if norm.is_nan() || norm <= 0.0 {
        return Err(Error::Numeric(format!("k-DPP normaliser e_{k} is {norm}")));
    }
    let ld = subset_log_det(kernel, subset);
    Ok(LogProb {
        value: ld.value - norm.ln(),
        degenerate: ld.degenerate,
    })
}

/// `log P(S)` under the unconstrained L-ensemble DPP.
pub fn unconstrained_dpp_log_prob(kernel: &KernelMatrix, subset: &[usize]) -> Result<LogProb> {
    check_indices(kernel, subset)?;
    let n = kernel.n();
    let shifted = kernel.matrix() + nalgebra::DMatrix::<f64>::identity(n, n);
    let chol = nalgebra::Cholesky::new(shifted)
        .ok_or_else(|| Error::Numeric("I + L is not positive definite".into()))?;
    let log_norm: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let ld = subset_log_det(kernel, subset);
    Ok(LogProb {
        value: ld.value - log_norm,
        degenerate: ld.degenerate,
    })
}
