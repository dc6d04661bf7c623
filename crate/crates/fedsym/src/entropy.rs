//! Entropy-balance metric, discrete Gaussian machinery, and the sigma solver
//! that turns a target entropy balance into a concrete class-count vector.

use serde::{Deserialize, Serialize};

use crate::error::EntropyError;

/// Per-class sample counts for one client shard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(pub Vec<u64>);

impl ClassCounts {
    pub fn new(counts: Vec<u64>) -> Self {
        ClassCounts(counts)
    }

    /// Number of classes.
    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }
}

/// A discrete Gaussian over the class indices `0..l-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpec {
    pub mu: f64,
    pub sigma: f64,
    pub l: usize,
}

impl GaussianSpec {
    pub fn new(mu: f64, sigma: f64, l: usize) -> Result<Self, EntropyError> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(EntropyError::InvalidSigma(sigma));
        }
        if l < 2 {
            return Err(EntropyError::TooFewClasses(l));
        }
        Ok(GaussianSpec { mu, sigma, l })
    }
}

/// Outcome of [`solve_sigma`]: the accepted sigma and the realized counts.
#[derive(Debug, Clone)]
pub struct SolverResult {
    pub sigma: f64,
    pub counts: ClassCounts,
    pub achieved_beta: f64,
    pub iterations: u32,
}

/// Shannon entropy of the count proportions, in bits.
///
/// Zero-count classes contribute nothing (the `0 * log 0 = 0` convention).
/// The sum is accumulated in natural-log space and converted to bits once,
/// which keeps near-uniform inputs away from catastrophic cancellation.
pub fn shannon_entropy(counts: &ClassCounts) -> Result<f64, EntropyError> {
    let total = counts.total();
    if total == 0 {
        return Err(EntropyError::InvalidDistribution);
    }
    let total = total as f64;
    // H = ln(S) - (1/S) * sum c_i ln c_i, in nats. Summation runs over a
    // sorted copy: a canonical accumulation order makes the result bitwise
    // invariant under permutation of the counts.
    let mut sorted: Vec<u64> = counts.as_slice().iter().copied().filter(|&c| c > 0).collect();
    sorted.sort_unstable();
    let sum_c_ln_c: f64 = sorted
        .iter()
        .map(|&c| {
            let c = c as f64;
            c * c.ln()
        })
        .sum();
    let nats = total.ln() - sum_c_ln_c / total;
    Ok((nats / std::f64::consts::LN_2).max(0.0))
}

/// Entropy balance: Shannon entropy normalized by `log2(l)`, in `[0, 1]`.
///
/// 1.0 means a perfectly uniform class distribution, 0.0 a single class.
pub fn entropy_balance(counts: &ClassCounts) -> Result<f64, EntropyError> {
    let l = counts.num_classes();
    if l < 2 {
        return Err(EntropyError::TooFewClasses(l));
    }
    let h = shannon_entropy(counts)?;
    Ok((h / (l as f64).log2()).min(1.0))
}

/// Entropy balance of an already-normalized probability vector.
///
/// Used for diagnostics on the continuous PMF; the solver itself always
/// scores the rounded integer counts.
pub fn entropy_balance_probs(probs: &[f64]) -> Result<f64, EntropyError> {
    let l = probs.len();
    if l < 2 {
        return Err(EntropyError::TooFewClasses(l));
    }
    let nats: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    Ok(nats / (l as f64).ln())
}

/// Truncated discrete-Gaussian PMF over `0..l-1`.
///
/// `p(i) = exp(-((i - mu)/sigma)^2 / 2) / gamma_hat`, with `gamma_hat` the
/// sum over the support. Exponents are shifted by their maximum before
/// exponentiation so tiny sigmas do not underflow the whole vector.
pub fn discrete_gaussian_pmf(spec: &GaussianSpec) -> Vec<f64> {
    let exps: Vec<f64> = (0..spec.l)
        .map(|i| {
            let z = (i as f64 - spec.mu) / spec.sigma;
            -0.5 * z * z
        })
        .collect();
    let max = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = exps.iter().map(|&e| (e - max).exp()).collect();
    let norm: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / norm).collect()
}

/// Lower bound on the sigma that can realize entropy balance `beta` over
/// `l` classes: `sqrt(l^(2 beta) / (2 pi e))`.
pub fn sigma_lower_bound(beta: f64, l: usize) -> f64 {
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    ((l as f64).powf(2.0 * beta) / two_pi_e).sqrt()
}

/// Integerize a PMF into counts summing to exactly `total` using the
/// largest-remainder method. Remainder ties go to the lowest class index.
pub fn counts_from_pmf(pmf: &[f64], total: u64) -> ClassCounts {
    let mut counts: Vec<u64> = Vec::with_capacity(pmf.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(pmf.len());
    let mut assigned: u64 = 0;
    for (i, &p) in pmf.iter().enumerate() {
        let exact = p * total as f64;
        let floor = exact.floor().min(total as f64) as u64;
        counts.push(floor);
        assigned += floor;
        remainders.push((i, exact - floor as f64));
    }
    let mut residual = total.saturating_sub(assigned);
    // Largest remainder first; ties resolved by lowest index via the stable
    // sort on a descending key.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut slot = 0;
    while residual > 0 {
        counts[remainders[slot % remainders.len()].0] += 1;
        residual -= 1;
        slot += 1;
    }
    ClassCounts(counts)
}

/// The class-index mean the solver uses: the integer nearest the center of
/// the support, rounded down. Anchoring the mean on an actual class keeps
/// the low-entropy limit reachable for even `l` (a half-integer mean splits
/// its mass over two classes and can never drop below one bit).
fn solver_mu(l: usize) -> f64 {
    ((l - 1) / 2) as f64
}

const SIGMA_MIN: f64 = 1e-4;
const SIGMA_MAX: f64 = 1e6;
const NEWTON_BUDGET: u32 = 20;

/// Find a sigma whose rounded discrete-Gaussian counts hit the target
/// entropy balance within `eps`.
///
/// Newton steps on the closed-form tangent `t = 1/(ln(l) * sigma)` run
/// first; if they oscillate (integer rounding quantizes the achieved
/// balance) the solver falls back to bisection over a monotone bracket.
pub fn solve_sigma(
    beta: f64,
    l: usize,
    total: u64,
    eps: f64,
    max_iter: u32,
) -> Result<SolverResult, EntropyError> {
    if l < 2 {
        return Err(EntropyError::TooFewClasses(l));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(EntropyError::BetaOutOfRange(beta));
    }
    if total == 0 || eps <= 0.0 {
        return Err(EntropyError::InvalidDistribution);
    }

    // With `total` samples at most min(total, l) classes can be non-empty,
    // which caps the achievable balance below the target for tiny totals.
    let max_beta = (total.min(l as u64) as f64).log2() / (l as f64).log2();
    if beta > max_beta + eps {
        return Err(EntropyError::InfeasibleTarget {
            beta,
            max_achievable: max_beta,
        });
    }

    // Degenerate targets: the sigma limits 0 and infinity are not reachable
    // by iteration, so both ends are constructed directly.
    if beta >= 1.0 {
        let uniform = vec![1.0 / l as f64; l];
        let counts = counts_from_pmf(&uniform, total);
        let achieved = entropy_balance(&counts)?;
        let achieved = if total.is_multiple_of(l as u64) { 1.0 } else { achieved };
        return Ok(SolverResult {
            sigma: SIGMA_MAX,
            counts,
            achieved_beta: achieved,
            iterations: 0,
        });
    }
    if beta <= 0.0 {
        let mut raw = vec![0u64; l];
        raw[(l - 1) / 2] = total;
        return Ok(SolverResult {
            sigma: sigma_lower_bound(0.0, l),
            counts: ClassCounts(raw),
            achieved_beta: 0.0,
            iterations: 0,
        });
    }

    let mu = solver_mu(l);
    let ln_l = (l as f64).ln();
    let eval = |sigma: f64| -> (ClassCounts, f64) {
        let pmf = discrete_gaussian_pmf(&GaussianSpec { mu, sigma, l });
        let counts = counts_from_pmf(&pmf, total);
        let b = entropy_balance(&counts).expect("non-empty counts");
        (counts, b)
    };

    let mut sigma = sigma_lower_bound(beta, l).clamp(SIGMA_MIN, SIGMA_MAX);
    let mut best: Option<SolverResult> = None;
    let mut iterations = 0u32;

    let record = |sigma: f64, counts: ClassCounts, b: f64, it: u32, best: &mut Option<SolverResult>| {
        let err = (b - beta).abs();
        if best.as_ref().is_none_or(|r| (r.achieved_beta - beta).abs() > err) {
            *best = Some(SolverResult {
                sigma,
                counts,
                achieved_beta: b,
                iterations: it,
            });
        }
    };

    // Integer rounding inflates the entropy of the realized counts (the
    // largest-remainder residual seeds tail classes), so the accepted sigma
    // is floored at the closed-form bound implied by the achieved balance.
    let finish = |r: SolverResult| SolverResult {
        sigma: r.sigma.max(sigma_lower_bound(r.achieved_beta, l)),
        ..r
    };

    let mut converged = false;

    // Newton phase.
    while iterations < NEWTON_BUDGET.min(max_iter) {
        iterations += 1;
        let (counts, b) = eval(sigma);
        record(sigma, counts, b, iterations, &mut best);
        if (b - beta).abs() < eps {
            converged = true;
            break;
        }
        let tangent = 1.0 / (ln_l * sigma);
        sigma = (sigma + (beta - b) / tangent).clamp(SIGMA_MIN, SIGMA_MAX);
    }

    if !converged {
        // Bisection fallback on the monotone beta(sigma) curve. Establish a
        // bracket [lo, hi] with beta(lo) <= target <= beta(hi).
        let mut lo = sigma;
        let mut hi = sigma;
        while iterations < max_iter {
            iterations += 1;
            let (counts, b) = eval(lo);
            record(lo, counts, b, iterations, &mut best);
            if (b - beta).abs() < eps {
                converged = true;
                break;
            }
            if b <= beta || lo <= SIGMA_MIN {
                break;
            }
            lo = (lo * 0.5).max(SIGMA_MIN);
        }
        while !converged && iterations < max_iter {
            iterations += 1;
            let (counts, b) = eval(hi);
            record(hi, counts, b, iterations, &mut best);
            if (b - beta).abs() < eps {
                converged = true;
                break;
            }
            if b >= beta || hi >= SIGMA_MAX {
                break;
            }
            hi = (hi * 2.0).min(SIGMA_MAX);
        }
        while !converged && iterations < max_iter && hi - lo > f64::EPSILON * hi.max(1.0) {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            let (counts, b) = eval(mid);
            record(mid, counts, b, iterations, &mut best);
            if (b - beta).abs() < eps {
                converged = true;
                break;
            }
            if b < beta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }

    let mut result = best.expect("at least one sigma evaluated");
    if converged {
        return Ok(finish(result));
    }

    // The sigma family alone quantizes the achievable balance; close the
    // residual gap by greedy single-sample moves between classes.
    if refine_counts(&mut result.counts, beta, eps) {
        result.achieved_beta = entropy_balance(&result.counts)?;
        result.iterations = iterations;
        return Ok(finish(result));
    }

    Err(EntropyError::NoConvergence(Box::new(result)))
}

/// Greedily move single samples between classes to pull the entropy
/// balance within `eps` of the target. Returns true on success. The scan
/// order is fixed, so the outcome is deterministic.
fn refine_counts(counts: &mut ClassCounts, beta: f64, eps: f64) -> bool {
    let l = counts.num_classes();
    let total = counts.total() as f64;
    let ln_l = (l as f64).ln();
    let term = |c: u64| {
        if c == 0 {
            0.0
        } else {
            let c = c as f64;
            c * c.ln()
        }
    };
    let mut scl: f64 = counts.as_slice().iter().map(|&c| term(c)).sum();
    let balance = |scl: f64| ((total.ln() - scl / total) / ln_l).max(0.0);

    let mut err = (balance(scl) - beta).abs();
    let budget = 4 * counts.total();
    for _ in 0..budget {
        if err < eps {
            return true;
        }
        let mut best_move: Option<(usize, usize, f64, f64)> = None;
        for a in 0..l {
            let ca = counts.as_slice()[a];
            if ca == 0 {
                continue;
            }
            for b in 0..l {
                if a == b {
                    continue;
                }
                let cb = counts.as_slice()[b];
                let new_scl = scl - term(ca) - term(cb) + term(ca - 1) + term(cb + 1);
                let new_err = (balance(new_scl) - beta).abs();
                if best_move.as_ref().is_none_or(|m| m.3 > new_err) {
                    best_move = Some((a, b, new_scl, new_err));
                }
            }
        }
        match best_move {
            Some((a, b, new_scl, new_err)) if new_err < err => {
                counts.0[a] -= 1;
                counts.0[b] += 1;
                scl = new_scl;
                err = new_err;
            }
            _ => break,
        }
    }
    err < eps
}
