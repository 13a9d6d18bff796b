//! Success-rate statistics: Wilson intervals, rank correlation and the
//! one-sided binomial non-inferiority check.

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::error::EvalError;

/// Successes over trials.
pub fn success_rate(successes: usize, trials: usize) -> Result<f64, EvalError> {
    check_counts(successes, trials)?;
    Ok(successes as f64 / trials as f64)
}

fn check_counts(successes: usize, trials: usize) -> Result<(), EvalError> {
    if trials == 0 {
        return Err(EvalError::NoTrials);
    }
    if successes > trials {
        return Err(EvalError::Counts { successes, trials });
    }
    Ok(())
}

/// Two-sided Wilson score interval at confidence `level`.
pub fn confidence_interval(successes: usize, trials: usize, level: f64) -> Result<(f64, f64), EvalError> {
    check_counts(successes, trials)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(EvalError::Config(format!("confidence level {level}")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let center = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

/// Ranks with ties sharing their average rank (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
///
/// Identical rankings give 1.0 even when every value ties; otherwise a
/// ranking without spread has no defined correlation and yields `None`.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    if ra == rb {
        return Some(1.0);
    }
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NonInferiority {
    /// `P(X <= k_candidate)` for `X ~ Binomial(n_candidate, p_reference)`.
    pub p_value: f64,
    pub alpha: f64,
    pub non_inferior: bool,
}

/// One-sided exact binomial test of the candidate's success count against
/// the reference rate. The candidate is non-inferior unless its count is
/// significantly low at level `alpha`.
pub fn non_inferiority(
    reference: (usize, usize),
    candidate: (usize, usize),
    alpha: f64,
) -> Result<NonInferiority, EvalError> {
    let p_ref = success_rate(reference.0, reference.1)?;
    check_counts(candidate.0, candidate.1)?;
    let binom = Binomial::new(p_ref, candidate.1 as u64).map_err(|e| EvalError::Config(e.to_string()))?;
    let p_value = binom.cdf(candidate.0 as u64);
    Ok(NonInferiority {
        p_value,
        alpha,
        non_inferior: p_value > alpha,
    })
}
