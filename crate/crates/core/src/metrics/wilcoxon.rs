//! Wilcoxon signed-rank test for paired samples, two-sided.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest number of non-zero differences evaluated with the exact null
/// distribution; above it the tie-corrected normal approximation is used.
pub const EXACT_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WilcoxonMethod {
    Exact,
    NormalApproximation,
    /// Every difference was zero.
    Degenerate,
}

impl WilcoxonMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            WilcoxonMethod::Exact => "exact",
            WilcoxonMethod::NormalApproximation => "normal",
            WilcoxonMethod::Degenerate => "degenerate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WilcoxonResult {
    /// min(T+, T-).
    pub statistic: f64,
    pub rank_sum_positive: f64,
    pub rank_sum_negative: f64,
    pub n_effective: usize,
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

/// Ranks of non-zero |d| with ties averaged. Ranks are stored doubled so
/// every value, including averages, is an exact integer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedRanks {
    pub doubled: Vec<u64>,
    pub positive: Vec<bool>,
    /// Sizes of tie groups of |d|.
    pub tie_groups: Vec<usize>,
}

impl SignedRanks {
    pub fn len(&self) -> usize {
        self.doubled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doubled.is_empty()
    }

    /// (T+, T-) in ordinary rank units.
    pub fn rank_sums(&self) -> (f64, f64) {
        let (mut pos, mut neg) = (0u64, 0u64);
        for (&r, &p) in self.doubled.iter().zip(&self.positive) {
            if p {
                pos += r;
            } else {
                neg += r;
            }
        }
        (pos as f64 / 2.0, neg as f64 / 2.0)
    }
}

pub fn signed_ranks(diffs: &[f64]) -> SignedRanks {
    let mut nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    nz.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let n = nz.len();
    let mut doubled = vec![0u64; n];
    let mut tie_groups = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[j + 1].abs() == nz[i].abs() {
            j += 1;
        }
        // 1-based positions i+1..=j+1 share rank (i+1 + j+1)/2.
        let r2 = (i + 1 + j + 1) as u64;
        doubled[i..=j].iter_mut().for_each(|r| *r = r2);
        tie_groups.push(j - i + 1);
        i = j + 1;
    }
    SignedRanks {
        doubled,
        positive: nz.iter().map(|&d| d > 0.0).collect(),
        tie_groups,
    }
}

/// Exact two-sided p-value: the fraction of the 2^n sign assignments whose
/// positive rank sum is at most W or at least S - W.
pub fn exact_p_value(ranks: &SignedRanks, statistic: f64) -> f64 {
    let n = ranks.len();
    if n == 0 {
        return 1.0;
    }
    let total: u64 = ranks.doubled.iter().sum();
    // counts[s] = number of subsets whose doubled rank sum is s
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in &ranks.doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w2 = (2.0 * statistic).round() as u64;
    let upper = total.saturating_sub(w2);
    let extreme: f64 = counts
        .iter()
        .enumerate()
        .filter(|&(s, _)| (s as u64) <= w2 || (s as u64) >= upper)
        .map(|(_, c)| c)
        .sum();
    (extreme / 2f64.powi(n as i32)).min(1.0)
}

/// Two-sided normal approximation with tie and continuity corrections.
pub fn normal_p_value(ranks: &SignedRanks, statistic: f64) -> f64 {
    let n = ranks.len() as f64;
    if ranks.is_empty() {
        return 1.0;
    }
    let mean = n * (n + 1.0) / 4.0;
    let ties: f64 = ranks
        .tie_groups
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Paired two-sided test on `a[i] - b[i]`. Zero differences are dropped
/// before ranking.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::data(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if let Some(i) = a.iter().chain(b).position(|v| !v.is_finite()) {
        return Err(Error::data(format!(
            "non-finite sample value at position {}",
            i % a.len().max(1)
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let ranks = signed_ranks(&diffs);
    let (pos, neg) = ranks.rank_sums();
    let statistic = pos.min(neg);
    let (p_value, method) = match ranks.len() {
        0 => (1.0, WilcoxonMethod::Degenerate),
        n if n <= EXACT_LIMIT => (exact_p_value(&ranks, statistic), WilcoxonMethod::Exact),
        _ => (normal_p_value(&ranks, statistic), WilcoxonMethod::NormalApproximation),
    };
    Ok(WilcoxonResult {
        statistic,
        rank_sum_positive: pos,
        rank_sum_negative: neg,
        n_effective: ranks.len(),
        p_value,
        method,
    })
}
