//! Two-sided Wilcoxon signed-rank test for paired samples.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::RankingError;

/// Largest number of non-zero differences the exact null distribution is
/// built for.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMode {
    Exact,
    NormalApprox,
    /// Exact up to [`EXACT_MAX_N`] differences, normal approximation beyond.
    #[default]
    Auto,
}

impl std::str::FromStr for WilcoxonMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "normal_approx" | "normal-approx" | "normal" => Ok(Self::NormalApprox),
            "auto" => Ok(Self::Auto),
            other => Err(format!("unknown wilcoxon mode `{other}` (exact, normal_approx, auto)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub p_value: f64,
    /// Exact or normal approximation, never `Auto`.
    pub mode: WilcoxonMode,
}

/// Zero differences are dropped and tied `|d|` get average ranks.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], mode: WilcoxonMode) -> Result<WilcoxonResult, RankingError> {
    if x.len() != y.len() {
        return Err(RankingError::InvalidArgument(format!(
            "paired samples differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if let Some(i) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(RankingError::NonFinite(i % x.len().max(1)));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Err(RankingError::Degenerate);
    }

    // Doubled average ranks are integers, which keeps the exact
    // distribution in integer arithmetic.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diffs[a].abs().total_cmp(&diffs[b].abs()));
    let mut doubled = vec![0u64; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1; doubled average is i+j+2
        for &k in &order[i..=j] {
            doubled[k] = (i + j + 2) as u64;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let w_plus2: u64 = (0..n).filter(|&k| diffs[k] > 0.0).map(|k| doubled[k]).sum();
    let total2: u64 = doubled.iter().sum();
    let w2 = w_plus2.min(total2 - w_plus2);

    let resolved = match mode {
        WilcoxonMode::Auto if n <= EXACT_MAX_N => WilcoxonMode::Exact,
        WilcoxonMode::Auto => WilcoxonMode::NormalApprox,
        m => m,
    };
    let p_value = match resolved {
        WilcoxonMode::Exact => {
            if n > EXACT_MAX_N {
                return Err(RankingError::InvalidArgument(format!(
                    "exact mode supports at most {EXACT_MAX_N} non-zero differences, got {n}"
                )));
            }
            exact_two_sided_p(&doubled, w2)
        }
        _ => {
            let nf = n as f64;
            let mean = nf * (nf + 1.0) / 4.0;
            let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
            let w = w2 as f64 / 2.0;
            // continuity correction toward the mean; w <= mean always
            let z = ((w - mean + 0.5).min(0.0)) / var.sqrt();
            erfc(-z / std::f64::consts::SQRT_2).min(1.0)
        }
    };
    Ok(WilcoxonResult {
        statistic: w2 as f64 / 2.0,
        n,
        p_value,
        mode: resolved,
    })
}

/// Probability over all `2^n` sign assignments that `min(W+, W-)` is at most
/// the observed value, with ranks and statistic given doubled.
pub fn exact_two_sided_p(doubled_ranks: &[u64], observed_doubled: u64) -> f64 {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let hits: f64 = counts
        .iter()
        .enumerate()
        .filter(|&(s, _)| {
            let s = s as u64;
            s.min(total - s) <= observed_doubled
        })
        .map(|(_, c)| c)
        .sum();
    hits / 2f64.powi(doubled_ranks.len() as i32)
}
