//! Reliability arithmetic and the statistics quoted in evaluation reports.

#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Probability that all `n` independent screws succeed: `pⁿ`.
pub fn batch_success(p: f64, n: u32) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    p.powi(n as i32)
}

/// Per-screw success rate needed for a batch of `n` to succeed with
/// probability `target`: `target^(1/n)`. Zero screws need nothing.
pub fn required_unit_rate(target: f64, n: u32) -> f64 {
    debug_assert!(target > 0.0 && target <= 1.0);
    if n == 0 {
        return 0.0;
    }
    target.powf(1.0 / f64::from(n))
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k)
        .map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum()
}

/// `P(X ≤ k)` for `X ~ Binomial(n, p)`.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> f64 {
    if k >= n || p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let s: f64 = (0..=k)
        .map(|i| (ln_choose(n, i) + i as f64 * lp + (n - i) as f64 * lq).exp())
        .sum();
    s.min(1.0)
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f increasing in p on [lo, hi]
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Exact (Clopper–Pearson) two-sided interval for a binomial proportion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinomialInterval {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub confidence: f64,
}

pub fn clopper_pearson(successes: u64, trials: u64, confidence: f64) -> BinomialInterval {
    assert!(successes <= trials, "more successes than trials");
    let alpha = 1.0 - confidence;
    let (x, n) = (successes, trials);
    let lower = if x == 0 {
        0.0
    } else {
        bisect(0.0, 1.0, |p| {
            (1.0 - binomial_cdf(x - 1, n, p)) - alpha / 2.0
        })
    };
    let upper = if x == n {
        1.0
    } else {
        bisect(0.0, 1.0, |p| alpha / 2.0 - binomial_cdf(x, n, p))
    };
    let estimate = if n == 0 { 1.0 } else { x as f64 / n as f64 };
    BinomialInterval {
        successes: x,
        trials: n,
        estimate,
        lower,
        upper,
        confidence,
    }
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let pos = (q.clamp(0.0, 100.0) / 100.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let t = pos - i as f64;
    Some(if i + 1 < v.len() {
        v[i] + t * (v[i + 1] - v[i])
    } else {
        v[i]
    })
}

/// Max, RMS and the usual percentiles of a set of non-negative errors.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub max: f64,
    pub mean: f64,
    pub rms: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

impl ErrorSummary {
    pub fn of(errors: &[f64]) -> Self {
        if errors.is_empty() {
            return Self::default();
        }
        let n = errors.len() as f64;
        let pct = |q| percentile(errors, q).unwrap_or(0.0);
        Self {
            count: errors.len(),
            max: errors.iter().copied().fold(0.0, f64::max),
            mean: errors.iter().sum::<f64>() / n,
            rms: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
            p50: pct(50.0),
            p95: pct(95.0),
            p99: pct(99.0),
        }
    }
}

/// Detection counts against ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
}

/// A ratio that may be 0/0; the undefined case is reported as 1.0 and flagged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub undefined: bool,
}

impl Ratio {
    fn of(num: u64, den: u64) -> Self {
        if den == 0 {
            Self {
                value: 1.0,
                undefined: true,
            }
        } else {
            Self {
                value: num as f64 / den as f64,
                undefined: false,
            }
        }
    }
}

impl EvalCounts {
    pub fn recall(&self) -> Ratio {
        Ratio::of(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> Ratio {
        Ratio::of(self.tp, self.tp + self.fp)
    }

    pub fn merge(self, other: EvalCounts) -> EvalCounts {
        EvalCounts {
            tp: self.tp + other.tp,
            fn_: self.fn_ + other.fn_,
            fp: self.fp + other.fp,
        }
    }

    /// 95% exact interval on recall.
    pub fn recall_interval(&self) -> BinomialInterval {
        clopper_pearson(self.tp, self.tp + self.fn_, 0.95)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_success_values() {
        assert!((batch_success(0.95, 20) - 0.358486).abs() < 1e-6);
        assert_eq!(batch_success(1.0, 20), 1.0);
        assert!((batch_success(0.995, 20) - 0.9046).abs() < 5e-4);
        assert_eq!(batch_success(0.3, 0), 1.0);
    }

    #[test]
    fn required_rate_values() {
        assert!((required_unit_rate(0.90, 20) - 0.99475).abs() < 1e-5);
        assert_eq!(required_unit_rate(1.0, 20), 1.0);
        for &t in &[0.5, 0.9, 0.99, 0.123] {
            assert!((batch_success(required_unit_rate(t, 20), 20) - t).abs() <= 1e-12);
        }
    }

    #[test]
    fn binomial_cdf_small_case() {
        // n = 3, p = 0.5: P(X <= 1) = 4/8
        assert!((binomial_cdf(1, 3, 0.5) - 0.5).abs() < 1e-14);
        assert_eq!(binomial_cdf(3, 3, 0.2), 1.0);
    }

    #[test]
    fn clopper_pearson_edges() {
        // All successes: lower bound solves p^n = alpha / 2.
        let ci = clopper_pearson(1000, 1000, 0.95);
        assert!((ci.lower - 0.025f64.powf(1.0 / 1000.0)).abs() < 1e-9);
        assert_eq!(ci.upper, 1.0);
        let ci = clopper_pearson(0, 50, 0.95);
        assert_eq!(ci.lower, 0.0);
        assert!((ci.upper - (1.0 - 0.025f64.powf(1.0 / 50.0))).abs() < 1e-9);
    }

    #[test]
    fn clopper_pearson_reference_value() {
        // 7 of 20 at 95%: textbook interval (0.1539, 0.5922).
        let ci = clopper_pearson(7, 20, 0.95);
        assert!(
            (ci.lower - 0.1539).abs() < 1e-4 && (ci.upper - 0.5922).abs() < 1e-4,
            "{ci:?}"
        );
    }

    #[test]
    fn ratios_and_identities() {
        let c = EvalCounts {
            tp: 3064,
            fn_: 6,
            fp: 0,
        };
        assert!((c.recall().value - 3064.0 / 3070.0).abs() < 1e-15);
        assert_eq!(c.precision().value, 1.0);
        assert!(!c.precision().undefined);
        let z = EvalCounts::default();
        assert!(z.recall().undefined && z.recall().value == 1.0);
    }

    #[test]
    fn percentiles() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&v, 50.0), Some(3.0));
        assert_eq!(percentile(&v, 100.0), Some(5.0));
        assert_eq!(percentile(&v, 25.0), Some(2.0));
        assert_eq!(percentile(&v, 95.0), Some(4.8));
        assert_eq!(percentile(&[], 50.0), None);
        let s = ErrorSummary::of(&[3.0, 4.0]);
        assert_eq!(s.max, 4.0);
        assert!((s.rms - 12.5f64.sqrt()).abs() < 1e-15);
    }
}
