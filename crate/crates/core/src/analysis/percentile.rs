use super::AnalysisError;

/// Nearest-rank percentile: the sorted sample at 1-based rank `ceil(p/100 * n)`.
///
/// `p` is clamped to `[0, 100]`; `p = 0` yields the minimum.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

/// Same as [`percentile`] over an already ascending, nonempty slice.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    sorted[nearest_rank(p, sorted.len()) - 1]
}

/// 1-based rank for percentile `p` over `n` samples.
pub fn nearest_rank(p: f64, n: usize) -> usize {
    let p = p.clamp(0.0, 100.0);
    let exact = p * n as f64 / 100.0;
    // p * n is exact for integral p and realistic n; only snap values that
    // are an integer up to float noise.
    let rank = if (exact - exact.round()).abs() < 1e-9 {
        exact.round()
    } else {
        exact.ceil()
    };
    (rank as usize).clamp(1, n)
}

/// Five-number summary plus mean, all ranks nearest-rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Result<Self, AnalysisError> {
        if samples.is_empty() {
            return Err(AnalysisError::EmptyInput);
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let min = sorted[0];
        let max = sorted[n - 1];
        let mean = (sorted.iter().sum::<f64>() / n as f64).clamp(min, max);
        Ok(Self {
            n,
            min,
            q1: percentile_sorted(&sorted, 25.0),
            median: percentile_sorted(&sorted, 50.0),
            q3: percentile_sorted(&sorted, 75.0),
            max,
            mean,
        })
    }

    /// The four quartiles; the last one is the maximum.
    pub fn quartiles(&self) -> [f64; 4] {
        [self.q1, self.median, self.q3, self.max]
    }
}
