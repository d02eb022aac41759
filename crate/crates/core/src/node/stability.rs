//! Stability verdicts from a queue-length trace.
//!
//! The post-warmup trace is split into equal windows. A least-squares slope
//! of the window means (converted to bits per slot) larger than
//! `theta * E[X]` means the queue grows at a rate that cannot be transient;
//! a flat trend whose last window agrees with the overall mean is stable;
//! anything else is inconclusive.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Inconclusive => "inconclusive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stable" => Some(Verdict::Stable),
            "unstable" => Some(Verdict::Unstable),
            "inconclusive" => Some(Verdict::Inconclusive),
            _ => None,
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityParams {
    /// Growth threshold as a fraction of the arrival rate.
    pub theta: f64,
    /// Allowed relative gap between the last window and the overall mean.
    pub last_window_tol: f64,
    pub windows: usize,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self {
            theta: 0.01,
            last_window_tol: 0.2,
            windows: 5,
        }
    }
}

/// Least-squares slope of `ys` against `0, 1, 2, ...`.
pub fn ls_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let xbar = (n - 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xbar;
        sxy += dx * (y - ybar);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Verdict from per-window means of `q`, each over `window_len` slots.
pub fn detect_stability(
    window_means: &[f64],
    window_len: usize,
    mean_arrival: f64,
    params: &StabilityParams,
) -> Verdict {
    if window_means.len() < 4 || window_len == 0 {
        return Verdict::Inconclusive;
    }
    let growth = ls_slope(window_means) / window_len as f64;
    let limit = params.theta * mean_arrival;
    if growth > limit {
        return Verdict::Unstable;
    }
    let overall = window_means.iter().sum::<f64>() / window_means.len() as f64;
    let last = window_means[window_means.len() - 1];
    let close = (last - overall).abs() <= params.last_window_tol * overall.abs()
        || (last - overall).abs() <= 1e-12;
    if growth.abs() <= limit && close {
        Verdict::Stable
    } else {
        Verdict::Inconclusive
    }
}

/// Splits a trace into `windows` equal chunks (dropping the remainder at the
/// front) and applies [`detect_stability`].
pub fn detect_stability_trace(q: &[f64], mean_arrival: f64, params: &StabilityParams) -> Verdict {
    let w = params.windows.max(1);
    let len = q.len() / w;
    if len == 0 || w < 4 {
        return Verdict::Inconclusive;
    }
    let skip = q.len() - len * w;
    let means: Vec<f64> = q[skip..]
        .chunks(len)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    detect_stability(&means, len, mean_arrival, params)
}
