//! Delay-variation metric.

/// Mean absolute difference of consecutive delays; `None` with fewer than
/// two packets.
pub fn compute_jitter(delays: &[f64]) -> Option<f64> {
    if delays.len() < 2 {
        return None;
    }
    let total: f64 = delays.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Some(total / (delays.len() - 1) as f64)
}

pub(crate) fn compute_jitter_sum(abs_diff_sum: u64, diffs: u64) -> f64 {
    abs_diff_sum as f64 / diffs as f64
}
