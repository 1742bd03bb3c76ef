/// Linear warmup from 0 to `peak` over `[0, warmup]`, then linear decay
/// to 0 at `total`. Steps outside `[0, total]` are clamped.
pub fn linear_schedule(step: usize, total: usize, warmup: usize, peak: f64) -> f64 {
    let step = step.min(total);
    if warmup > 0 && step <= warmup {
        return peak * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return 0.0;
    }
    peak * (total - step) as f64 / (total - warmup) as f64
}

/// Warmup length for a fractional warmup, kept inside `[1, total - 1]`.
pub fn warmup_steps(total: usize, fraction: f64) -> usize {
    let w = (total as f64 * fraction).round() as usize;
    w.clamp(1, total.saturating_sub(1).max(1))
}
