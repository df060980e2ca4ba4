/// Warm-up then inverse square-root decay:
/// `isize^-0.5 * min(step^-0.5, step * warm_step^-1.5)`.
pub fn noam_lr(step: u64, isize: usize, warm_step: u64) -> f64 {
    let s = step.max(1) as f64;
    let w = warm_step.max(1) as f64;
    (isize as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}
