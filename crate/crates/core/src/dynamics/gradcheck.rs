/// A scalar function with an analytic gradient.
pub trait Differentiable {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Denominator floor for relative errors of near-zero gradient entries.
pub const REL_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient at `point` with central differences for
/// every coordinate. Relative error is `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn gradient_check<F: Differentiable + ?Sized>(f: &F, point: &[f64], eps: f64) -> GradCheck {
    let analytic = f.gradient(point);
    let mut x = point.to_vec();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..f.dim() {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f.value(&x);
        x[i] = orig - eps;
        let down = f.value(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > worst.max_rel_error || rel.is_nan() {
            worst = GradCheck {
                max_rel_error: rel,
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    worst
}
