//! Log-domain normalisation of the final layer's scores.

/// `log(sum(exp(x)))` with max subtraction.
pub fn log_sum_exp(x: &[f32]) -> f64 {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = x.iter().map(|&v| (v as f64 - max).exp()).sum();
    max + sum.ln()
}

pub fn log_softmax(x: &[f32]) -> Vec<f64> {
    let z = log_sum_exp(x);
    x.iter().map(|&v| v as f64 - z).collect()
}
