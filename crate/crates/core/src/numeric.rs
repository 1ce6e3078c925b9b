//! Small numerically careful scalar and vector helpers.

/// Softmax with max-subtraction. An empty input yields an empty output.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Gradient of a loss w.r.t. softmax logits given its gradient w.r.t. the
/// probabilities: `p_i (g_i - Σ_j p_j g_j)`.
pub fn softmax_backward(probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(upstream).map(|(p, g)| p * g).sum();
    probs.iter().zip(upstream).map(|(p, g)| p * (g - dot)).collect()
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
