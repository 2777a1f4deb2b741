//! Binary cross-entropy on probabilities.

pub const PROB_CLIP: f64 = 1e-12;

fn clip(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// `-[y ln p + (1-y) ln(1-p)]` with `p` clipped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(p: f64, label: u8) -> f64 {
    let p = clip(p);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `d bce / d p`, evaluated at the clipped probability.
pub fn bce_grad(p: f64, label: u8) -> f64 {
    let p = clip(p);
    if label == 1 {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

/// Batch mean.
pub fn bce_mean(probs: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce_loss(p, y))
        .sum();
    total / probs.len() as f64
}
