//! Order-fixed summary statistics for Monte Carlo output.

/// Pairwise (cascade) summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample mean and unbiased sample variance (two-pass).
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    (m, pairwise_sum(&dev) / (xs.len() - 1) as f64)
}

/// Mean, variance and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let (mean, variance) = mean_var(xs);
    Summary {
        mean,
        variance,
        stderr: (variance / xs.len() as f64).sqrt(),
        n: xs.len(),
    }
}

/// Control-variate estimate of `E[y]` given samples of `x` with known mean
/// `x_mean`, using the sample regression coefficient.
pub fn control_variate(ys: &[f64], xs: &[f64], x_mean: f64) -> Summary {
    assert_eq!(ys.len(), xs.len());
    let (my, _) = mean_var(ys);
    let (mx, vx) = mean_var(xs);
    let cov: Vec<f64> = ys.iter().zip(xs).map(|(y, x)| (y - my) * (x - mx)).collect();
    let beta = if vx > 0.0 && xs.len() > 1 {
        pairwise_sum(&cov) / (xs.len() - 1) as f64 / vx
    } else {
        0.0
    };
    let adjusted: Vec<f64> = ys.iter().zip(xs).map(|(y, x)| y - beta * (x - x_mean)).collect();
    summarize(&adjusted)
}

/// Means of `n_batches` contiguous batches (the last absorbs the remainder).
pub fn batch_means(xs: &[f64], n_batches: usize) -> Vec<f64> {
    let n_batches = n_batches.clamp(1, xs.len().max(1));
    let size = xs.len() / n_batches;
    (0..n_batches)
        .map(|b| {
            let end = if b + 1 == n_batches { xs.len() } else { (b + 1) * size };
            mean(&xs[b * size..end])
        })
        .collect()
}

/// Batch sample variances, one per contiguous batch.
pub fn batch_variances(xs: &[f64], n_batches: usize) -> Vec<f64> {
    let n_batches = n_batches.clamp(1, xs.len().max(1));
    let size = xs.len() / n_batches;
    (0..n_batches)
        .map(|b| {
            let end = if b + 1 == n_batches { xs.len() } else { (b + 1) * size };
            mean_var(&xs[b * size..end]).1
        })
        .collect()
}
