//! Test-side oracles that recompute quantities without the library's fast paths.

use dprc::linalg::Mat;
use dprc::numerics::{std_normal_cdf, SeededStream};
use dprc::trainer::{noise_stream, Sample, ToyModel};

/// Closed-form δ(ε) of one Gaussian mechanism with noise multiplier σ and unit sensitivity.
pub fn gaussian_delta(sigma: f64, eps: f64) -> f64 {
    std_normal_cdf(0.5 / sigma - eps * sigma) - eps.exp() * std_normal_cdf(-0.5 / sigma - eps * sigma)
}

/// Root of `gaussian_delta(sigma, ·) = delta` by plain bisection.
pub fn gaussian_eps(sigma: f64, delta: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 64.0_f64);
    if gaussian_delta(sigma, 0.0) <= delta {
        return 0.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gaussian_delta(sigma, mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Uniform point on the simplex: normalized unit exponentials.
pub fn dirichlet_ones(d: usize, st: &mut SeededStream) -> Vec<f64> {
    let e: Vec<f64> = (0..d).map(|_| st.exponential()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Sorted draws of Σᵢ λᵢ χ²(k)/k, each χ² built from k squared Gaussians.
pub fn mixture_draws(lambda: &[f64], k: u32, n: usize, st: &mut SeededStream) -> Vec<f64> {
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            lambda
                .iter()
                .map(|l| l * (0..k).map(|_| st.gaussian().powi(2)).sum::<f64>() / k as f64)
                .sum()
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Fraction of sorted draws ≤ x.
pub fn ecdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

/// Per-sample gradient of every layer by explicit token loops.
pub fn naive_sample_grad(model: &ToyModel, s: &Sample) -> Vec<Mat> {
    let t_len = s.y.len();
    let mut grads: Vec<Mat> = model.layers.iter().map(|w| Mat::zeros(w.rows(), w.cols())).collect();
    for t in 0..t_len {
        let mut acts = vec![s.x.row(t).to_vec()];
        for w in &model.layers {
            let h = acts.last().unwrap();
            let next = (0..w.cols()).map(|j| (0..w.rows()).map(|i| h[i] * w.get(i, j)).sum()).collect();
            acts.push(next);
        }
        let mut back = vec![2.0 * (acts[model.layers.len()][0] - s.y[t]) / t_len as f64];
        for l in (0..model.layers.len()).rev() {
            let w = &model.layers[l];
            for i in 0..w.rows() {
                for j in 0..w.cols() {
                    let g = grads[l].get(i, j) + acts[l][i] * back[j];
                    grads[l].set(i, j, g);
                }
            }
            back = (0..w.rows()).map(|i| (0..w.cols()).map(|j| w.get(i, j) * back[j]).sum()).collect();
        }
    }
    grads
}

/// Naive DP-SGD: materialize, clip by exact norm, sum, add σC noise from the shared stream.
pub fn naive_dp_step(model: &ToyModel, batch: &[Sample], clip: f64, sigma: f64, seed: u64, step: u64) -> Vec<Mat> {
    let mut total: Vec<Mat> = model.layers.iter().map(|w| Mat::zeros(w.rows(), w.cols())).collect();
    for s in batch {
        let g = naive_sample_grad(model, s);
        let norm: f64 = g.iter().flat_map(|m| m.data()).map(|v| v * v).sum::<f64>().sqrt();
        let c = if norm > 0.0 { (clip / norm).min(1.0) } else { 1.0 };
        for (acc, gl) in total.iter_mut().zip(&g) {
            acc.axpy(c, gl).unwrap();
        }
    }
    if sigma > 0.0 {
        let mut ns = noise_stream(seed, step);
        for acc in total.iter_mut() {
            for v in acc.data_mut() {
                *v += sigma * clip * ns.gaussian();
            }
        }
    }
    total
}
