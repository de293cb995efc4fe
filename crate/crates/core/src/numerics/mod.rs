//! Special functions, quadrature rules and deterministic random streams.

mod quadrature;
mod rng;
mod special;

pub use quadrature::GaussLegendre;
pub use rng::SeededStream;
pub use special::{
    chi2_cdf, chi2_sf, gamma_log_pdf, log_gamma, reg_lower_gamma, reg_upper_gamma, std_normal_cdf,
    std_normal_sf,
};

/// Draw `count` i.i.d. samples from `N(mean, stddev^2)` off `stream`.
pub fn sample_gaussian(stream: &mut SeededStream, mean: f64, stddev: f64, count: usize) -> Vec<f64> {
    (0..count).map(|_| mean + stddev * stream.gaussian()).collect()
}
