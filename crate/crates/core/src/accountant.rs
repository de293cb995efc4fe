//! Numerical privacy accountant over a discretized privacy-loss distribution (PLD).
//!
//! The single-step loss is that of the Poisson-subsampled Gaussian mechanism whose
//! sensitivity is scaled by a = 1/√Y, with Y drawn from an envelope distribution
//! (Y ≡ 1 for deterministic clipping). Steps compose by FFT exponentiation.

use crate::envelope::EnvelopeGrid;
use crate::error::{domain, Error, Result};
use crate::numerics::{std_normal_cdf, std_normal_sf};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

pub const DEFAULT_H: f64 = 1e-4;
pub const DEFAULT_T_MAX: f64 = 16.0;
pub const DEFAULT_SCALE_BINS: usize = 512;
pub const SIGMA_BRACKET: (f64, f64) = (0.3, 64.0);
pub const SIGMA_REL_TOL: f64 = 1e-3;

/// Envelope tail mass left outside the scale grid on each side.
const QUANTILE_TAIL: f64 = 1e-7;
const MAX_OUTSIDE_MASS: f64 = 1e-4;
const MAX_CLIPPED_MASS: f64 = 1e-3;
/// Survival values below this are treated as zero when building the single step.
const SURVIVAL_FLOOR: f64 = 1e-40;
/// End cells holding less cumulative mass than this are folded into their neighbours.
const TRIM_MASS: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub struct AccountantConfig {
    pub sigma: f64,
    pub n: u64,
    pub batch: u64,
    pub epochs: u32,
    pub delta_tgt: f64,
    pub h: f64,
    pub t_max: f64,
    /// Absent means deterministic clipping (Y ≡ 1).
    pub envelope: Option<EnvelopeGrid>,
    pub scale_bins: usize,
}

impl AccountantConfig {
    pub fn new(sigma: f64, n: u64, batch: u64, epochs: u32, delta_tgt: f64) -> Self {
        Self {
            sigma,
            n,
            batch,
            epochs,
            delta_tgt,
            h: DEFAULT_H,
            t_max: DEFAULT_T_MAX,
            envelope: None,
            scale_bins: DEFAULT_SCALE_BINS,
        }
    }

    pub fn with_envelope(mut self, envelope: EnvelopeGrid) -> Self {
        self.envelope = Some(envelope);
        self
    }

    /// Sampling rate B/N.
    pub fn p(&self) -> f64 {
        self.batch as f64 / self.n as f64
    }

    /// ⌈N/B⌉.
    pub fn steps_per_epoch(&self) -> u64 {
        self.n.div_ceil(self.batch)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(domain(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.batch == 0 || self.batch > self.n {
            return Err(domain(format!("need 0 < B <= N, got B={} N={}", self.batch, self.n)));
        }
        if self.epochs == 0 {
            return Err(domain("epochs must be positive"));
        }
        if !(self.delta_tgt > 0.0 && self.delta_tgt < 1.0) {
            return Err(domain(format!("delta_tgt must lie in (0, 1), got {}", self.delta_tgt)));
        }
        if !(self.h > 0.0 && self.h <= 1e-2) {
            return Err(domain(format!("mesh h must lie in (0, 1e-2], got {}", self.h)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(domain(format!("t_max must be positive, got {}", self.t_max)));
        }
        if self.scale_bins < 64 {
            return Err(domain(format!("scale_bins must be at least 64, got {}", self.scale_bins)));
        }
        Ok(())
    }
}

/// Discrete law of the sensitivity scale a = 1/√Y.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleDiscretization {
    pub weights: Vec<f64>,
    /// Bin midpoints ȳᵢ.
    pub y_bar: Vec<f64>,
    /// aᵢ = 1/√ȳᵢ.
    pub scales: Vec<f64>,
}

impl ScaleDiscretization {
    /// Y ≡ 1.
    pub fn deterministic() -> Self {
        Self { weights: vec![1.0], y_bar: vec![1.0], scales: vec![1.0] }
    }

    /// From explicit (weight, scale) pairs; weights are renormalized.
    pub fn from_scales(weights: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        if weights.len() != scales.len() || weights.is_empty() {
            return Err(domain("weights and scales must be nonempty and of equal length"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || scales.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(domain("weights must be nonnegative and scales positive"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(domain("weights sum to zero"));
        }
        let y_bar = scales.iter().map(|a| 1.0 / (a * a)).collect();
        Ok(Self { weights: weights.iter().map(|w| w / total).collect(), y_bar, scales })
    }

    /// E[a].
    pub fn mean_scale(&self) -> f64 {
        self.weights.iter().zip(&self.scales).map(|(w, a)| w * a).sum()
    }
}

/// Riemann–Stieltjes discretization of the envelope into `bins` equal-width bins over
/// [F⁻¹(1e-7), F⁻¹(1 − 1e-7)]; mass outside the range is folded into the end bins.
pub fn discretize_scale(envelope: &EnvelopeGrid, bins: usize) -> Result<ScaleDiscretization> {
    if bins < 64 {
        return Err(domain(format!("need at least 64 scale bins, got {bins}")));
    }
    let pts = envelope.points();
    let (x_first, f_first) = pts[0];
    let (_, f_last) = pts[pts.len() - 1];
    let below = if x_first > 0.0 { f_first } else { 0.0 };
    let above = 1.0 - f_last;
    if below > MAX_OUTSIDE_MASS || above > MAX_OUTSIDE_MASS {
        return Err(domain(format!(
            "envelope grid misses mass: {below:.3e} below x = {x_first}, {above:.3e} above its end"
        )));
    }
    let y_lo = envelope.quantile(QUANTILE_TAIL).max(0.0);
    let y_hi = envelope.quantile(1.0 - QUANTILE_TAIL);
    if y_hi - y_lo <= 1e-6 * y_hi.max(1e-300) {
        let y = 0.5 * (y_lo + y_hi);
        if !(y > 0.0) {
            return Err(domain("envelope concentrated at Y = 0"));
        }
        return Ok(ScaleDiscretization { weights: vec![1.0], y_bar: vec![y], scales: vec![1.0 / y.sqrt()] });
    }
    let dy = (y_hi - y_lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| y_lo + i as f64 * dy).collect();
    let mut cdf: Vec<f64> = edges.iter().map(|&y| envelope.cdf(y).clamp(0.0, 1.0)).collect();
    cdf[0] = 0.0;
    cdf[bins] = 1.0;
    let mut weights = Vec::with_capacity(bins);
    let mut y_bar = Vec::with_capacity(bins);
    for i in 1..=bins {
        let w = (cdf[i] - cdf[i - 1]).max(0.0);
        let y = 0.5 * (edges[i - 1] + edges[i]);
        if w > 0.0 {
            if !(y > 0.0) {
                return Err(domain("scale bin with positive mass at Y = 0"));
            }
            weights.push(w);
            y_bar.push(y);
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let scales = y_bar.iter().map(|y: &f64| 1.0 / y.sqrt()).collect();
    Ok(ScaleDiscretization { weights, y_bar, scales })
}

/// Scale-averaged Gaussian tail kernels at loss level t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernels {
    pub alpha: f64,
    pub beta: f64,
    pub alpha_sf: f64,
    pub beta_sf: f64,
}

/// With μᵢ = aᵢ/σ: α = Σ wᵢ Φ(−t/μᵢ − μᵢ/2), β = Σ wᵢ Φ(t/μᵢ − μᵢ/2), and their complements.
pub fn mechanism_kernels(t: f64, sigma: f64, sd: &ScaleDiscretization) -> Kernels {
    let mut k = Kernels { alpha: 0.0, beta: 0.0, alpha_sf: 0.0, beta_sf: 0.0 };
    for (&w, &a) in sd.weights.iter().zip(&sd.scales) {
        let mu = a / sigma;
        let za = -t / mu - 0.5 * mu;
        let zb = t / mu - 0.5 * mu;
        k.alpha += w * std_normal_cdf(za);
        k.alpha_sf += w * std_normal_sf(za);
        k.beta += w * std_normal_cdf(zb);
        k.beta_sf += w * std_normal_sf(zb);
    }
    k
}

/// P[L > t] under the subsampled mixture: p·β̄(t + s(t)) + (1 − p)·α(t + s(t)).
fn survival(t: f64, sigma: f64, p: f64, t_min: f64, sd: &ScaleDiscretization) -> f64 {
    if t <= t_min {
        return 1.0;
    }
    // s(t) = ln(1/p − (1−p)/p·e^{−t}) = ln(1 − e^{t_min − t}) − ln p
    let u = t + (-(t_min - t).exp_m1()).ln() - p.ln();
    let mut s = 0.0;
    for (&w, &a) in sd.weights.iter().zip(&sd.scales) {
        let mu = a / sigma;
        s += w * (p * std_normal_sf(u / mu - 0.5 * mu) + (1.0 - p) * std_normal_cdf(-u / mu - 0.5 * mu));
    }
    s.clamp(0.0, 1.0)
}

/// Discretized PLD on cells centred at t_j = (offset + j)·h.
#[derive(Debug, Clone, PartialEq)]
pub struct PldGrid {
    pub h: f64,
    pub t_max: f64,
    offset: i64,
    masses: Vec<f64>,
    /// Mass that fell beyond t_max and was lumped into the top cell.
    pub truncated_mass: f64,
}

impl PldGrid {
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn t(&self, j: usize) -> f64 {
        (self.offset + j as i64) as f64 * self.h
    }

    pub fn t_points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.masses.len()).map(|j| self.t(j))
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.t_points().zip(&self.masses).map(|(t, q)| t * q).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.t_points().zip(&self.masses).map(|(t, q)| (t - m).powi(2) * q).sum()
    }

    fn top_index(&self) -> i64 {
        (self.t_max / self.h + 1e-9).floor() as i64
    }

    /// Fold cells beyond ±t_max and negligible end cells into the boundary cells.
    fn normalize_support(&mut self) -> f64 {
        let top = self.top_index();
        let mut truncated = 0.0;
        let last = self.offset + self.masses.len() as i64 - 1;
        if last > top {
            let keep = (top - self.offset + 1).max(1) as usize;
            truncated = self.masses[keep..].iter().sum();
            self.masses.truncate(keep);
            self.masses[keep - 1] += truncated;
        }
        if self.offset < -top {
            let cut = ((-top - self.offset) as usize).min(self.masses.len() - 1);
            let low: f64 = self.masses[..cut].iter().sum();
            self.masses.drain(..cut);
            self.masses[0] += low;
            self.offset += cut as i64;
        }
        let mut acc = 0.0;
        let mut hi = self.masses.len();
        while hi > 1 && acc + self.masses[hi - 1] < TRIM_MASS {
            acc += self.masses[hi - 1];
            hi -= 1;
        }
        self.masses.truncate(hi);
        self.masses[hi - 1] += acc;
        let mut acc = 0.0;
        let mut lo = 0;
        while lo + 1 < self.masses.len() && acc + self.masses[lo] < TRIM_MASS {
            acc += self.masses[lo];
            lo += 1;
        }
        self.masses.drain(..lo);
        self.masses[0] += acc;
        self.offset += lo as i64;
        truncated
    }
}

fn check_mesh(h: f64, t_max: f64) -> Result<()> {
    if !(h > 0.0 && h <= 1e-2) || !(t_max > 0.0 && t_max.is_finite()) {
        return Err(domain(format!("invalid mesh h={h} t_max={t_max}")));
    }
    Ok(())
}

/// Single-step PLD for noise multiplier `sigma`, sampling rate `p` and scale law `sd`.
pub fn single_step_pld(sigma: f64, p: f64, h: f64, t_max: f64, sd: &ScaleDiscretization) -> Result<PldGrid> {
    check_mesh(h, t_max)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(domain(format!("sampling rate must lie in (0, 1], got {p}")));
    }
    if !(sigma > 0.0) {
        return Err(domain(format!("sigma must be positive, got {sigma}")));
    }
    let t_min = (-p).ln_1p();
    let top = (t_max / h + 1e-9).floor() as i64;
    // first cell whose upper cut lies above t_min
    let first = if t_min.is_finite() { ((t_min / h - 0.5).floor() as i64).max(-top) } else { -top };
    let first = first.min(top);
    let cut = |m: i64| (m as f64 + 0.5) * h;
    // S at upper cuts, evaluated in blocks until it falls below the floor.
    let mut upper: Vec<f64> = Vec::new();
    let block = 4096;
    let mut m = first;
    'outer: while m <= top {
        let end = (m + block).min(top + 1);
        let vals: Vec<f64> = (m..end).into_par_iter().map(|i| survival(cut(i), sigma, p, t_min, sd)).collect();
        for v in vals {
            upper.push(v);
            if v < SURVIVAL_FLOOR {
                break 'outer;
            }
        }
        m = end;
    }
    let mut masses = Vec::with_capacity(upper.len());
    let mut clipped = 0.0;
    let mut prev = if first == -top { 1.0 } else { survival(cut(first - 1), sigma, p, t_min, sd) };
    for &s in &upper {
        let d = prev - s;
        if d < 0.0 {
            clipped -= d;
        }
        masses.push(d.max(0.0));
        prev = s;
    }
    let last_s = *upper.last().unwrap_or(&0.0);
    let reached_top = first + upper.len() as i64 - 1 >= top;
    let truncated = if reached_top { last_s } else { 0.0 };
    if let Some(l) = masses.last_mut() {
        *l += truncated;
    }
    if clipped > MAX_CLIPPED_MASS {
        return Err(Error::Numerical(format!("clipped {clipped:.3e} negative mass; mesh too coarse")));
    }
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("single-step PLD has no mass".into()));
    }
    masses.iter_mut().for_each(|q| *q /= total);
    let mut g = PldGrid { h, t_max, offset: first, masses, truncated_mass: truncated };
    g.normalize_support();
    Ok(g)
}

/// Scale law implied by the config's envelope (Y ≡ 1 when absent).
pub fn scale_for(cfg: &AccountantConfig) -> Result<ScaleDiscretization> {
    match &cfg.envelope {
        Some(env) => discretize_scale(env, cfg.scale_bins),
        None => Ok(ScaleDiscretization::deterministic()),
    }
}

pub fn build_single_step_pld(cfg: &AccountantConfig) -> Result<PldGrid> {
    cfg.validate()?;
    single_step_pld(cfg.sigma, cfg.p(), cfg.h, cfg.t_max, &scale_for(cfg)?)
}

/// Smallest 2^a·3^b ≥ n.
fn fft_size(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p3 = 1;
    while p3 < best {
        let mut v = p3;
        while v < n {
            v *= 2;
        }
        best = best.min(v);
        p3 *= 3;
    }
    best
}

/// Law of the sum of `times` i.i.d. copies, by zero-padded FFT exponentiation.
///
/// Negative round-off is zeroed and the result renormalized; cells beyond ±t_max are
/// folded into the boundary cells, and the mass moved past t_max is added to
/// `truncated_mass`.
pub fn compose(pld: &PldGrid, times: u32) -> Result<PldGrid> {
    if times == 0 {
        return Err(domain("composition count must be positive"));
    }
    if times == 1 {
        return Ok(pld.clone());
    }
    let n = pld.masses.len();
    let out_len = (n - 1)
        .checked_mul(times as usize)
        .and_then(|v| v.checked_add(1))
        .ok_or_else(|| domain("composed support too large"))?;
    let size = fft_size(out_len);
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(size);
    buf.extend(pld.masses.iter().map(|&q| Complex::new(q, 0.0)));
    buf.resize(size, Complex::new(0.0, 0.0));
    forward.process(&mut buf);
    buf.iter_mut().for_each(|z| *z = z.powu(times));
    inverse.process(&mut buf);
    let scale = 1.0 / size as f64;
    let mut masses: Vec<f64> = buf[..out_len].iter().map(|z| (z.re * scale).max(0.0)).collect();
    let total: f64 = masses.iter().sum();
    masses.iter_mut().for_each(|q| *q /= total);
    let mut out = PldGrid {
        h: pld.h,
        t_max: pld.t_max,
        offset: pld.offset * times as i64,
        masses,
        truncated_mass: 0.0,
    };
    let moved = out.normalize_support();
    out.truncated_mass = (pld.truncated_mass * times as f64 + moved).min(1.0);
    Ok(out)
}

/// δ(ε) = Σ_{t_j ≥ ε} q_j (1 − e^{ε − t_j}), clipped to [0, 1].
pub fn delta_of_eps(pld: &PldGrid, eps: f64) -> f64 {
    let start = ((eps / pld.h).ceil() as i64 - pld.offset).max(0) as usize;
    let mut d = 0.0;
    for j in start..pld.masses.len() {
        let t = pld.t(j);
        if t >= eps {
            d += pld.masses[j] * -(eps - t).exp_m1();
        }
    }
    d.clamp(0.0, 1.0)
}

/// Diagnostic P[L > ε] − e^ε·P[L < −ε].
pub fn delta_of_eps_two_sided(pld: &PldGrid, eps: f64) -> f64 {
    let mut upper = 0.0;
    let mut lower = 0.0;
    for (t, &q) in pld.t_points().zip(&pld.masses) {
        if t > eps {
            upper += q;
        } else if t < -eps {
            lower += q;
        }
    }
    (upper - eps.exp() * lower).clamp(0.0, 1.0)
}

/// ε with δ(ε) = δ_tgt, by bisection on [0, t_max]; returns the end of the final bracket
/// where δ ≤ δ_tgt. Truncated mass above δ_tgt means the grid is too short.
pub fn solve_eps(pld: &PldGrid, delta_tgt: f64) -> Result<f64> {
    if !(delta_tgt > 0.0 && delta_tgt < 1.0) {
        return Err(domain(format!("delta_tgt must lie in (0, 1), got {delta_tgt}")));
    }
    if delta_of_eps(pld, 0.0) <= delta_tgt {
        return Ok(0.0);
    }
    // mass folded onto t_max stands for losses beyond the grid
    if pld.truncated_mass > delta_tgt || delta_of_eps(pld, pld.t_max) > delta_tgt {
        return Err(Error::SupportExhausted { required_t_max: 2.0 * pld.t_max });
    }
    let (mut lo, mut hi) = (0.0_f64, pld.t_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let d = delta_of_eps(pld, mid);
        if d > delta_tgt {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
    }
    Ok(hi)
}

/// Outcome of a full accounting run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccountingReport {
    pub sigma: f64,
    pub n: u64,
    pub batch: u64,
    pub epochs: u32,
    pub delta_tgt: f64,
    pub h: f64,
    pub t_max: f64,
    pub p: f64,
    pub steps_per_epoch: u64,
    pub total_steps: u64,
    pub eps: f64,
    pub delta_at_eps: f64,
    pub truncated_mass: f64,
    pub grid_cells: usize,
    pub scale_bins_used: usize,
}

/// Composed PLD after all epochs.
pub fn composed_pld(cfg: &AccountantConfig, sd: &ScaleDiscretization) -> Result<PldGrid> {
    let single = single_step_pld(cfg.sigma, cfg.p(), cfg.h, cfg.t_max, sd)?;
    let steps = u32::try_from(cfg.steps_per_epoch()).map_err(|_| domain("too many steps per epoch"))?;
    let epoch = compose(&single, steps)?;
    compose(&epoch, cfg.epochs)
}

fn run_with(cfg: &AccountantConfig, sd: &ScaleDiscretization) -> Result<(PldGrid, f64)> {
    let pld = composed_pld(cfg, sd)?;
    let eps = solve_eps(&pld, cfg.delta_tgt)?;
    Ok((pld, eps))
}

/// ε* for the configured run. Tail mass above δ_tgt/10 is an accuracy alarm.
pub fn account(cfg: &AccountantConfig) -> Result<AccountingReport> {
    cfg.validate()?;
    let sd = scale_for(cfg)?;
    let (pld, eps) = run_with(cfg, &sd)?;
    if pld.truncated_mass > cfg.delta_tgt / 10.0 {
        return Err(Error::Numerical(format!(
            "truncated tail mass {:.3e} exceeds delta_tgt/10; increase t_max",
            pld.truncated_mass
        )));
    }
    Ok(AccountingReport {
        sigma: cfg.sigma,
        n: cfg.n,
        batch: cfg.batch,
        epochs: cfg.epochs,
        delta_tgt: cfg.delta_tgt,
        h: cfg.h,
        t_max: cfg.t_max,
        p: cfg.p(),
        steps_per_epoch: cfg.steps_per_epoch(),
        total_steps: cfg.steps_per_epoch() * cfg.epochs as u64,
        eps,
        delta_at_eps: delta_of_eps(&pld, eps),
        truncated_mass: pld.truncated_mass,
        grid_cells: pld.len(),
        scale_bins_used: sd.weights.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaReport {
    pub sigma: f64,
    pub eps_at_sigma: f64,
    pub eps_tgt: f64,
    pub delta_tgt: f64,
    pub probes: usize,
}

/// Smallest σ in [0.3, 64] with ε*(σ) ≤ eps_tgt, to relative tolerance 1e-3.
///
/// Works on u = ln σ with Illinois steps on ln ε* − ln ε_tgt, falling back to
/// bisection; ε* beyond the support counts as a failing probe. The returned σ is the
/// passing end of the final bracket. `cfg.sigma` is the starting guess.
pub fn solve_sigma(cfg: &AccountantConfig, eps_tgt: f64) -> Result<SigmaReport> {
    let mut probe_cfg = cfg.clone();
    probe_cfg.sigma = cfg.sigma.clamp(SIGMA_BRACKET.0, SIGMA_BRACKET.1);
    probe_cfg.validate()?;
    if !(eps_tgt > 0.0) {
        return Err(domain(format!("eps_tgt must be positive, got {eps_tgt}")));
    }
    let sd = scale_for(cfg)?;
    let mut probes = 0;
    // g(u) = ln ε*(e^u) − ln ε_tgt; +∞ when ε* exceeds the support
    let mut g = |u: f64| -> Result<(f64, f64)> {
        probes += 1;
        probe_cfg.sigma = u.exp();
        match run_with(&probe_cfg, &sd) {
            Ok((_, eps)) => Ok((if eps > 0.0 { eps.ln() - eps_tgt.ln() } else { f64::NEG_INFINITY }, eps)),
            Err(Error::SupportExhausted { .. }) => Ok((f64::INFINITY, f64::INFINITY)),
            Err(e) => Err(e),
        }
    };
    let (ulo, uhi) = (SIGMA_BRACKET.0.ln(), SIGMA_BRACKET.1.ln());
    let u0 = cfg.sigma.clamp(SIGMA_BRACKET.0, SIGMA_BRACKET.1).ln();
    let (g0, e0) = g(u0)?;
    // bracket: a fails (g > 0), b passes (g ≤ 0)
    let (mut a, mut ga, mut b, mut gb, mut eb);
    if g0 > 0.0 {
        (a, ga) = (u0, g0);
        let mut u = u0;
        loop {
            if u >= uhi {
                return Err(Error::BracketExhausted(format!(
                    "eps* > {eps_tgt} even at sigma = {}",
                    SIGMA_BRACKET.1
                )));
            }
            u = (u + std::f64::consts::LN_2).min(uhi);
            let (gu, eu) = g(u)?;
            if gu <= 0.0 {
                (b, gb, eb) = (u, gu, eu);
                break;
            }
            (a, ga) = (u, gu);
        }
    } else {
        (b, gb, eb) = (u0, g0, e0);
        let mut u = u0;
        loop {
            if u <= ulo {
                let sigma = SIGMA_BRACKET.0;
                return Ok(SigmaReport { sigma, eps_at_sigma: eb, eps_tgt, delta_tgt: cfg.delta_tgt, probes });
            }
            u = (u - std::f64::consts::LN_2).max(ulo);
            let (gu, eu) = g(u)?;
            if gu > 0.0 {
                (a, ga) = (u, gu);
                break;
            }
            (b, gb, eb) = (u, gu, eu);
        }
    }
    let tol = SIGMA_REL_TOL.ln_1p();
    let mut side = 0i8;
    while b - a > tol {
        let mut u = if ga.is_finite() && gb.is_finite() && ga != gb {
            b - gb * (b - a) / (gb - ga)
        } else {
            0.5 * (a + b)
        };
        // keep the step strictly inside and not too close to either end
        let margin = 0.1 * tol;
        if !(u > a + margin && u < b - margin) {
            u = 0.5 * (a + b);
        }
        let (gu, eu) = g(u)?;
        if gu > 0.0 {
            (a, ga) = (u, gu);
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            (b, gb, eb) = (u, gu, eu);
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    Ok(SigmaReport { sigma: b.exp(), eps_at_sigma: eb, eps_tgt, delta_tgt: cfg.delta_tgt, probes })
}
