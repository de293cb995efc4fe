//! Envelope CDF of the squared norm ratio Z² = ‖AᵀG‖² / estimate.
//!
//! For the Hutchinson sketch the envelope follows the vertex configuration χ²(k)/k for
//! x ≤ 1, the uniform configuration χ²(kd)/(kd) for x ≥ x₊, and in between the supremum
//! over two-block configurations S(i, j, λ) = λ/(ik)·χ²(ik) + (1−λ)/(jk)·χ²(jk).
//! For Hutch++ it is max(F(x; χ²(k)/k), 1{x ≥ 1}).

use crate::error::{domain, Error, Result};
use crate::estimators::Estimator;
use crate::mixtures::{scaled_chi2_cdf, two_term_cdf_raw};
use rayon::prelude::*;
use std::fmt::Write as _;

pub const DEFAULT_N_LAMBDA: usize = 501;
pub const DEFAULT_N_GRID: usize = 2048;
pub const DEFAULT_TAU: f64 = 1e-4;
pub const DEFAULT_X_MIN: f64 = 1e-4;

/// Largest block size i + j searched exhaustively once d exceeds it.
pub const PAIR_CAP: u32 = 16;
/// From this d on, saturated pairs (i, d − i) are limited to the ends and the middle.
const SATURATED_TRIM_FROM: u32 = 512;
const SATURATED_EDGE: u32 = 32;
/// Coarse λ points per pair before local refinement.
const COARSE_POINTS: usize = 20;
/// Pairs whose coarse maximum is refined at full λ resolution.
const REFINED_PAIRS: usize = 4;
/// A configuration must beat the uniform CDF by this much to count as dominating.
const DOMINANCE_MARGIN: f64 = 1e-9;
const MONOTONE_TOL: f64 = 1e-6;

/// P[χ²(k)/k ≤ x].
pub fn vertex_cdf(x: f64, k: u32) -> f64 {
    scaled_chi2_cdf(x, 1.0 / k as f64, k)
}

/// P[χ²(kd)/(kd) ≤ x].
pub fn uniform_cdf(x: f64, k: u32, d: u32) -> f64 {
    let n = k * d;
    scaled_chi2_cdf(x, 1.0 / n as f64, n)
}

/// max(F(x; χ²(k)/k), 1{x ≥ 1}).
pub fn hutchpp_envelope(x: f64, k: u32) -> f64 {
    if x >= 1.0 {
        1.0
    } else {
        vertex_cdf(x, k)
    }
}

/// Maximizer of F(x; S(i, j, λ)); λ weights the i-block and i ≤ j.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiddleSup {
    pub i: u32,
    pub j: u32,
    pub lambda: f64,
    pub f: f64,
}

fn check_kd(k: u32, d: u32) -> Result<()> {
    if k == 0 || d == 0 {
        return Err(domain("k and d must be positive"));
    }
    if k.checked_mul(d).is_none() {
        return Err(domain("k·d overflows"));
    }
    Ok(())
}

/// Ordered (i, j) pairs searched, and the cap on i + j when the search is truncated.
pub fn candidate_pairs(d: u32) -> (Vec<(u32, u32)>, Option<u32>) {
    let mut pairs = Vec::new();
    if d > 1 {
        pairs.push((1, d - 1));
        if d > 2 {
            pairs.push((d - 1, 1));
        }
    }
    let small = d.min(PAIR_CAP);
    for s in 2..=small {
        for i in 1..s {
            pairs.push((i, s - i));
        }
    }
    if d > PAIR_CAP {
        for i in 1..d {
            let keep = d < SATURATED_TRIM_FROM
                || i <= SATURATED_EDGE
                || i >= d - SATURATED_EDGE
                || i == d / 2
                || i == d - d / 2;
            if keep {
                pairs.push((i, d - i));
            }
        }
    }
    let mut seen = std::collections::HashSet::new();
    pairs.retain(|p| seen.insert(*p));
    (pairs, (d > PAIR_CAP).then_some(PAIR_CAP))
}

struct PairSearch {
    x: f64,
    k: u32,
    n_lambda: usize,
}

impl PairSearch {
    fn lambda(&self, m: usize) -> f64 {
        0.5 * m as f64 / (self.n_lambda - 1) as f64
    }

    fn eval(&self, (i, j): (u32, u32), m: usize) -> f64 {
        let lam = self.lambda(m);
        let (a, b) = (i * self.k, j * self.k);
        two_term_cdf_raw(self.x, (lam / a as f64, a), ((1.0 - lam) / b as f64, b))
    }

    fn stride(&self) -> usize {
        ((self.n_lambda - 1) / COARSE_POINTS).max(1)
    }

    /// Best (index, value) on the coarse λ grid.
    fn coarse(&self, pair: (u32, u32)) -> (usize, f64) {
        let last = self.n_lambda - 1;
        let mut best = (0, f64::NEG_INFINITY);
        let mut m = 0;
        loop {
            let v = self.eval(pair, m);
            if v > best.1 {
                best = (m, v);
            }
            if m == last {
                break;
            }
            m = (m + self.stride()).min(last);
        }
        best
    }

    /// Integer ternary search around a coarse maximum.
    fn refine(&self, pair: (u32, u32), (c, cv): (usize, f64)) -> (usize, f64) {
        let s = self.stride();
        let mut lo = c.saturating_sub(s);
        let mut hi = (c + s).min(self.n_lambda - 1);
        while hi - lo > 3 {
            let m1 = lo + (hi - lo) / 3;
            let m2 = hi - (hi - lo) / 3;
            if self.eval(pair, m1) < self.eval(pair, m2) {
                lo = m1 + 1;
            } else {
                hi = m2 - 1;
            }
        }
        (lo..=hi)
            .map(|m| (m, self.eval(pair, m)))
            .chain(std::iter::once((c, cv)))
            .fold((c, cv), |b, t| if t.1 > b.1 { t } else { b })
    }
}

fn normalized(pair: (u32, u32), lambda: f64, f: f64) -> MiddleSup {
    let (i, j) = pair;
    if i > j {
        MiddleSup { i: j, j: i, lambda: 1.0 - lambda, f }
    } else {
        MiddleSup { i, j, lambda, f }
    }
}

fn check_middle_args(x: f64, n_lambda: usize) -> Result<()> {
    if !(x > 1.0 && x < 2.0) {
        return Err(domain(format!("middle region needs 1 < x < 2, got {x}")));
    }
    if n_lambda < 101 {
        return Err(domain(format!("n_lambda must be at least 101, got {n_lambda}")));
    }
    Ok(())
}

/// sup over i, j ≥ 1 with i + j ≤ d and λ on an n_lambda-point grid of [0, ½] of F(x; S(i, j, λ)).
///
/// Each candidate pair is scanned on a coarse λ grid; the best few pairs are refined to
/// full grid resolution. For d > 16 the pairs are those with i + j ≤ 16 together with the
/// saturated pairs i + j = d (see [`candidate_pairs`]).
pub fn middle_region_sup(x: f64, k: u32, d: u32, n_lambda: usize) -> Result<MiddleSup> {
    check_middle_args(x, n_lambda)?;
    check_kd(k, d)?;
    if d == 1 {
        return Ok(MiddleSup { i: 1, j: 0, lambda: 1.0, f: vertex_cdf(x, k) });
    }
    let search = PairSearch { x, k, n_lambda };
    let (pairs, _) = candidate_pairs(d);
    let coarse: Vec<(usize, f64)> = pairs.par_iter().map(|&p| search.coarse(p)).collect();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| coarse[b].1.total_cmp(&coarse[a].1).then(a.cmp(&b)));
    let refined: Vec<(usize, (usize, f64))> = order
        .iter()
        .take(REFINED_PAIRS)
        .map(|&p| (p, search.refine(pairs[p], coarse[p])))
        .collect();
    let (p, (m, f)) = refined
        .into_iter()
        .fold(None, |best: Option<(usize, (usize, f64))>, t| match best {
            Some(b) if b.1 .1 >= t.1 .1 => Some(b),
            _ => Some(t),
        })
        .expect("at least one candidate pair");
    Ok(normalized(pairs[p], search.lambda(m), f))
}

/// Whether some two-block configuration beats the uniform CDF at x.
fn nonuniform_dominates(x: f64, k: u32, d: u32, n_lambda: usize) -> Result<bool> {
    let target = uniform_cdf(x, k, d) + DOMINANCE_MARGIN;
    let search = PairSearch { x, k, n_lambda };
    let (pairs, _) = candidate_pairs(d);
    // The one-heavy-coordinate family is the usual maximizer; try it alone first.
    for &p in pairs.iter().take(2) {
        let c = search.coarse(p);
        if c.1 > target || search.refine(p, c).1 > target {
            return Ok(true);
        }
    }
    Ok(middle_region_sup(x, k, d, n_lambda)?.f > target)
}

/// Threshold above which the uniform configuration attains the supremum, by bisection on [1, 2].
///
/// At each midpoint the best two-block value is compared with the uniform CDF; the
/// returned value is the upper end of the final bracket, so the uniform branch is valid
/// from it onwards.
pub fn find_x_plus(k: u32, d: u32, tau: f64) -> Result<f64> {
    find_x_plus_with(k, d, tau, DEFAULT_N_LAMBDA)
}

pub fn find_x_plus_with(k: u32, d: u32, tau: f64, n_lambda: usize) -> Result<f64> {
    check_kd(k, d)?;
    if !(tau > 0.0 && tau <= 1e-2) {
        return Err(domain(format!("tau must lie in (0, 1e-2], got {tau}")));
    }
    if d == 1 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (1.0_f64, 2.0_f64);
    if nonuniform_dominates(hi - 0.5 * tau, k, d, n_lambda)? {
        return Ok(2.0);
    }
    while hi - lo > tau {
        let mid = 0.5 * (lo + hi);
        if nonuniform_dominates(mid, k, d, n_lambda)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Discretized envelope CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeGrid {
    pub k: u32,
    pub d: u32,
    pub estimator: Estimator,
    pub x_plus: f64,
    pub n_lambda: usize,
    /// Pair-sum cap used in the middle-region search, if it was truncated.
    pub pair_cap: Option<u32>,
    points: Vec<(f64, f64)>,
}

impl EnvelopeGrid {
    pub fn new(
        k: u32,
        d: u32,
        estimator: Estimator,
        x_plus: f64,
        n_lambda: usize,
        points: Vec<(f64, f64)>,
    ) -> Result<Self> {
        check_kd(k, d)?;
        if !(1.0..=2.0).contains(&x_plus) {
            return Err(domain(format!("x_plus {x_plus} outside [1, 2]")));
        }
        validate_points(&points).map_err(domain)?;
        Ok(Self { k, d, estimator, x_plus, n_lambda, pair_cap: None, points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Piecewise-linear CDF through the grid; 0 below the first point when that
    /// point is at a positive x, and F of the last point beyond the grid.
    pub fn cdf(&self, x: f64) -> f64 {
        let pts = &self.points;
        let n = pts.partition_point(|p| p.0 <= x);
        if n == 0 {
            let (x0, f0) = pts[0];
            return if x <= 0.0 || x0 <= 0.0 { 0.0 } else { f0 * x / x0 };
        }
        if n == pts.len() {
            return pts[n - 1].1;
        }
        let (xa, fa) = pts[n - 1];
        let (xb, fb) = pts[n];
        fa + (fb - fa) * (x - xa) / (xb - xa)
    }

    /// Smallest x with cdf(x) ≥ q under the same interpolation.
    pub fn quantile(&self, q: f64) -> f64 {
        let pts = &self.points;
        let n = pts.partition_point(|p| p.1 < q);
        if n == 0 {
            let (x0, f0) = pts[0];
            return if f0 <= 0.0 || x0 <= 0.0 { x0.min(0.0).max(0.0) } else { x0 * q / f0 };
        }
        if n == pts.len() {
            return pts[n - 1].0;
        }
        let (xa, fa) = pts[n - 1];
        let (xb, fb) = pts[n];
        xa + (xb - xa) * (q - fa) / (fb - fa)
    }
}

fn validate_points(points: &[(f64, f64)]) -> std::result::Result<(), String> {
    if points.is_empty() {
        return Err("envelope has no points".into());
    }
    for (n, &(x, f)) in points.iter().enumerate() {
        if !x.is_finite() || !(0.0..=1.0).contains(&f) {
            return Err(format!("point {n} ({x}, {f}) out of range"));
        }
        if n > 0 {
            let (px, pf) = points[n - 1];
            if x <= px {
                return Err(format!("x not strictly increasing at point {n}"));
            }
            if f < pf {
                return Err(format!("F decreasing at point {n}"));
            }
        }
    }
    Ok(())
}

fn check_grid_args(x_min: f64, x_max: f64, n_grid: usize) -> Result<()> {
    if !(x_min >= 0.0 && x_min < 1.0 && x_max > 1.0 && x_max.is_finite()) {
        return Err(domain(format!("need 0 <= x_min < 1 < x_max, got [{x_min}, {x_max}]")));
    }
    if n_grid < 64 {
        return Err(domain(format!("n_grid must be at least 64, got {n_grid}")));
    }
    Ok(())
}

fn uniform_grid(x_min: f64, x_max: f64, n_grid: usize) -> Vec<f64> {
    let dx = (x_max - x_min) / (n_grid - 1) as f64;
    (0..n_grid).map(|i| x_min + i as f64 * dx).collect()
}

fn merge_sorted(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|b, a| (*b - *a).abs() <= 1e-12 * a.abs().max(1.0));
    xs
}

/// Running max over F; a drop larger than 1e-6 is a numerical fault.
fn enforce_monotone(points: &mut [(f64, f64)]) -> Result<()> {
    let mut run = 0.0_f64;
    for (x, f) in points.iter_mut() {
        if *f < run - MONOTONE_TOL {
            return Err(Error::Numerical(format!(
                "envelope CDF drops by {:.3e} at x = {x}",
                run - *f
            )));
        }
        run = run.max(*f);
        *f = run;
    }
    Ok(())
}

/// Hutchinson envelope on a uniform grid over [x_min, x_max], refined inside (1, x₊).
pub fn build_hutch_envelope(
    k: u32,
    d: u32,
    x_min: f64,
    x_max: f64,
    n_grid: usize,
    n_lambda: usize,
) -> Result<EnvelopeGrid> {
    check_kd(k, d)?;
    check_grid_args(x_min, x_max, n_grid)?;
    if n_lambda < 101 {
        return Err(domain(format!("n_lambda must be at least 101, got {n_lambda}")));
    }
    let x_plus = find_x_plus_with(k, d, DEFAULT_TAU, n_lambda)?;
    let mut xs = uniform_grid(x_min, x_max, n_grid);
    let dx = (x_max - x_min) / (n_grid - 1) as f64;
    if x_plus > 1.0 {
        let step = dx.min((x_plus - 1.0) / 32.0);
        let mut x = 1.0;
        while x < x_plus {
            if x >= x_min && x <= x_max {
                xs.push(x);
            }
            x += step;
        }
        if x_plus <= x_max {
            xs.push(x_plus);
        }
    }
    let xs = merge_sorted(xs);
    let values: Vec<f64> = xs
        .par_iter()
        .map(|&x| -> Result<f64> {
            Ok(if x <= 1.0 {
                vertex_cdf(x, k)
            } else if x >= x_plus {
                uniform_cdf(x, k, d)
            } else {
                let m = middle_region_sup(x, k, d, n_lambda)?;
                m.f.max(vertex_cdf(x, k)).max(uniform_cdf(x, k, d))
            })
        })
        .collect::<Result<_>>()?;
    let mut points: Vec<(f64, f64)> = xs.into_iter().zip(values).collect();
    enforce_monotone(&mut points)?;
    Ok(EnvelopeGrid {
        k,
        d,
        estimator: Estimator::Hutch,
        x_plus,
        n_lambda,
        pair_cap: candidate_pairs(d).1,
        points,
    })
}

/// Hutch++ envelope on the same grid layout, with an exact point at the step x = 1.
pub fn build_hutchpp_envelope(k: u32, d: u32, x_min: f64, x_max: f64, n_grid: usize) -> Result<EnvelopeGrid> {
    check_kd(k, d)?;
    check_grid_args(x_min, x_max, n_grid)?;
    let mut xs = uniform_grid(x_min, x_max, n_grid);
    // bracket the jump tightly so interpolation keeps it sharp
    xs.push(1.0);
    xs.push(1.0 - 1e-9);
    let xs = merge_sorted(xs);
    let points = xs.into_iter().map(|x| (x, hutchpp_envelope(x, k))).collect();
    Ok(EnvelopeGrid {
        k,
        d,
        estimator: Estimator::Hutchpp,
        x_plus: 1.0,
        n_lambda: 0,
        pair_cap: None,
        points,
    })
}

/// Text form: three header lines, an optional pair-cap line, then `x,F` rows.
pub fn serialize_envelope(g: &EnvelopeGrid) -> String {
    let mut out = String::new();
    out.push_str("# envelope v1\n");
    let _ = writeln!(out, "# estimator={}", g.estimator.as_str());
    let _ = writeln!(
        out,
        "# k={} d={} x_plus={:.16e} n_lambda={}",
        g.k, g.d, g.x_plus, g.n_lambda
    );
    if let Some(cap) = g.pair_cap {
        let _ = writeln!(out, "# pair_cap={cap}");
    }
    for &(x, f) in &g.points {
        let _ = writeln!(out, "{x:.16e},{f:.16e}");
    }
    out
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub fn parse_envelope(text: &str) -> Result<EnvelopeGrid> {
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l.trim()));
    let mut next = |what: &str| lines.next().ok_or_else(|| parse_err(0, format!("missing {what}")));
    let (n, l) = next("version header")?;
    if l != "# envelope v1" {
        return Err(parse_err(n, format!("expected '# envelope v1', got '{l}'")));
    }
    let (n, l) = next("estimator header")?;
    let estimator = l
        .strip_prefix("# estimator=")
        .ok_or_else(|| parse_err(n, "expected '# estimator=<hutch|hutchpp>'"))?
        .parse::<Estimator>()
        .map_err(|e| parse_err(n, e.to_string()))?;
    let (n, l) = next("parameter header")?;
    let body = l.strip_prefix("# ").ok_or_else(|| parse_err(n, "expected parameter header"))?;
    let mut k = None;
    let mut d = None;
    let mut x_plus = None;
    let mut n_lambda = None;
    for kv in body.split_whitespace() {
        let (key, val) = kv.split_once('=').ok_or_else(|| parse_err(n, format!("bad field '{kv}'")))?;
        let bad = |_| parse_err(n, format!("bad value for {key}: '{val}'"));
        match key {
            "k" => k = Some(val.parse::<u32>().map_err(bad)?),
            "d" => d = Some(val.parse::<u32>().map_err(bad)?),
            "x_plus" => x_plus = Some(val.parse::<f64>().map_err(|_| parse_err(n, format!("bad x_plus '{val}'")))?),
            "n_lambda" => n_lambda = Some(val.parse::<usize>().map_err(bad)?),
            other => return Err(parse_err(n, format!("unknown field '{other}'"))),
        }
    }
    let missing = |f: &str| parse_err(n, format!("missing field {f}"));
    let (k, d) = (k.ok_or_else(|| missing("k"))?, d.ok_or_else(|| missing("d"))?);
    let x_plus = x_plus.ok_or_else(|| missing("x_plus"))?;
    let n_lambda = n_lambda.ok_or_else(|| missing("n_lambda"))?;
    let mut pair_cap = None;
    let mut points = Vec::new();
    let mut last_line = n;
    for (n, l) in lines {
        last_line = n;
        if l.is_empty() {
            continue;
        }
        if let Some(cap) = l.strip_prefix("# pair_cap=") {
            if !points.is_empty() {
                return Err(parse_err(n, "pair_cap header after data rows"));
            }
            pair_cap = Some(cap.parse::<u32>().map_err(|_| parse_err(n, format!("bad pair_cap '{cap}'")))?);
            continue;
        }
        if l.starts_with('#') || l == "x,F" {
            continue;
        }
        let (xs, fs) = l.split_once(',').ok_or_else(|| parse_err(n, format!("expected 'x,F', got '{l}'")))?;
        let x = xs.trim().parse::<f64>().map_err(|_| parse_err(n, format!("bad x '{xs}'")))?;
        let f = fs.trim().parse::<f64>().map_err(|_| parse_err(n, format!("bad F '{fs}'")))?;
        if let Some(&(px, pf)) = points.last() {
            if x <= px {
                return Err(parse_err(n, "x not strictly increasing"));
            }
            if f < pf {
                return Err(parse_err(n, "F not monotone"));
            }
        }
        if !(0.0..=1.0).contains(&f) {
            return Err(parse_err(n, format!("F = {f} outside [0, 1]")));
        }
        points.push((x, f));
    }
    if points.is_empty() {
        return Err(parse_err(last_line, "no data rows"));
    }
    let mut g = EnvelopeGrid::new(k, d, estimator, x_plus, n_lambda, points)
        .map_err(|e| parse_err(last_line, e.to_string()))?;
    g.pair_cap = pair_cap;
    Ok(g)
}
