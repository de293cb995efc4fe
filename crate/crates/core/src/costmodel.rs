//! Closed-form FLOPs and memory counts for per-sample norm computation in one linear
//! layer, and the context-length ranges where randomized clipping uses least memory.
//!
//! All counts are tensor elements or scalar operations, in exact integer arithmetic.

use crate::error::{domain, Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Fast gradient clipping: materializes AᵀG.
    Fgc,
    /// Ghost clipping: Gram matrices AAᵀ and GGᵀ.
    Gc,
    /// Randomized clipping with the Hutchinson sketch.
    RcHutch,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fgc, Method::Gc, Method::RcHutch];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fgc => "fgc",
            Method::Gc => "gc",
            Method::RcHutch => "rc-hutch",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgc" => Ok(Method::Fgc),
            "gc" => Ok(Method::Gc),
            "rc-hutch" | "rc" => Ok(Method::RcHutch),
            other => Err(domain(format!("unknown method '{other}'"))),
        }
    }
}

/// Batch B, context length T, layer shape (p, d), sketch width k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostParams {
    pub b: u64,
    pub t: u64,
    pub p: u64,
    pub d: u64,
    pub k: u64,
    pub method: Method,
    pub del_backprops: bool,
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if [self.b, self.t, self.p, self.d, self.k].contains(&0) {
            return Err(domain("B, T, p, d and k must all be positive"));
        }
        Ok(())
    }

    fn wide(&self) -> (i128, i128, i128, i128, i128) {
        (self.b as i128, self.t as i128, self.p as i128, self.d as i128, self.k as i128)
    }

    /// RC projects the larger side, so its counts use p = max, d = min.
    fn wide_rc(&self) -> (i128, i128, i128, i128, i128) {
        let (b, t, p, d, k) = self.wide();
        (b, t, p.max(d), p.min(d), k)
    }
}

/// Exact FLOPs of the per-sample norm computation.
pub fn exact_flops(cp: &CostParams) -> Result<i128> {
    cp.validate()?;
    Ok(match cp.method {
        Method::Fgc => {
            let (b, t, p, d, _) = cp.wide();
            b * p * d * (2 * t - 1)
        }
        Method::Gc => {
            let (b, t, p, d, _) = cp.wide();
            2 * b * t * t * (p + d) - b
        }
        Method::RcHutch => {
            let (b, t, p, d, k) = cp.wide_rc();
            2 * b * t * k * (p + d) + b * k * (d - t) - b
        }
    })
}

/// Activations plus backprops held before norm computation: BT(d + p).
pub fn initial_memory(cp: &CostParams) -> Result<i128> {
    cp.validate()?;
    let (b, t, p, d, _) = cp.wide();
    Ok(b * t * (d + p))
}

/// Peak minus initial memory.
pub fn memory_overhead(cp: &CostParams) -> Result<i128> {
    cp.validate()?;
    Ok(match (cp.method, cp.del_backprops) {
        (Method::Fgc, _) => {
            let (b, _, p, d, _) = cp.wide();
            b * p * d
        }
        (Method::Gc, false) => {
            let (b, t, ..) = cp.wide();
            2 * b * t * t
        }
        (Method::Gc, true) => {
            let (b, t, p, ..) = cp.wide();
            (b * t * t).max(b * t * (2 * t - p))
        }
        (Method::RcHutch, false) => {
            let (b, t, p, d, k) = cp.wide_rc();
            b * k * (t + d) + p * k
        }
        (Method::RcHutch, true) => {
            let (b, t, p, d, k) = cp.wide_rc();
            (b * t * k + p * k).max(b * t * (k - p) + b * d * k)
        }
    })
}

pub fn peak_memory(cp: &CostParams) -> Result<i128> {
    Ok(initial_memory(cp)? + memory_overhead(cp)?)
}

/// Direct comparison with backprops deleted: RC overhead below both FGC and GC.
pub fn rc_wins_direct(b: u64, t: u64, p: u64, d: u64, k: u64) -> Result<bool> {
    let base = CostParams { b, t, p, d, k, method: Method::RcHutch, del_backprops: true };
    let rc = memory_overhead(&base)?;
    let fgc = memory_overhead(&CostParams { method: Method::Fgc, ..base })?;
    let gc = memory_overhead(&CostParams { method: Method::Gc, ..base })?;
    Ok(rc < fgc.min(gc))
}

/// RC uses fewer FLOPs than GC.
pub fn rc_beats_gc_flops(b: u64, t: u64, p: u64, d: u64, k: u64) -> Result<bool> {
    let base = CostParams { b, t, p, d, k, method: Method::RcHutch, del_backprops: true };
    Ok(exact_flops(&base)? < exact_flops(&CostParams { method: Method::Gc, ..base })?)
}

/// Context-length interval of one regime row, inclusive on both ends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegimeRange {
    pub label: &'static str,
    pub t_lo: u64,
    pub t_hi: u64,
}

/// Regime rows for p ≥ d, each with its own T window and win condition on k.
struct Regime {
    label: &'static str,
    t_min: u64,
    t_max: u64,
    /// (numerator, denominator) of the k bound: RC wins iff k·den < num
    bound: fn(i128, i128, i128, i128) -> (i128, i128),
}

fn regimes(p: u64, d: u64, t_cap: u64) -> Vec<Regime> {
    // T ≤ p: mixed ghost costs B·min(pd, T²); beyond p the GC term is BT(2T − p)
    let short: fn(i128, i128, i128, i128) -> (i128, i128) = |b, t, p, d| (b * (p * d).min(t * t), b * t + p);
    let long: fn(i128, i128, i128, i128) -> (i128, i128) =
        |b, t, p, d| (b * (p * d).min(t * (2 * t - p)), b * t + p);
    let b1: fn(i128, i128, i128, i128) -> (i128, i128) =
        |b, t, p, d| (b * (p * d).min(t * t), b * (2 * d - p) + p);
    if p >= 2 * d {
        vec![
            Regime { label: "A-I", t_min: 1, t_max: p, bound: short },
            Regime { label: "A-II", t_min: p + 1, t_max: t_cap, bound: long },
        ]
    } else {
        vec![
            Regime { label: "B-I", t_min: 1, t_max: 2 * d - p, bound: b1 },
            Regime { label: "B-II", t_min: 2 * d - p + 1, t_max: p, bound: short },
            Regime { label: "B-III", t_min: p + 1, t_max: t_cap, bound: long },
        ]
    }
}

/// Valid T intervals per regime row (p ≥ d), by exhaustive integer scan.
///
/// Beyond T = pd/k the bound k < B·pd/(BT + p) fails in every row, which caps the scan.
/// A regime may contribute several intervals if its condition is not monotone in T.
pub fn rc_wins_t_range(p: u64, d: u64, b: u64, k: u64) -> Result<Vec<RegimeRange>> {
    if [p, d, b, k].contains(&0) {
        return Err(domain("p, d, B and k must be positive"));
    }
    if p < d {
        return Err(domain(format!("regime table assumes p >= d, got p={p} d={d}")));
    }
    let t_cap = (p as u128 * d as u128 / k as u128 + 2).max(p as u128 + 1);
    let t_cap = u64::try_from(t_cap).map_err(|_| domain("layer too large for the T scan"))?;
    let mut out = Vec::new();
    for r in regimes(p, d, t_cap) {
        let mut run: Option<(u64, u64)> = None;
        for t in r.t_min..=r.t_max {
            let (num, den) = (r.bound)(b as i128, t as i128, p as i128, d as i128);
            let ok = (k as i128) * den < num;
            match (ok, run) {
                (true, None) => run = Some((t, t)),
                (true, Some((lo, _))) => run = Some((lo, t)),
                (false, Some((lo, hi))) => {
                    out.push(RegimeRange { label: r.label, t_lo: lo, t_hi: hi });
                    run = None;
                }
                (false, None) => {}
            }
        }
        if let Some((lo, hi)) = run {
            out.push(RegimeRange { label: r.label, t_lo: lo, t_hi: hi });
        }
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "method,B,T,p,d,k,del_backprops,flops,mem_overhead";

pub fn csv_row(cp: &CostParams) -> Result<String> {
    Ok(format!(
        "{},{},{},{},{},{},{},{},{}",
        cp.method.as_str(),
        cp.b,
        cp.t,
        cp.p,
        cp.d,
        cp.k,
        cp.del_backprops,
        exact_flops(cp)?,
        memory_overhead(cp)?
    ))
}

/// Human-readable regime summary.
pub fn regime_summary(p: u64, d: u64, b: u64, k: u64) -> Result<String> {
    let mut out = format!("regimes for p={p} d={d} B={b} k={k}\n");
    let ranges = rc_wins_t_range(p, d, b, k)?;
    if ranges.is_empty() {
        out.push_str("  none: randomized clipping never has the lowest memory\n");
    }
    for r in ranges {
        let _ = writeln!(out, "  {:<6} {} <= T <= {}", r.label, r.t_lo, r.t_hi);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp(method: Method, b: u64, t: u64, p: u64, d: u64, k: u64, del: bool) -> CostParams {
        CostParams { b, t, p, d, k, method, del_backprops: del }
    }

    #[test]
    fn flops_rows() {
        assert_eq!(exact_flops(&cp(Method::Fgc, 1, 1, 2, 3, 1, false)).unwrap(), 6);
        assert_eq!(exact_flops(&cp(Method::Gc, 1, 2, 1, 1, 1, false)).unwrap(), 15);
        let (b, t, p, d, k) = (3i128, 7, 5, 4, 2);
        let c = cp(Method::RcHutch, 3, 7, 5, 4, 2, false);
        assert_eq!(exact_flops(&c).unwrap(), 2 * b * t * k * (p + d) + b * k * (d - t) - b);
        // GC multiplications + additions
        let gc = cp(Method::Gc, 3, 7, 5, 4, 2, false);
        assert_eq!(exact_flops(&gc).unwrap(), b * t * t * (p + d + 1) + b * t * t * (p + d - 1) - b);
    }

    #[test]
    fn flops_ratio_long_context() {
        let rc = exact_flops(&cp(Method::RcHutch, 1, 4096, 2048, 2048, 32, false)).unwrap() as f64;
        let gc = exact_flops(&cp(Method::Gc, 1, 4096, 2048, 2048, 32, false)).unwrap() as f64;
        assert!((gc / rc / 128.0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn memory_rows() {
        assert_eq!(memory_overhead(&cp(Method::Fgc, 2, 9, 8192, 2048, 1, true)).unwrap(), 33_554_432);
        assert_eq!(memory_overhead(&cp(Method::Gc, 2, 10, 64, 8, 1, false)).unwrap(), 400);
        assert_eq!(memory_overhead(&cp(Method::Gc, 2, 10, 64, 8, 1, true)).unwrap(), 200);
        assert_eq!(memory_overhead(&cp(Method::Gc, 1, 10, 4, 8, 1, true)).unwrap(), 160);
        assert_eq!(memory_overhead(&cp(Method::RcHutch, 2, 10, 64, 8, 4, false)).unwrap(), 2 * 4 * 18 + 256);
        // d < p < T: BTk + pk
        assert_eq!(memory_overhead(&cp(Method::RcHutch, 2, 100, 64, 8, 4, true)).unwrap(), 2 * 100 * 4 + 64 * 4);
        assert_eq!(initial_memory(&cp(Method::Gc, 2, 3, 5, 7, 1, true)).unwrap(), 72);
        assert_eq!(peak_memory(&cp(Method::Fgc, 1, 1, 2, 3, 1, true)).unwrap(), 11);
    }

    #[test]
    fn rc_symmetric_under_swap() {
        for (p, d) in [(7, 3), (64, 256), (5, 5)] {
            for del in [false, true] {
                let a = cp(Method::RcHutch, 2, 11, p, d, 4, del);
                let b = cp(Method::RcHutch, 2, 11, d, p, 4, del);
                assert_eq!(exact_flops(&a).unwrap(), exact_flops(&b).unwrap());
                assert_eq!(memory_overhead(&a).unwrap(), memory_overhead(&b).unwrap());
            }
        }
    }

    #[test]
    fn regime_rows() {
        let a = rc_wins_t_range(8192, 2048, 2, 32).unwrap();
        assert_eq!(a, vec![
            RegimeRange { label: "A-I", t_lo: 379, t_hi: 8192 },
            RegimeRange { label: "A-II", t_lo: 8193, t_hi: 520_191 },
        ]);
        let b = rc_wins_t_range(3072, 2048, 2, 32).unwrap();
        assert_eq!(b, vec![
            RegimeRange { label: "B-I", t_lo: 287, t_hi: 1024 },
            RegimeRange { label: "B-II", t_lo: 1025, t_hi: 3072 },
            RegimeRange { label: "B-III", t_lo: 3073, t_hi: 195_071 },
        ]);
        assert!(rc_wins_t_range(64, 32, 1, 100_000).unwrap().is_empty());
        assert!(rc_wins_t_range(32, 64, 1, 1).is_err());
        assert!(regime_summary(8192, 2048, 2, 32).unwrap().contains("A-II"));
    }

    #[test]
    fn regimes_agree_with_direct_comparison() {
        // B-I uses the larger denominator B(2d − p) + p, so there it is only sufficient
        for (p, d) in [(64u64, 16u64), (48, 32), (40, 40), (96, 24)] {
            for b in [1u64, 2, 4] {
                for k in [1u64, 2, 4, 8] {
                    let ranges = rc_wins_t_range(p, d, b, k).unwrap();
                    for t in 1..=(p * d / k + 4) {
                        let table = ranges.iter().any(|r| (r.t_lo..=r.t_hi).contains(&t));
                        let direct = rc_wins_direct(b, t, p, d, k).unwrap();
                        let in_b1 = p < 2 * d && t <= 2 * d - p;
                        if in_b1 {
                            assert!(!table || direct, "p={p} d={d} b={b} k={k} t={t}");
                        } else if k * b * t >= d * k * b {
                            // the BTk + pk branch of RC's max is active
                            assert_eq!(table, direct, "p={p} d={d} b={b} k={k} t={t}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn flops_threshold_in_k() {
        for (t, p, d) in [(16u64, 8u64, 8u64), (40, 32, 16), (100, 20, 10)] {
            let exact = |k: u64| rc_beats_gc_flops(2, t, p, d, k).unwrap();
            let (tt, s) = (t as f64, (p + d) as f64);
            let thr = tt * 2.0 * tt * s / (2.0 * tt * s + d.min(p) as f64 - tt);
            for k in 1..(2 * t) {
                assert_eq!(exact(k), (k as f64) < thr, "t={t} k={k}");
            }
            let rel = (d.min(p) as f64 - tt).abs() / (2.0 * tt * s);
            assert!((thr / tt - 1.0).abs() <= 1.1 * rel);
        }
    }

    #[test]
    fn csv_and_validation() {
        let row = csv_row(&cp(Method::Fgc, 1, 1, 2, 3, 1, false)).unwrap();
        assert_eq!(row, "fgc,1,1,2,3,1,false,6,6");
        assert!(exact_flops(&cp(Method::Gc, 0, 1, 1, 1, 1, false)).is_err());
        assert_eq!("rc-hutch".parse::<Method>().unwrap(), Method::RcHutch);
    }
}
