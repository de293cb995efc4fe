//! Per-sample gradient norm estimators on the factored form AᵀG.

use crate::error::{domain, Error, Result};
use crate::linalg::{frob_norm_sq, matmul, matmul_nt, matmul_tn, qr_orthonormal_basis, Mat};
use crate::numerics::SeededStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// One example's activations A (T×d) and output gradients G (T×p).
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredSample {
    a: Mat,
    g: Mat,
}

impl FactoredSample {
    pub fn new(a: Mat, g: Mat) -> Result<Self> {
        if a.rows() != g.rows() {
            return Err(Error::Dimension(format!(
                "A has {} rows but G has {}",
                a.rows(),
                g.rows()
            )));
        }
        Ok(Self { a, g })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn g(&self) -> &Mat {
        &self.g
    }

    pub fn tokens(&self) -> usize {
        self.a.rows()
    }

    pub fn d(&self) -> usize {
        self.a.cols()
    }

    pub fn p(&self) -> usize {
        self.g.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Hutch,
    Hutchpp,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Hutch => "hutch",
            Estimator::Hutchpp => "hutchpp",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hutch" => Ok(Estimator::Hutch),
            "hutchpp" => Ok(Estimator::Hutchpp),
            other => Err(domain(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Which side of AᵀG ∈ ℝ^{d×p} the sketch contracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectSide {
    /// The larger of d and p (p on ties).
    #[default]
    Auto,
    /// Contract the d side: ‖Pᵀ AᵀG‖.
    Rows,
    /// Contract the p side: ‖AᵀG P‖.
    Cols,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SketchConfig {
    pub k: usize,
    pub estimator: Estimator,
    #[serde(default)]
    pub project_side: ProjectSide,
}

impl SketchConfig {
    pub fn new(k: usize, estimator: Estimator) -> Self {
        Self { k, estimator, project_side: ProjectSide::Auto }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(domain("sketch dimension k must be at least 1"));
        }
        Ok(())
    }

    /// (left, right) factors such that the sketch contracts right's columns.
    fn oriented<'a>(&self, s: &'a FactoredSample) -> (&'a Mat, &'a Mat) {
        let rows = match self.project_side {
            ProjectSide::Auto => s.d() > s.p(),
            ProjectSide::Rows => true,
            ProjectSide::Cols => false,
        };
        if rows {
            (&s.g, &s.a)
        } else {
            (&s.a, &s.g)
        }
    }
}

/// ‖AᵀG‖²_F by materializing AᵀG.
pub fn exact_norm_sq(s: &FactoredSample) -> Result<f64> {
    Ok(frob_norm_sq(&matmul_tn(&s.a, &s.g)?))
}

/// ⟨AAᵀ, GGᵀ⟩_F, which equals ‖AᵀG‖²_F.
pub fn ghost_norm_sq(s: &FactoredSample) -> Result<f64> {
    let aa = matmul_nt(&s.a, &s.a)?;
    let gg = matmul_nt(&s.g, &s.g)?;
    Ok(aa.data().iter().zip(gg.data()).map(|(x, y)| x * y).sum())
}

fn projection(rows: usize, k: usize, stream: &mut SeededStream) -> Mat {
    Mat::gaussian(rows, k, 1.0 / (k as f64).sqrt(), stream)
}

/// ‖Aᵀ(GP)‖²_F with P ∈ ℝ^{p×k}, entries N(0, 1/k).
pub fn hutch_norm_sq(s: &FactoredSample, cfg: &SketchConfig, stream: &mut SeededStream) -> Result<f64> {
    cfg.validate()?;
    let (a, g) = cfg.oriented(s);
    let p = projection(g.cols(), cfg.k, stream);
    Ok(frob_norm_sq(&matmul_tn(a, &matmul(g, &p)?)?))
}

/// ‖U‖² + ‖V‖² where Q spans Gᵀ(A(Aᵀ(GS))), U = Aᵀ(GQ) and V = Aᵀ(GP) − U(QᵀP).
pub fn hutchpp_norm_sq(s: &FactoredSample, cfg: &SketchConfig, stream: &mut SeededStream) -> Result<f64> {
    cfg.validate()?;
    let (a, g) = cfg.oriented(s);
    let sk = projection(g.cols(), cfg.k, stream);
    let p = projection(g.cols(), cfg.k, stream);
    let ask = matmul_tn(a, &matmul(g, &sk)?)?;
    let os = matmul_tn(g, &matmul(a, &ask)?)?;
    let q = qr_orthonormal_basis(&os);
    let u = matmul_tn(a, &matmul(g, &q)?)?;
    let mut v = matmul_tn(a, &matmul(g, &p)?)?;
    v.axpy(-1.0, &matmul(&u, &matmul_tn(&q, &p)?)?)?;
    Ok(frob_norm_sq(&u) + frob_norm_sq(&v))
}

/// Dispatch on `cfg.estimator`.
pub fn sketch_norm_sq(s: &FactoredSample, cfg: &SketchConfig, stream: &mut SeededStream) -> Result<f64> {
    match cfg.estimator {
        Estimator::Hutch => hutch_norm_sq(s, cfg, stream),
        Estimator::Hutchpp => hutchpp_norm_sq(s, cfg, stream),
    }
}

/// Sketched norms for a batch; sample i draws from `stream.substream(i)`.
pub fn sketch_norms_batch(samples: &[FactoredSample], cfg: &SketchConfig, stream: &SeededStream) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| sketch_norm_sq(s, cfg, &mut stream.substream(i as u64)))
        .collect()
}

/// Random instance family for the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    /// i.i.d. N(0, 1) entries.
    #[default]
    Normal,
    /// i.i.d. uniform [0, 1) entries; AᵀG then has a dominant rank-one component.
    Uniform,
}

impl std::str::FromStr for InstanceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(InstanceKind::Normal),
            "uniform" => Ok(InstanceKind::Uniform),
            other => Err(domain(format!("unknown instance kind '{other}'"))),
        }
    }
}

/// Mean of |est − exact| / exact with a 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub ci95: f64,
    pub median: f64,
    pub trials: usize,
}

impl ErrorStats {
    fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let mut sorted = v.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 0 { 0.5 * (sorted[mid - 1] + sorted[mid]) } else { sorted[mid] };
        Self { mean, ci95: 1.96 * (var / n).sqrt(), median, trials: v.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkResult {
    pub tokens: usize,
    pub d: usize,
    pub p: usize,
    pub k: usize,
    pub instance: InstanceKind,
    pub hutch: ErrorStats,
    pub hutchpp: ErrorStats,
}

impl BenchmarkResult {
    pub const CSV_HEADER: &'static str = "T,d,p,k,estimator,mean_rel_err,ci95_halfwidth,trials";

    /// Two CSV rows (hutch, hutchpp) without the header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for (name, st) in [("hutch", &self.hutch), ("hutchpp", &self.hutchpp)] {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.17e},{:.17e},{}",
                self.tokens, self.d, self.p, self.k, name, st.mean, st.ci95, st.trials
            );
        }
        out
    }
}

/// Relative errors of both sketches over `trials` fresh random instances.
///
/// Trial i draws its instance from `stream.derive(&[i, 0])` and the sketches from
/// `[i, 1]` and `[i, 2]`.
pub fn relative_error_benchmark(
    tokens: usize,
    d: usize,
    p: usize,
    k: usize,
    trials: usize,
    instance: InstanceKind,
    stream: &SeededStream,
) -> Result<BenchmarkResult> {
    if trials < 30 {
        return Err(domain(format!("benchmark needs at least 30 trials, got {trials}")));
    }
    let errs: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let i = i as u64;
            let mut inst = stream.derive(&[i, 0]);
            let (a, g) = match instance {
                InstanceKind::Normal => (Mat::gaussian(tokens, d, 1.0, &mut inst), Mat::gaussian(tokens, p, 1.0, &mut inst)),
                InstanceKind::Uniform => (Mat::uniform(tokens, d, &mut inst), Mat::uniform(tokens, p, &mut inst)),
            };
            let s = FactoredSample::new(a, g)?;
            let exact = exact_norm_sq(&s)?;
            let h = hutch_norm_sq(&s, &SketchConfig::new(k, Estimator::Hutch), &mut stream.derive(&[i, 1]))?;
            let hpp = hutchpp_norm_sq(&s, &SketchConfig::new(k, Estimator::Hutchpp), &mut stream.derive(&[i, 2]))?;
            Ok(((h - exact).abs() / exact, (hpp - exact).abs() / exact))
        })
        .collect::<Result<_>>()?;
    let (h, hpp): (Vec<f64>, Vec<f64>) = errs.into_iter().unzip();
    Ok(BenchmarkResult {
        tokens,
        d,
        p,
        k,
        instance,
        hutch: ErrorStats::from_samples(&h),
        hutchpp: ErrorStats::from_samples(&hpp),
    })
}
