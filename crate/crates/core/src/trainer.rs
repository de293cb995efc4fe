//! Toy DP-SGD loop with randomized clipping on token-wise linear layers.
//!
//! Per-sample norms come from the factored layer gradients AᵀG, clipping is applied by
//! rescaling each sample's loss, and Gaussian noise σC·N(0, I) is added once to the
//! summed clipped gradient before a plain SGD update.

use crate::error::{domain, Error, Result};
use crate::estimators::{exact_norm_sq, ghost_norm_sq, sketch_norm_sq, Estimator, FactoredSample, SketchConfig};
use crate::linalg::{frob_norm_sq, matmul, matmul_nt, matmul_tn, Mat};
use crate::numerics::SeededStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

const DATA_LABEL: u64 = 0xda7a;
const BATCH_LABEL: u64 = 0xba7c;
const NORM_LABEL: u64 = 0x4e0e;
const NOISE_LABEL: u64 = 0x401e;

/// Norm routine used for clipping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Routine {
    Exact,
    Ghost,
    Hutch,
    Hutchpp,
}

impl Routine {
    pub fn as_str(self) -> &'static str {
        match self {
            Routine::Exact => "exact",
            Routine::Ghost => "ghost",
            Routine::Hutch => "hutch",
            Routine::Hutchpp => "hutchpp",
        }
    }

    fn sketch(self) -> Option<Estimator> {
        match self {
            Routine::Hutch => Some(Estimator::Hutch),
            Routine::Hutchpp => Some(Estimator::Hutchpp),
            _ => None,
        }
    }
}

impl std::str::FromStr for Routine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Routine::Exact),
            "ghost" => Ok(Routine::Ghost),
            "hutch" => Ok(Routine::Hutch),
            "hutchpp" => Ok(Routine::Hutchpp),
            other => Err(domain(format!("unknown routine '{other}'"))),
        }
    }
}

/// One sequence: inputs X (T×d₀) and a scalar target per token.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Mat,
    pub y: Vec<f64>,
}

/// Stack of token-wise linear layers; layer l maps width d_l to p_l = d_{l+1}, the last
/// emits one scalar per token. Loss is the token-mean squared error.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub layers: Vec<Mat>,
}

impl ToyModel {
    pub fn new(layers: Vec<Mat>) -> Result<Self> {
        if layers.is_empty() {
            return Err(domain("model needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].cols() != w[1].rows() {
                return Err(Error::Dimension(format!(
                    "layer emits width {} but the next consumes {}",
                    w[0].cols(),
                    w[1].rows()
                )));
            }
        }
        if layers[layers.len() - 1].cols() != 1 {
            return Err(Error::Dimension("last layer must emit one scalar per token".into()));
        }
        Ok(Self { layers })
    }

    /// Gaussian init with stddev 1/√fan_in per layer.
    pub fn init(widths: &[usize], stream: &mut SeededStream) -> Result<Self> {
        if widths.len() < 2 || *widths.last().unwrap() != 1 || widths.contains(&0) {
            return Err(domain("widths must be positive and end in 1"));
        }
        let layers = widths
            .windows(2)
            .map(|w| Mat::gaussian(w[0], w[1], 1.0 / (w[0] as f64).sqrt(), stream))
            .collect();
        Self::new(layers)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|w| w.rows() * w.cols()).sum()
    }
}

/// What a forward hook records for one sample: the input to every layer and the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Captured {
    pub activations: Vec<Mat>,
    pub output: Mat,
    pub loss: f64,
}

fn check_sample(model: &ToyModel, s: &Sample) -> Result<()> {
    if s.x.cols() != model.input_width() || s.x.rows() != s.y.len() || s.y.is_empty() {
        return Err(Error::Dimension(format!(
            "sample is {}×{} with {} targets; model expects width {}",
            s.x.rows(),
            s.x.cols(),
            s.y.len(),
            model.input_width()
        )));
    }
    if s.x.data().iter().chain(&s.y).any(|v| !v.is_finite()) {
        return Err(domain("non-finite input"));
    }
    Ok(())
}

fn forward_one(model: &ToyModel, s: &Sample) -> Result<Captured> {
    check_sample(model, s)?;
    let mut activations = Vec::with_capacity(model.layers.len());
    let mut h = s.x.clone();
    for w in &model.layers {
        let next = matmul(&h, w)?;
        activations.push(h);
        h = next;
    }
    let t = s.y.len() as f64;
    let loss = h.data().iter().zip(&s.y).map(|(o, y)| (o - y).powi(2)).sum::<f64>() / t;
    Ok(Captured { activations, output: h, loss })
}

/// Per-sample losses and captured layer inputs.
pub fn forward_capture(model: &ToyModel, batch: &[Sample]) -> Result<Vec<Captured>> {
    batch.iter().map(|s| forward_one(model, s)).collect()
}

/// Output gradients G_l = ∂L_i/∂(A_l W_l) for every layer, last layer first in the chain.
fn backward_one(model: &ToyModel, cap: &Captured, y: &[f64]) -> Result<Vec<Mat>> {
    let t = y.len() as f64;
    let g_out: Vec<f64> = cap.output.data().iter().zip(y).map(|(o, y)| 2.0 * (o - y) / t).collect();
    let mut g = Mat::from_vec(y.len(), 1, g_out)?;
    let mut grads = vec![Mat::zeros(0, 0); model.layers.len()];
    for l in (0..model.layers.len()).rev() {
        let next = if l > 0 { matmul_nt(&g, &model.layers[l])? } else { Mat::zeros(0, 0) };
        grads[l] = std::mem::replace(&mut g, next);
    }
    Ok(grads)
}

/// Factored per-layer gradients (A_l, G_l) of one sample.
pub fn factored_gradients(model: &ToyModel, cap: &Captured, y: &[f64]) -> Result<Vec<FactoredSample>> {
    let gs = backward_one(model, cap, y)?;
    cap.activations.iter().cloned().zip(gs).map(|(a, g)| FactoredSample::new(a, g)).collect()
}

/// Per-sample, per-layer norm estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct NormEstimates {
    /// layer_n_hat[i][l]
    pub layer_n_hat: Vec<Vec<f64>>,
    /// n̂_i = Σ_l layer_n_hat[i][l]
    pub n_hat: Vec<f64>,
}

/// Sketch stream for (step, sample, layer); fresh projections every call.
pub fn norm_stream(seed: u64, step: u64, sample: u64, layer: u64) -> SeededStream {
    SeededStream::new(seed).derive(&[NORM_LABEL, step, sample, layer])
}

/// Noise stream for a step; draws fill layers in order, row-major.
pub fn noise_stream(seed: u64, step: u64) -> SeededStream {
    SeededStream::new(seed).derive(&[NOISE_LABEL, step])
}

/// First backward pass and per-layer norm estimation.
pub fn per_sample_norms(
    factored: &[Vec<FactoredSample>],
    routine: Routine,
    k: usize,
    seed: u64,
    step: u64,
) -> Result<NormEstimates> {
    let layer_n_hat: Vec<Vec<f64>> = factored
        .par_iter()
        .enumerate()
        .map(|(i, layers)| {
            layers
                .iter()
                .enumerate()
                .map(|(l, fs)| match routine.sketch() {
                    None if routine == Routine::Exact => exact_norm_sq(fs),
                    None => ghost_norm_sq(fs),
                    Some(est) => {
                        let mut st = norm_stream(seed, step, i as u64, l as u64);
                        sketch_norm_sq(fs, &SketchConfig::new(k, est), &mut st)
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let n_hat = layer_n_hat.iter().map(|v| v.iter().sum()).collect();
    Ok(NormEstimates { layer_n_hat, n_hat })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub clip: f64,
    pub sigma: f64,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub routine: Routine,
    pub k: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) || !(self.sigma >= 0.0) || !(self.lr > 0.0) {
            return Err(domain(format!(
                "need C > 0, sigma >= 0, lr > 0; got C={} sigma={} lr={}",
                self.clip, self.sigma, self.lr
            )));
        }
        if self.batch == 0 {
            return Err(domain("batch size must be positive"));
        }
        if self.routine.sketch().is_some() && self.k == 0 {
            return Err(domain("sketch dimension k must be positive"));
        }
        Ok(())
    }
}

/// Everything observed during one clipped, noisy step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub losses: Vec<f64>,
    pub layer_n_hat: Vec<Vec<f64>>,
    pub n_hat: Vec<f64>,
    /// True ‖∇L_i‖², always computed exactly for diagnostics.
    pub n_true: Vec<f64>,
    /// min(C/√n̂_i, 1)
    pub rescale: Vec<f64>,
    /// √(n_i/n̂_i): the clipped norm over C when clipping is active.
    pub z_ratio: Vec<f64>,
    pub clean_grad: Vec<Mat>,
    pub noisy_grad: Vec<Mat>,
    pub clean_norm: f64,
    pub noisy_norm: f64,
}

impl StepRecord {
    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

/// One DP-SGD-RC update of `model` in place.
pub fn clipped_noisy_step(model: &mut ToyModel, batch: &[Sample], cfg: &TrainConfig, step: u64) -> Result<StepRecord> {
    cfg.validate()?;
    let caps = forward_capture(model, batch)?;
    let factored: Vec<Vec<FactoredSample>> = caps
        .iter()
        .zip(batch)
        .map(|(c, s)| factored_gradients(model, c, &s.y))
        .collect::<Result<_>>()?;
    let est = per_sample_norms(&factored, cfg.routine, cfg.k, cfg.seed, step)?;
    let n_true: Vec<f64> = factored
        .iter()
        .map(|ls| ls.iter().map(exact_norm_sq).sum::<Result<f64>>())
        .collect::<Result<_>>()?;
    let rescale: Vec<f64> = est
        .n_hat
        .iter()
        .map(|&n| if n > 0.0 { (cfg.clip / n.sqrt()).min(1.0) } else { 1.0 })
        .collect();
    let z_ratio = n_true.iter().zip(&est.n_hat).map(|(&t, &e)| if e > 0.0 { (t / e).sqrt() } else { 1.0 }).collect();

    // second backward: the rescaled loss Σ c_i L_i scales each G_l by c_i
    let mut clean_grad: Vec<Mat> = model.layers.iter().map(|w| Mat::zeros(w.rows(), w.cols())).collect();
    for (layers, &c) in factored.iter().zip(&rescale) {
        for (acc, fs) in clean_grad.iter_mut().zip(layers) {
            acc.axpy(c, &matmul_tn(fs.a(), fs.g())?)?;
        }
    }
    let mut noisy_grad = clean_grad.clone();
    if cfg.sigma > 0.0 {
        let mut ns = noise_stream(cfg.seed, step);
        let mut z = Vec::new();
        for g in noisy_grad.iter_mut() {
            z.resize(g.data().len(), 0.0);
            ns.fill_gaussian(&mut z, cfg.sigma * cfg.clip);
            g.data_mut().iter_mut().zip(&z).for_each(|(v, n)| *v += n);
        }
    }
    let clean_norm = clean_grad.iter().map(frob_norm_sq).sum::<f64>().sqrt();
    let noisy_norm = noisy_grad.iter().map(frob_norm_sq).sum::<f64>().sqrt();
    if !noisy_norm.is_finite() {
        return Err(Error::Numerical(format!("non-finite gradient at step {step}; lower lr or C")));
    }
    for (w, g) in model.layers.iter_mut().zip(&noisy_grad) {
        w.axpy(-cfg.lr, g)?;
    }
    Ok(StepRecord {
        step,
        losses: caps.iter().map(|c| c.loss).collect(),
        layer_n_hat: est.layer_n_hat,
        n_hat: est.n_hat,
        n_true,
        rescale,
        z_ratio,
        clean_grad,
        noisy_grad,
        clean_norm,
        noisy_norm,
    })
}

/// Synthetic teacher–student regression: y = X·w* + noise, per token.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub tokens: usize,
    pub width: usize,
    pub teacher: Vec<f64>,
    pub label_noise: f64,
}

impl SyntheticTask {
    pub fn new(tokens: usize, width: usize, label_noise: f64, seed: u64) -> Result<Self> {
        if tokens == 0 || width == 0 || !(label_noise >= 0.0) {
            return Err(domain("tokens and width must be positive, label noise nonnegative"));
        }
        let mut st = SeededStream::new(seed).derive(&[DATA_LABEL, u64::MAX]);
        let teacher = (0..width).map(|_| st.gaussian() / (width as f64).sqrt()).collect();
        Ok(Self { tokens, width, teacher, label_noise })
    }

    /// Deterministic dataset of `n` samples.
    pub fn dataset(&self, n: usize, seed: u64) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let mut st = SeededStream::new(seed).derive(&[DATA_LABEL, i as u64]);
                let x = Mat::gaussian(self.tokens, self.width, 1.0, &mut st);
                let y = (0..self.tokens)
                    .map(|t| {
                        let clean: f64 = x.row(t).iter().zip(&self.teacher).map(|(a, b)| a * b).sum();
                        clean + self.label_noise * st.gaussian()
                    })
                    .collect();
                Sample { x, y }
            })
            .collect()
    }
}

/// Batch indices for a step: all of the data when B ≥ N, otherwise B distinct indices.
pub fn batch_indices(n: usize, batch: usize, seed: u64, step: u64) -> Vec<usize> {
    if batch >= n {
        return (0..n).collect();
    }
    let mut st = SeededStream::new(seed).derive(&[BATCH_LABEL, step]);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..batch {
        let j = i + (st.uniform() * (n - i) as f64) as usize;
        idx.swap(i, j.min(n - 1));
    }
    idx.truncate(batch);
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ToyModel,
    pub records: Vec<StepRecord>,
    /// Mean batch loss before each update.
    pub loss_trace: Vec<f64>,
}

impl TrainOutcome {
    pub const CSV_HEADER: &'static str = "step,sample,layer,n_hat,rescale,z_ratio,loss";

    /// One row per (step, sample, layer).
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            for (i, layers) in r.layer_n_hat.iter().enumerate() {
                for (l, n) in layers.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{:.17e},{:.17e},{:.17e},{:.17e}",
                        r.step, i, l, n, r.rescale[i], r.z_ratio[i], r.losses[i]
                    );
                }
            }
        }
        out
    }
}

/// Runs `cfg.steps` updates on batches drawn from `data`. Deterministic given the seed.
pub fn train(mut model: ToyModel, data: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(domain("empty dataset"));
    }
    let mut records = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps as u64 {
        let batch: Vec<Sample> =
            batch_indices(data.len(), cfg.batch, cfg.seed, step).into_iter().map(|i| data[i].clone()).collect();
        records.push(clipped_noisy_step(&mut model, &batch, cfg, step)?);
    }
    let loss_trace = records.iter().map(StepRecord::mean_loss).collect();
    Ok(TrainOutcome { model, records, loss_trace })
}

/// Mean loss of `model` over `data`.
pub fn evaluate(model: &ToyModel, data: &[Sample]) -> Result<f64> {
    let caps = forward_capture(model, data)?;
    Ok(caps.iter().map(|c| c.loss).sum::<f64>() / caps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(seed: u64) -> (ToyModel, Vec<Sample>) {
        let task = SyntheticTask::new(6, 5, 0.1, seed).unwrap();
        let model = ToyModel::init(&[5, 4, 1], &mut SeededStream::new(seed + 1)).unwrap();
        (model, task.dataset(8, seed))
    }

    /// Straight-line forward with explicit loops.
    fn naive_loss(model: &ToyModel, s: &Sample) -> f64 {
        let mut loss = 0.0;
        for t in 0..s.y.len() {
            let mut h: Vec<f64> = s.x.row(t).to_vec();
            for w in &model.layers {
                h = (0..w.cols()).map(|j| (0..w.rows()).map(|i| h[i] * w.get(i, j)).sum()).collect();
            }
            loss += (h[0] - s.y[t]).powi(2);
        }
        loss / s.y.len() as f64
    }

    #[test]
    fn forward_matches_loops() {
        let (model, data) = setup(3);
        for (c, s) in forward_capture(&model, &data).unwrap().iter().zip(&data) {
            assert!((c.loss - naive_loss(&model, s)).abs() < 1e-12 * c.loss.max(1.0));
        }
    }

    #[test]
    fn zero_weights_and_identity() {
        let model = ToyModel::new(vec![Mat::zeros(3, 2), Mat::zeros(2, 1)]).unwrap();
        let s = Sample { x: Mat::from_fn(2, 3, |i, j| (i + j) as f64), y: vec![1.0, -3.0] };
        assert_eq!(forward_one(&model, &s).unwrap().loss, 5.0);
        let id = ToyModel::new(vec![Mat::identity(1)]).unwrap();
        let s = Sample { x: Mat::from_vec(1, 1, vec![2.0]).unwrap(), y: vec![0.5] };
        assert_eq!(forward_one(&id, &s).unwrap().loss, 2.25);
        assert!(forward_one(&id, &Sample { x: Mat::zeros(1, 2), y: vec![0.0] }).is_err());
        assert!(ToyModel::new(vec![Mat::zeros(3, 2), Mat::zeros(3, 1)]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (model, data) = setup(5);
        let s = &data[0];
        let cap = forward_one(&model, s).unwrap();
        let fs = factored_gradients(&model, &cap, &s.y).unwrap();
        let mut st = SeededStream::new(9);
        for _ in 0..20 {
            let l = (st.uniform() * model.layers.len() as f64) as usize;
            let w = &model.layers[l];
            let (i, j) = ((st.uniform() * w.rows() as f64) as usize, (st.uniform() * w.cols() as f64) as usize);
            let analytic = matmul_tn(fs[l].a(), fs[l].g()).unwrap().get(i, j);
            let eps = 1e-4;
            let mut plus = model.clone();
            plus.layers[l].set(i, j, w.get(i, j) + eps);
            let mut minus = model.clone();
            minus.layers[l].set(i, j, w.get(i, j) - eps);
            let fd = (naive_loss(&plus, s) - naive_loss(&minus, s)) / (2.0 * eps);
            assert!((fd - analytic).abs() <= 1e-5 * analytic.abs().max(1e-3), "{fd} {analytic}");
        }
    }

    #[test]
    fn exact_and_ghost_agree_and_layers_add_up() {
        let (model, data) = setup(7);
        let caps = forward_capture(&model, &data).unwrap();
        let fs: Vec<_> = caps.iter().zip(&data).map(|(c, s)| factored_gradients(&model, c, &s.y).unwrap()).collect();
        let ex = per_sample_norms(&fs, Routine::Exact, 0, 1, 0).unwrap();
        let gh = per_sample_norms(&fs, Routine::Ghost, 0, 1, 0).unwrap();
        for (i, layers) in fs.iter().enumerate() {
            assert!((ex.n_hat[i] - gh.n_hat[i]).abs() <= 1e-10 * ex.n_hat[i]);
            let flat: f64 = layers.iter().map(|f| frob_norm_sq(&matmul_tn(f.a(), f.g()).unwrap())).sum();
            assert!((ex.n_hat[i] - flat).abs() <= 1e-12 * flat);
        }
    }

    #[test]
    fn hutch_norms_unbiased() {
        let (model, data) = setup(11);
        let cap = forward_one(&model, &data[0]).unwrap();
        let fs = vec![factored_gradients(&model, &cap, &data[0].y).unwrap()[..1].to_vec()];
        let exact = exact_norm_sq(&fs[0][0]).unwrap();
        let draws: Vec<f64> =
            (0..10_000).map(|step| per_sample_norms(&fs, Routine::Hutch, 4, 2, step).unwrap().n_hat[0]).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((mean - exact).abs() < 3.0 * (var / draws.len() as f64).sqrt(), "{mean} {exact}");
    }

    #[test]
    fn inactive_clipping_is_vanilla_sgd() {
        let (model, data) = setup(13);
        let cfg = TrainConfig { clip: 1e9, sigma: 0.0, lr: 0.05, batch: 8, steps: 1, routine: Routine::Exact, k: 0, seed: 1 };
        let mut m = model.clone();
        clipped_noisy_step(&mut m, &data, &cfg, 0).unwrap();
        let caps = forward_capture(&model, &data).unwrap();
        for l in 0..model.layers.len() {
            let mut g = Mat::zeros(model.layers[l].rows(), model.layers[l].cols());
            for (c, s) in caps.iter().zip(&data) {
                let fs = factored_gradients(&model, c, &s.y).unwrap();
                g.axpy(1.0, &matmul_tn(fs[l].a(), fs[l].g()).unwrap()).unwrap();
            }
            let mut want = model.layers[l].clone();
            want.axpy(-0.05, &g).unwrap();
            assert!(m.layers[l].sub(&want).unwrap().max_abs() <= 1e-10 * want.max_abs());
        }
    }

    #[test]
    fn clipped_contributions_bounded_and_z_recorded() {
        let (mut model, data) = setup(17);
        let cfg = TrainConfig { clip: 0.05, sigma: 0.0, lr: 0.01, batch: 8, steps: 1, routine: Routine::Exact, k: 0, seed: 1 };
        let rec = clipped_noisy_step(&mut model, &data, &cfg, 0).unwrap();
        for i in 0..data.len() {
            assert!(rec.rescale[i] * rec.n_true[i].sqrt() <= cfg.clip + 1e-9);
        }
        let (mut model, _) = setup(17);
        let cfg = TrainConfig { routine: Routine::Hutch, k: 3, ..cfg };
        let rec = clipped_noisy_step(&mut model, &data, &cfg, 0).unwrap();
        for i in 0..data.len() {
            let z = (rec.n_true[i] / rec.n_hat[i]).sqrt();
            assert!((rec.z_ratio[i] - z).abs() <= 1e-9 * z);
            if rec.rescale[i] < 1.0 {
                let ratio = rec.rescale[i] * rec.n_true[i].sqrt() / cfg.clip;
                assert!((ratio - z).abs() <= 1e-9 * z);
            }
        }
    }

    #[test]
    fn noise_has_calibrated_scale() {
        let (model, data) = setup(19);
        let cfg = TrainConfig { clip: 0.7, sigma: 1.3, lr: 1e-9, batch: 2, steps: 1000, routine: Routine::Exact, k: 0, seed: 4 };
        let out = train(model, &data, &cfg).unwrap();
        let diffs: Vec<f64> = out
            .records
            .iter()
            .flat_map(|r| {
                r.noisy_grad
                    .iter()
                    .zip(&r.clean_grad)
                    .flat_map(|(n, c)| n.data().iter().zip(c.data()).map(|(a, b)| a - b).collect::<Vec<_>>())
            })
            .collect();
        let sd = (diffs.iter().map(|v| v * v).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!((sd / (cfg.sigma * cfg.clip) - 1.0).abs() < 0.05, "{sd}");
    }

    #[test]
    fn convex_full_batch_descends() {
        let task = SyntheticTask::new(8, 6, 0.1, 21).unwrap();
        let data = task.dataset(16, 21);
        let model = ToyModel::init(&[6, 1], &mut SeededStream::new(22)).unwrap();
        let cfg = TrainConfig { clip: 1e9, sigma: 0.0, lr: 0.01, batch: 16, steps: 40, routine: Routine::Exact, k: 0, seed: 1 };
        let out = train(model, &data, &cfg).unwrap();
        for w in out.loss_trace[5..].windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (model, data) = setup(23);
        let cfg = TrainConfig { clip: 0.5, sigma: 1.0, lr: 0.02, batch: 3, steps: 10, routine: Routine::Hutch, k: 4, seed: 8 };
        let a = train(model.clone(), &data, &cfg).unwrap();
        let b = train(model, &data, &cfg).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.csv_rows(), b.csv_rows());
        assert_eq!(a.csv_rows().lines().count(), 10 * 3 * 2);
    }

    #[test]
    fn batch_indices_distinct() {
        let idx = batch_indices(50, 10, 3, 7);
        let mut s = idx.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 10);
        assert!(idx.iter().all(|&i| i < 50));
        assert_eq!(batch_indices(5, 10, 3, 7), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn config_checks() {
        let cfg = TrainConfig { clip: 0.0, sigma: 0.0, lr: 0.1, batch: 1, steps: 1, routine: Routine::Exact, k: 0, seed: 0 };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig { clip: 1.0, routine: Routine::Hutch, ..cfg }.validate().is_err());
        assert_eq!("hutchpp".parse::<Routine>().unwrap(), Routine::Hutchpp);
    }
}
