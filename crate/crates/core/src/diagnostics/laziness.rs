//! Linearization distance of one residual block after a single update.
//!
//! For block `ℓ` of a [`ToyLinearResNet`] the change of its output under
//! `(ΔW₁, ΔW₂)` is exactly `s·(W₂ΔW₁h + ΔW₂W₁h) + s·ΔW₂ΔW₁h`. The first term
//! is the change of the block's linearization, the second is what the
//! linearization misses. The metric is the ratio of their norms; `s`
//! cancels. A layer learns lazily when this ratio vanishes with depth.
//!
//! Weights are regenerated block by block from their RNG streams so memory
//! stays at a few `N × N` matrices regardless of depth.

use serde::{Deserialize, Serialize};

use super::{fit_loglog_slope, quartiles, LogLogFit};
use crate::error::{Error, Result};
use crate::model::ToyLinearResNet;
use crate::parameterization::ParamKind;
use crate::tensor::{fill_gaussian, gemm, MatMut, MatRef, RngStream};

/// Which block matrices receive the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    #[default]
    Both,
    /// Only `W₂`. The block is affine in `W₂`, so the metric is identically 0.
    W2,
}

/// How the gradient becomes an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// `ΔW = −η·sign(∇W)`, the first Adam step as `ε → 0`.
    #[default]
    Sign,
    /// `ΔW = −η·∇W`.
    Gradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LazinessConfig {
    /// `MuP` (unscaled branches, depth-independent LR) or `DepthAlpha`.
    pub kinds: Vec<ParamKind>,
    pub depths: Vec<usize>,
    pub n_seeds: usize,
    pub eta0: f64,
    pub width: usize,
    pub batch: usize,
    /// Block whose update is measured; must be below every depth.
    pub layer: usize,
    pub mode: UpdateMode,
    pub rule: UpdateRule,
    pub seed: u64,
    pub jobs: usize,
    /// A point is recorded as divergent when the squared backward gain
    /// `‖g^{ℓ+1}‖²/‖g^L‖²` exceeds this, or when anything is non-finite.
    pub divergence_threshold: f64,
}

impl Default for LazinessConfig {
    fn default() -> Self {
        LazinessConfig {
            kinds: vec![ParamKind::depth_alpha(0.5).unwrap(), ParamKind::COMPLETE_P, ParamKind::MuP],
            depths: vec![8, 16, 32, 64, 128, 256, 512],
            n_seeds: 50,
            eta0: 1e-4,
            width: 256,
            batch: 16,
            layer: 4,
            mode: UpdateMode::Both,
            rule: UpdateRule::Sign,
            seed: 0,
            jobs: 1,
            divergence_threshold: 1e6,
        }
    }
}

/// One `(variant, L, seed)` measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LazinessPoint {
    pub variant: String,
    pub depth: usize,
    pub seed: usize,
    /// `None` when the point diverged.
    pub metric: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LazinessSummary {
    pub variant: String,
    pub depth: usize,
    pub n_valid: usize,
    pub n_events: usize,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantFit {
    pub variant: String,
    /// Fit of the median over depths where at least half the seeds are
    /// valid and the median is positive; `None` with fewer than 3 such depths.
    pub fit: Option<LogLogFit>,
    pub n_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LazinessReport {
    pub points: Vec<LazinessPoint>,
    pub summaries: Vec<LazinessSummary>,
    pub fits: Vec<VariantFit>,
}

impl LazinessReport {
    pub fn fit(&self, variant: &str) -> Option<&VariantFit> {
        self.fits.iter().find(|f| f.variant == variant)
    }
}

/// `‖ΔW₂ΔW₁h‖ / ‖W₂ΔW₁h + ΔW₂W₁h‖` for `N × N` weights and `N × B` input.
/// Returns 0 when both norms vanish.
pub fn laziness_metric(w1: &[f64], w2: &[f64], h: &[f64], dw1: &[f64], dw2: &[f64], width: usize, batch: usize) -> f64 {
    let n = width;
    let mm = |a: &[f64], b: &[f64], cols: usize, beta: f64, out: &mut [f64]| {
        gemm(1.0, MatRef::new(a, n, n), MatRef::new(b, n, cols), beta, MatMut::new(out, n, cols));
    };
    let mut d1h = vec![0.0; n * batch];
    mm(dw1, h, batch, 0.0, &mut d1h);
    let mut w1h = vec![0.0; n * batch];
    mm(w1, h, batch, 0.0, &mut w1h);
    let mut lin = vec![0.0; n * batch];
    mm(w2, &d1h, batch, 0.0, &mut lin);
    mm(dw2, &w1h, batch, 1.0, &mut lin);
    let mut quad = vec![0.0; n * batch];
    mm(dw2, &d1h, batch, 0.0, &mut quad);
    let lin_norm = norm(&lin);
    let quad_norm = norm(&quad);
    if quad_norm == 0.0 {
        0.0
    } else {
        quad_norm / lin_norm
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct Variant {
    label: String,
    exponent: f64,
    lr_exponent: f64,
}

fn variant(kind: ParamKind) -> Result<Variant> {
    match kind {
        ParamKind::MuP => Ok(Variant { label: kind.display_name(), exponent: 0.0, lr_exponent: 0.0 }),
        ParamKind::DepthAlpha(a) => {
            Ok(Variant { label: kind.display_name(), exponent: a.get(), lr_exponent: a.get() - 1.0 })
        }
        ParamKind::Sp => Err(Error::InvalidArgument("laziness experiment takes mup or depth_alpha variants".into())),
    }
}

struct Job {
    depth: usize,
    seed: usize,
}

fn job_seed(base: u64, seed: usize) -> u64 {
    base ^ (seed as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

const INPUT_STREAM: u64 = u64::MAX;
const READOUT_STREAM: u64 = u64::MAX - 1;

fn run_job(cfg: &LazinessConfig, variants: &[Variant], job: &Job) -> Vec<LazinessPoint> {
    let (n, b, ell, depth) = (cfg.width, cfg.batch, cfg.layer, job.depth);
    let seed = job_seed(cfg.seed, job.seed);
    let l = depth as f64;
    let scales: Vec<f64> = variants.iter().map(|v| l.powf(-v.exponent)).collect();
    let mut events: Vec<Option<String>> = vec![None; variants.len()];

    let mut h0 = vec![0.0; n * b];
    fill_gaussian(&mut RngStream::new(seed, INPUT_STREAM).rng(), &mut h0, 1.0);
    let mut hs = vec![h0; variants.len()];
    let mut tmp = vec![0.0; n * b];
    for k in 0..ell {
        let (w1, w2) = ToyLinearResNet::block_weights(n, seed, k);
        for (h, &s) in hs.iter_mut().zip(&scales) {
            ToyLinearResNet::block(n, s, &w1, &w2, h, b, &mut tmp);
            std::mem::swap(h, &mut tmp);
        }
    }

    let mut g_last = vec![0.0; n * b];
    fill_gaussian(&mut RngStream::new(seed, READOUT_STREAM).rng(), &mut g_last, 1.0);
    g_last.iter_mut().for_each(|v| *v /= n as f64);
    let g_last_sq: f64 = g_last.iter().map(|v| v * v).sum();
    let mut gs = vec![g_last; variants.len()];
    let mut t = vec![0.0; n * b];
    for k in (ell + 1..depth).rev() {
        if events.iter().all(Option::is_some) {
            break;
        }
        let (w1, w2) = ToyLinearResNet::block_weights(n, seed, k);
        for (i, g) in gs.iter_mut().enumerate() {
            if events[i].is_some() {
                continue;
            }
            gemm(1.0, MatRef::new(&w2, n, n).t(), MatRef::new(g, n, b), 0.0, MatMut::new(&mut t, n, b));
            gemm(scales[i], MatRef::new(&w1, n, n).t(), MatRef::new(&t, n, b), 1.0, MatMut::new(g, n, b));
            let gain = g.iter().map(|v| v * v).sum::<f64>() / g_last_sq;
            if !gain.is_finite() || gain > cfg.divergence_threshold {
                events[i] = Some(format!("backward signal gain {gain:.3e} at block {k}"));
            }
        }
    }

    let (w1, w2) = ToyLinearResNet::block_weights(n, seed, ell);
    let mut w1h = vec![0.0; n * b];
    let mut w2tg = vec![0.0; n * b];
    let mut out = Vec::with_capacity(variants.len());
    for (i, v) in variants.iter().enumerate() {
        let point = |metric, event| LazinessPoint { variant: v.label.clone(), depth, seed: job.seed, metric, event };
        if let Some(e) = events[i].take() {
            out.push(point(None, Some(e)));
            continue;
        }
        if !hs[i].iter().all(|x| x.is_finite()) {
            out.push(point(None, Some(format!("non-finite activation at block {ell}"))));
            continue;
        }
        let (h, g, s) = (&hs[i], &gs[i], scales[i]);
        let eta = cfg.eta0 * l.powf(v.lr_exponent);
        gemm(1.0, MatRef::new(&w1, n, n), MatRef::new(h, n, b), 0.0, MatMut::new(&mut w1h, n, b));
        gemm(1.0, MatRef::new(&w2, n, n).t(), MatRef::new(g, n, b), 0.0, MatMut::new(&mut w2tg, n, b));
        let mut dw1 = vec![0.0; n * n];
        let mut dw2 = vec![0.0; n * n];
        gemm(s, MatRef::new(g, n, b), MatRef::new(&w1h, n, b).t(), 0.0, MatMut::new(&mut dw2, n, n));
        if cfg.mode == UpdateMode::Both {
            gemm(s, MatRef::new(&w2tg, n, b), MatRef::new(h, n, b).t(), 0.0, MatMut::new(&mut dw1, n, n));
        }
        for d in dw1.iter_mut().chain(dw2.iter_mut()) {
            *d = match cfg.rule {
                UpdateRule::Sign => -eta * sign(*d),
                UpdateRule::Gradient => -eta * *d,
            };
        }
        let m = laziness_metric(&w1, &w2, h, &dw1, &dw2, n, b);
        if m.is_finite() {
            out.push(point(Some(m), None));
        } else {
            out.push(point(None, Some("non-finite metric".into())));
        }
    }
    out
}

/// Runs every `(depth, seed)` job and aggregates per variant and depth.
pub fn laziness_experiment(cfg: &LazinessConfig) -> Result<LazinessReport> {
    if cfg.kinds.is_empty() || cfg.depths.is_empty() || cfg.n_seeds == 0 {
        return Err(Error::InvalidArgument("need at least one variant, depth and seed".into()));
    }
    if cfg.width == 0 || cfg.batch == 0 || !(cfg.eta0.is_finite() && cfg.eta0 > 0.0) {
        return Err(Error::InvalidArgument("width, batch and eta0 must be positive".into()));
    }
    if let Some(&d) = cfg.depths.iter().find(|&&d| cfg.layer >= d) {
        return Err(Error::InvalidArgument(format!("layer index {} must be < every depth, got depth {d}", cfg.layer)));
    }
    let variants = cfg.kinds.iter().map(|&k| variant(k)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<Job> =
        cfg.depths.iter().flat_map(|&depth| (0..cfg.n_seeds).map(move |seed| Job { depth, seed })).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let per_job: Vec<Vec<LazinessPoint>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter().map(|j| run_job(cfg, &variants, j)).collect()
    });

    let mut points = Vec::with_capacity(per_job.len() * variants.len());
    for v in &variants {
        for job_points in &per_job {
            points.extend(job_points.iter().filter(|p| p.variant == v.label).cloned());
        }
    }

    let mut summaries = Vec::new();
    let mut fits = Vec::new();
    for v in &variants {
        let mut fit_points = Vec::new();
        let mut total_events = 0;
        for &depth in &cfg.depths {
            let at: Vec<&LazinessPoint> = points.iter().filter(|p| p.variant == v.label && p.depth == depth).collect();
            let values: Vec<f64> = at.iter().filter_map(|p| p.metric).collect();
            let n_events = at.len() - values.len();
            total_events += n_events;
            let q = quartiles(&values);
            if let Some([_, med, _]) = q {
                if 2 * values.len() >= at.len() && med > 0.0 {
                    fit_points.push((depth as f64, med));
                }
            }
            summaries.push(LazinessSummary {
                variant: v.label.clone(),
                depth,
                n_valid: values.len(),
                n_events,
                q1: q.map(|q| q[0]),
                median: q.map(|q| q[1]),
                q3: q.map(|q| q[2]),
            });
        }
        fits.push(VariantFit {
            variant: v.label.clone(),
            fit: fit_loglog_slope(&fit_points).ok(),
            n_events: total_events,
        });
    }
    Ok(LazinessReport { points, summaries, fits })
}
