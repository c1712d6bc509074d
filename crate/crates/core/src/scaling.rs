//! Parameter and FLOP accounting, the batch-size law, token budgets, N:L
//! grids and power-law fits for compute-optimality studies.
//!
//! # FLOP accounting
//!
//! [`flops_detailed`] counts, per token, the forward pass of the
//! transformer in [`crate::model`] with context length `S`, and charges the
//! backward pass at twice the forward cost (training = 3 × forward):
//!
//! | term                                   | forward FLOPs per token |
//! |----------------------------------------|-------------------------|
//! | embedding (as a one-hot product)       | `2NV`                   |
//! | QKV projection, per layer              | `6N²`                   |
//! | attention logits `QKᵀ`, per layer      | `2SN`                   |
//! | attention value mixing, per layer      | `2SN`                   |
//! | softmax incl. scale and ALiBi, per layer | `5S·n_heads`          |
//! | output projection, per layer           | `2N²`                   |
//! | MLP up and down, per layer             | `16N²`                  |
//! | ReLU², per layer                       | `8N`                    |
//! | bias adds, per layer                   | `9N`                    |
//! | two LayerNorms, per layer              | `14N`                   |
//! | residual scale and add, per layer      | `4N`                    |
//! | final LayerNorm                        | `7N`                    |
//! | unembedding                            | `2NV`                   |
//!
//! Attention is charged at the full context `S` for every token.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VOCAB: usize = 50257;
pub const DEFAULT_SEQ_LEN: usize = 2048;
pub const DEFAULT_TPP: f64 = 20.0;

/// `12·N²·L`: QKV, O and a 4N-wide MLP per layer, ignoring biases and norms.
pub fn nonemb_params(n: u64, l: u64) -> u64 {
    12 * n * n * l
}

/// Non-embedding parameters plus untied embedding and unembedding.
pub fn total_params(n: u64, l: u64, vocab: u64) -> u64 {
    nonemb_params(n, l) + 2 * vocab * n
}

/// Batch size law `max(32, 0.7857·F^0.1527 − 306.8)`, rounded to the nearest
/// multiple of 8 with exact halves rounding up.
pub fn batch_size_from_flops(flops: f64) -> usize {
    let raw = if flops > 0.0 { 0.7857 * flops.powf(0.1527) - 306.8 } else { f64::NEG_INFINITY };
    let b = raw.max(32.0);
    8 * (b / 8.0 + 0.5).floor() as usize
}

/// `round(tpp·P_total)`.
pub fn tokens_for_tpp(p_total: u64, tpp: f64) -> Result<u64> {
    if !(tpp.is_finite() && tpp >= 0.0) {
        return Err(Error::InvalidArgument(format!("tpp must be >= 0, got {tpp}")));
    }
    Ok((tpp * p_total as f64).round() as u64)
}

pub fn flops_6nd(params: f64, tokens: f64) -> f64 {
    6.0 * params * tokens
}

/// Shape needed for FLOP accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopConfig {
    pub width: usize,
    pub layers: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub d_head: usize,
}

impl FlopConfig {
    /// GPT-2 vocabulary, 2048-token context and 64-wide heads.
    pub fn standard(width: usize, layers: usize) -> Self {
        FlopConfig { width, layers, vocab_size: DEFAULT_VOCAB, seq_len: DEFAULT_SEQ_LEN, d_head: 64 }
    }
}

/// Forward FLOPs per token; see the module docs for the term list.
pub fn forward_flops_per_token(c: &FlopConfig) -> f64 {
    let n = c.width as f64;
    let s = c.seq_len as f64;
    let v = c.vocab_size as f64;
    let heads = (c.width / c.d_head.max(1)) as f64;
    let per_layer = 6.0 * n * n
        + 4.0 * s * n
        + 5.0 * s * heads
        + 2.0 * n * n
        + 16.0 * n * n
        + 8.0 * n
        + 9.0 * n
        + 14.0 * n
        + 4.0 * n;
    2.0 * n * v + c.layers as f64 * per_layer + 7.0 * n + 2.0 * n * v
}

/// Training FLOPs (forward plus a backward of twice the forward cost).
pub fn flops_detailed(c: &FlopConfig, tokens: f64) -> f64 {
    3.0 * forward_flops_per_token(c) * tokens
}

/// One candidate shape of a compute-optimal study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapePoint {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub p_nonemb: u64,
    pub p_total: u64,
    pub tokens: u64,
    pub train_flops: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub n_over_l: f64,
}

impl ShapePoint {
    /// Annotates `(N, L)` with its token budget, FLOPs, batch size and steps.
    pub fn new(n: usize, l: usize, vocab: usize, seq_len: usize, tpp: f64) -> Result<Self> {
        let p_total = total_params(n as u64, l as u64, vocab as u64);
        let tokens = tokens_for_tpp(p_total, tpp)?;
        let fc = FlopConfig { width: n, layers: l, vocab_size: vocab, seq_len, d_head: 64 };
        let train_flops = flops_detailed(&fc, tokens as f64);
        let batch_size = batch_size_from_flops(train_flops);
        Ok(ShapePoint {
            n,
            l,
            p_nonemb: nonemb_params(n as u64, l as u64),
            p_total,
            tokens,
            train_flops,
            steps: tokens.div_ceil((batch_size * seq_len) as u64),
            batch_size,
            n_over_l: n as f64 / l as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub d_head: usize,
    /// Relative tolerance on `12N²L` around the target.
    pub tolerance: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Thin the grid to this many shapes, spread evenly in `log(N/L)`.
    pub count: Option<usize>,
    pub vocab: usize,
    pub seq_len: usize,
    pub tpp: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            d_head: 64,
            tolerance: 0.06,
            min_ratio: 3.0,
            max_ratio: 1000.0,
            count: None,
            vocab: DEFAULT_VOCAB,
            seq_len: DEFAULT_SEQ_LEN,
            tpp: DEFAULT_TPP,
        }
    }
}

/// Shapes with `N` a multiple of `d_head` and roughly `P_target`
/// non-embedding parameters, sorted by `N/L`.
///
/// Depth is `L = round(P_target/(12N² + 13N))`: the denominator adds the
/// `9N` bias and `4N` LayerNorm parameters of a layer to the `12N²` matrices.
pub fn nl_grid(p_target: f64, opts: &GridOptions) -> Result<Vec<ShapePoint>> {
    let dh = opts.d_head;
    if dh == 0 || !(p_target.is_finite() && p_target >= 12.0 * (dh * dh) as f64) {
        return Err(Error::InvalidArgument(format!("P_target {p_target} is below 12·d_head² for d_head {dh}")));
    }
    let mut points = Vec::new();
    let mut n = dh;
    while 12.0 * (n * n) as f64 <= p_target * (1.0 + opts.tolerance) {
        let per_layer = 12.0 * (n * n) as f64 + 13.0 * n as f64;
        let l = (p_target / per_layer).round().max(1.0) as usize;
        let p = nonemb_params(n as u64, l as u64) as f64;
        let ratio = n as f64 / l as f64;
        if (p - p_target).abs() / p_target <= opts.tolerance && ratio >= opts.min_ratio && ratio <= opts.max_ratio {
            points.push(ShapePoint::new(n, l, opts.vocab, opts.seq_len, opts.tpp)?);
        }
        n += dh;
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument(format!("no feasible shapes for P_target {p_target}")));
    }
    points.sort_by(|a, b| a.n_over_l.total_cmp(&b.n_over_l));
    Ok(match opts.count {
        Some(k) if k < points.len() => thin_log_spaced(&points, k),
        _ => points,
    })
}

fn thin_log_spaced(points: &[ShapePoint], k: usize) -> Vec<ShapePoint> {
    if k == 0 {
        return Vec::new();
    }
    let lo = points[0].n_over_l.ln();
    let hi = points[points.len() - 1].n_over_l.ln();
    let mut taken = vec![false; points.len()];
    for i in 0..k {
        let target = if k == 1 { lo } else { lo + (hi - lo) * i as f64 / (k - 1) as f64 };
        let best = (0..points.len())
            .filter(|&j| !taken[j])
            .min_by(|&a, &b| {
                let da = (points[a].n_over_l.ln() - target).abs();
                let db = (points[b].n_over_l.ln() - target).abs();
                da.total_cmp(&db)
            })
            .expect("k < points.len()");
        taken[best] = true;
    }
    points.iter().zip(taken).filter(|(_, t)| *t).map(|(p, _)| *p).collect()
}

/// `X̂(F) = (F/a)^{−b}` fitted by least squares in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub b: f64,
    /// Residual sum of squares of `ln X − ln X̂`.
    pub rss: f64,
    pub n_points: usize,
    /// Per-point `ln X − ln X̂`.
    pub residuals: Vec<f64>,
}

impl PowerLawFit {
    pub fn predict(&self, flops: f64) -> f64 {
        (flops / self.a).powf(-self.b)
    }

    /// Compute needed to reach `x`: `F(X) = a·X^{−1/b}`.
    pub fn invert(&self, x: f64) -> f64 {
        self.a * x.powf(-1.0 / self.b)
    }
}

/// Unweighted OLS fit of `ln X = −b·ln F + b·ln a`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!("power-law fit needs >= 2 points, got {}", points.len())));
    }
    if let Some((f, x)) = points.iter().find(|(f, x)| !(*f > 0.0 && *x > 0.0 && f.is_finite() && x.is_finite())) {
        return Err(Error::InvalidArgument(format!("power-law points must be positive, got ({f}, {x})")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept) = ols(&xs, &ys).ok_or_else(|| Error::InvalidArgument("all F values are equal".into()))?;
    let b = -slope;
    if b <= 0.0 {
        return Err(Error::InvalidArgument(format!("fitted exponent b = {b} is not positive")));
    }
    let a = (intercept / b).exp();
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    Ok(PowerLawFit { a, b, rss: residuals.iter().map(|r| r * r).sum(), n_points: points.len(), residuals })
}

/// Slope and intercept of the least-squares line; `None` when all `x` are equal.
pub(crate) fn ols(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= f64::EPSILON * xs.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE) {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Relative loss increase `d = (X − X̂)/X`.
pub fn loss_increase(x: f64, x_hat: f64) -> f64 {
    (x - x_hat) / x
}

/// `1 − (1 − (d_base − d_new))^{−1/b}`.
pub fn flop_savings(d_base: f64, d_new: f64, b: f64) -> f64 {
    1.0 - (1.0 - (d_base - d_new)).powf(-1.0 / b)
}
