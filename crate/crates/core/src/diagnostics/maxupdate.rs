//! One-step maximal-update probe on the ReLU residual MLP.
//!
//! Every hidden weight takes one `ε → 0` Adam step, `ΔW = −η·sign(∇W)`, with
//! the learning rate resolved by a [`ScalingPlan`] against a width-1,
//! depth-1 base. Under the plan's `η·N^{−1}·L^{α−1}` rule each block moves
//! the residual stream by `Θ(1/L)`, so the total change `‖Δh^L‖²/(N·B)` is
//! flat in depth. Holding the learning rate at its depth-unaware value
//! makes it grow like `L^{2(1−α)}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ToyReluResMLP;
use crate::parameterization::{resolve_plan_with, BaseHyperparams, ParamKind, ParamRole, PlanOptions, ScalingPlan};
use crate::tensor::{fill_gaussian, RngStream};

/// Where the hidden learning rates come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrRule {
    /// The plan's learning rates for the configured kind.
    #[default]
    Plan,
    /// muP learning rates (no depth factor) with the kind's branch scaling.
    DepthUnaware,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxUpdateConfig {
    pub kind: ParamKind,
    pub lr_rule: LrRule,
    /// Train biases too; their learning rate follows the `HiddenBias` role.
    pub with_bias: bool,
    /// Apply the depth factor to the bias learning rate.
    pub bias_depth_correction: bool,
    pub depths: Vec<usize>,
    pub width: usize,
    pub batch: usize,
    pub sigma_base: f64,
    pub eta_base: f64,
    pub n_seeds: usize,
    pub seed: u64,
}

impl Default for MaxUpdateConfig {
    fn default() -> Self {
        MaxUpdateConfig {
            kind: ParamKind::COMPLETE_P,
            lr_rule: LrRule::Plan,
            with_bias: false,
            bias_depth_correction: true,
            depths: vec![8, 32, 128],
            width: 128,
            batch: 16,
            sigma_base: 1.0,
            eta_base: 0.1,
            n_seeds: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxUpdatePoint {
    pub depth: usize,
    pub hidden_lr: f64,
    pub bias_lr: f64,
    pub residual_multiplier: f64,
    /// Mean over seeds of `‖Δh^L‖²/(N·B)`.
    pub delta_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxUpdateReport {
    pub variant: String,
    pub points: Vec<MaxUpdatePoint>,
}

impl MaxUpdateReport {
    /// Largest over smallest `delta_sq` across depths.
    pub fn spread(&self) -> f64 {
        let (lo, hi) =
            self.points.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p.delta_sq), hi.max(p.delta_sq)));
        hi / lo
    }
}

fn plan_for(cfg: &MaxUpdateConfig, kind: ParamKind, depth: usize) -> Result<ScalingPlan> {
    let base = BaseHyperparams {
        sigma_base: cfg.sigma_base,
        eta_base: cfg.eta_base,
        n_base: 1,
        l_base: 1,
        ..BaseHyperparams::default()
    };
    let opts = PlanOptions { ln_bias_depth_correction: cfg.bias_depth_correction, ..PlanOptions::default() };
    resolve_plan_with(kind, &base, cfg.width, depth, &opts)
}

pub fn max_update_probe(cfg: &MaxUpdateConfig) -> Result<MaxUpdateReport> {
    let alpha = match cfg.kind {
        ParamKind::DepthAlpha(a) => a.get(),
        ParamKind::MuP | ParamKind::Sp => 0.0,
    };
    if cfg.depths.is_empty() || cfg.n_seeds == 0 || cfg.width == 0 || cfg.batch == 0 {
        return Err(Error::InvalidArgument("need depths, seeds, width and batch >= 1".into()));
    }
    let mut points = Vec::new();
    for &depth in &cfg.depths {
        let plan = plan_for(cfg, cfg.kind, depth)?;
        let lr_plan = match cfg.lr_rule {
            LrRule::Plan => plan.clone(),
            LrRule::DepthUnaware => plan_for(cfg, ParamKind::MuP, depth)?,
        };
        let hidden_lr = lr_plan.role(ParamRole::HiddenWeight).lr;
        let bias_lr = lr_plan.role(ParamRole::HiddenBias).lr;
        let mut total = 0.0;
        for s in 0..cfg.n_seeds {
            let seed = cfg.seed.wrapping_add(s as u64);
            let mut net = ToyReluResMLP::init(cfg.width, depth, alpha, cfg.sigma_base, cfg.with_bias, seed);
            debug_assert!((net.branch_scale() - plan.residual_multiplier).abs() <= 1e-12 * net.branch_scale());
            let nb = cfg.width * cfg.batch;
            let mut h0 = vec![0.0; nb];
            fill_gaussian(&mut RngStream::new(seed, u64::MAX).rng(), &mut h0, 1.0);
            let mut r = vec![0.0; nb];
            fill_gaussian(&mut RngStream::new(seed, u64::MAX - 1).rng(), &mut r, 1.0);
            let before = net.forward(&h0, cfg.batch);
            let (dws, dbs) = net.backward(&before, &r);
            for (w, d) in net.weights.iter_mut().zip(&dws) {
                w.iter_mut().zip(d).for_each(|(w, g)| *w -= hidden_lr * signum(*g));
            }
            if let Some(bs) = net.biases.as_mut() {
                for (b, d) in bs.iter_mut().zip(&dbs) {
                    b.iter_mut().zip(d).for_each(|(b, g)| *b -= bias_lr * signum(*g));
                }
            }
            let after = net.forward(&h0, cfg.batch);
            let delta: f64 = after.hs[depth].iter().zip(&before.hs[depth]).map(|(a, b)| (a - b).powi(2)).sum();
            if !delta.is_finite() {
                return Err(Error::NonFinite { what: "residual change".into(), layer: Some(depth), step: Some(1) });
            }
            total += delta / nb as f64;
        }
        points.push(MaxUpdatePoint {
            depth,
            hidden_lr,
            bias_lr,
            residual_multiplier: plan.residual_multiplier,
            delta_sq: total / cfg.n_seeds as f64,
        });
    }
    let variant = match cfg.lr_rule {
        LrRule::Plan => cfg.kind.display_name(),
        LrRule::DepthUnaware => format!("{} (muP learning rates)", cfg.kind.display_name()),
    };
    Ok(MaxUpdateReport { variant, points })
}

fn signum(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ParamKind) -> MaxUpdateConfig {
        MaxUpdateConfig { kind, depths: vec![4, 16, 64], width: 48, batch: 8, n_seeds: 2, ..MaxUpdateConfig::default() }
    }

    #[test]
    fn plan_learning_rates_follow_depth_rule() {
        let r = max_update_probe(&small(ParamKind::depth_alpha(0.5).unwrap())).unwrap();
        for p in &r.points {
            let l = p.depth as f64;
            assert!((p.hidden_lr - 0.1 / 48.0 * l.powf(-0.5)).abs() < 1e-15);
            assert!((p.residual_multiplier - l.powf(-0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn plan_lrs_keep_update_flat() {
        for kind in [ParamKind::depth_alpha(0.5).unwrap(), ParamKind::COMPLETE_P] {
            let r = max_update_probe(&small(kind)).unwrap();
            assert!(r.spread() < 3.0, "{}: spread {}", r.variant, r.spread());
        }
    }

    #[test]
    fn depth_unaware_lrs_blow_up_for_alpha_half() {
        let cfg = MaxUpdateConfig { lr_rule: LrRule::DepthUnaware, ..small(ParamKind::depth_alpha(0.5).unwrap()) };
        let r = max_update_probe(&cfg).unwrap();
        assert!(r.spread() > 3.0, "spread {}", r.spread());
        assert!(r.points.windows(2).all(|w| w[1].delta_sq > w[0].delta_sq));
    }

    #[test]
    fn uncorrected_bias_lr_breaks_flatness() {
        let kind = ParamKind::depth_alpha(0.5).unwrap();
        let corrected = max_update_probe(&MaxUpdateConfig { with_bias: true, ..small(kind) }).unwrap();
        assert!(corrected.spread() < 3.0, "corrected spread {}", corrected.spread());
        let raw = MaxUpdateConfig { with_bias: true, bias_depth_correction: false, ..small(kind) };
        let raw = max_update_probe(&raw).unwrap();
        assert!(raw.spread() > 3.0, "uncorrected spread {}", raw.spread());
    }
}
