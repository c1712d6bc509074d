//! AdamW with per-group hyperparameters, the warmup/decay schedule, and the
//! τ_EMA weight-decay rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Parameters;
use crate::parameterization::ScalingPlan;
use crate::tensor::{Real, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.95;
/// Warmup is capped at the number of steps covering this many tokens.
pub const DEFAULT_WARMUP_TOKEN_CAP: u64 = 375_000_000;
pub const DEFAULT_TAU_EMA: f64 = 0.1407;

/// Peak learning rate, weight decay, and ε for one tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupHyper {
    pub lr: f64,
    pub wd: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub groups: Vec<GroupHyper>,
}

impl<T: Real> AdamWState<T> {
    /// Zero moments with each tensor bound to its role's plan entry.
    pub fn new(params: &Parameters<T>, plan: &ScalingPlan) -> Self {
        let groups = params
            .tensors
            .iter()
            .map(|p| {
                let h = plan.role(p.role);
                GroupHyper { lr: h.lr, wd: h.wd, eps: h.eps }
            })
            .collect();
        Self::with_groups(params.zeros_like(), groups)
    }

    pub fn with_groups(shapes: Vec<Tensor<T>>, groups: Vec<GroupHyper>) -> Self {
        assert_eq!(shapes.len(), groups.len(), "{} tensors but {} groups", shapes.len(), groups.len());
        AdamWState { beta1: BETA1, beta2: BETA2, t: 0, v: shapes.clone(), m: shapes, groups }
    }

    /// One AdamW update of `weights` in place. `lr_scale` is the schedule
    /// multiplier for this step; each tensor uses `lr_scale · group.lr`.
    /// `names` labels tensors in error messages.
    pub fn step(
        &mut self,
        weights: &mut [&mut [T]],
        grads: &[Tensor<T>],
        lr_scale: f64,
        names: &dyn Fn(usize) -> String,
    ) -> Result<()> {
        assert_eq!(
            weights.len(),
            self.m.len(),
            "{} weight tensors but optimizer tracks {}",
            weights.len(),
            self.m.len()
        );
        assert_eq!(grads.len(), self.m.len(), "{} gradients but optimizer tracks {}", grads.len(), self.m.len());
        let step = self.t + 1;
        if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::NonFinite { what: format!("gradient of {}", names(i)), layer: None, step: Some(step) });
        }
        self.t = step;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(step as i32);
        let bc2 = 1.0 - b2.powi(step as i32);
        for (i, w) in weights.iter_mut().enumerate() {
            let GroupHyper { lr, wd, eps } = self.groups[i];
            let lr = lr * lr_scale;
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].data();
            assert_eq!(w.len(), g.len(), "{}: weight has {} entries, gradient {}", names(i), w.len(), g.len());
            for j in 0..w.len() {
                let gj = g[j].as_f64();
                let mj = b1 * m[j].as_f64() + (1.0 - b1) * gj;
                let vj = b2 * v[j].as_f64() + (1.0 - b2) * gj * gj;
                m[j] = T::from_f64(mj);
                v[j] = T::from_f64(vj);
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                let adam = if m_hat == 0.0 { 0.0 } else { m_hat / (v_hat.sqrt() + eps) };
                let wj = w[j].as_f64();
                w[j] = T::from_f64(wj - lr * adam - lr * wd * wj);
            }
        }
        Ok(())
    }

    /// Convenience wrapper over [`AdamWState::step`] for model parameters.
    pub fn step_params(&mut self, params: &mut Parameters<T>, grads: &[Tensor<T>], lr_scale: f64) -> Result<()> {
        let names: Vec<String> = params.tensors.iter().map(|t| t.name.clone()).collect();
        let mut ws: Vec<&mut [T]> = params.tensors.iter_mut().map(|t| t.value.data_mut()).collect();
        self.step(&mut ws, grads, lr_scale, &|i| names[i].clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleShape {
    /// Linear warmup to the peak, then linear decay to zero.
    #[default]
    WarmupLinearDecay,
    /// Peak learning rate at every step.
    Constant,
}

/// Learning-rate multiplier in `[0, 1]` applied to every group's peak LR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub shape: ScheduleShape,
}

impl Schedule {
    /// Warmup of `min(⌈0.1·total⌉, ⌈token_cap/(batch·seq)⌉)` steps, kept
    /// below `total_steps` so the final step reaches zero.
    pub fn warmup_decay(total_steps: u64, batch: usize, seq_len: usize, warmup_token_cap: u64) -> Result<Self> {
        if total_steps == 0 || batch == 0 || seq_len == 0 {
            return Err(Error::InvalidArgument("schedule needs total_steps, batch and seq_len >= 1".into()));
        }
        let by_fraction = total_steps.div_ceil(10);
        let by_tokens = warmup_token_cap.div_ceil((batch * seq_len) as u64);
        let warmup = by_fraction.min(by_tokens).min(total_steps - 1);
        Ok(Schedule { total_steps, warmup_steps: warmup, shape: ScheduleShape::WarmupLinearDecay })
    }

    pub fn constant(total_steps: u64) -> Self {
        Schedule { total_steps, warmup_steps: 0, shape: ScheduleShape::Constant }
    }

    /// Multiplier at 1-based `step`.
    pub fn lr(&self, step: u64) -> Result<f64> {
        if step == 0 || step > self.total_steps {
            return Err(Error::InvalidArgument(format!("step {step} outside 1..={}", self.total_steps)));
        }
        Ok(match self.shape {
            ScheduleShape::Constant => 1.0,
            ScheduleShape::WarmupLinearDecay if step <= self.warmup_steps => step as f64 / self.warmup_steps as f64,
            ScheduleShape::WarmupLinearDecay => {
                (self.total_steps - step) as f64 / (self.total_steps - self.warmup_steps) as f64
            }
        })
    }
}

/// `λ = 1/(τ·η·n)`.
pub fn lambda_from_tau(tau_ema: f64, eta_base: f64, n_steps: u64) -> Result<f64> {
    check_positive(&[("tau_ema", tau_ema), ("eta_base", eta_base), ("n_steps", n_steps as f64)])?;
    Ok(1.0 / (tau_ema * eta_base * n_steps as f64))
}

/// `τ = 1/(η·λ·n)`, the inverse of [`lambda_from_tau`].
pub fn tau_from_lambda(eta_base: f64, lambda_base: f64, n_steps: u64) -> Result<f64> {
    check_positive(&[("eta_base", eta_base), ("lambda_base", lambda_base), ("n_steps", n_steps as f64)])?;
    Ok(1.0 / (eta_base * lambda_base * n_steps as f64))
}

fn check_positive(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !(v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
        }
    }
    Ok(())
}

/// Token budget, step count and weight decay for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecipe {
    pub tpp: f64,
    pub p_total: u64,
    pub tokens: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub n_steps: u64,
    pub tau_ema: f64,
    pub eta_base: f64,
    pub lambda_base: f64,
}

impl TrainingRecipe {
    /// `tokens = round(tpp·P_total)`, `n_steps = ⌈tokens/(batch·seq)⌉`, and
    /// `λ_base` from τ_EMA (zero when `tau_ema` is zero).
    pub fn new(p_total: u64, tpp: f64, batch_size: usize, seq_len: usize, tau_ema: f64, eta_base: f64) -> Result<Self> {
        let tokens = crate::scaling::tokens_for_tpp(p_total, tpp)?;
        if batch_size == 0 || seq_len == 0 {
            return Err(Error::InvalidArgument("batch_size and seq_len must be >= 1".into()));
        }
        let n_steps = tokens.div_ceil((batch_size * seq_len) as u64).max(1);
        Self::with_steps(p_total, tpp, batch_size, seq_len, n_steps, tau_ema, eta_base)
    }

    /// Same as [`TrainingRecipe::new`] but with an explicit step count.
    pub fn with_steps(
        p_total: u64,
        tpp: f64,
        batch_size: usize,
        seq_len: usize,
        n_steps: u64,
        tau_ema: f64,
        eta_base: f64,
    ) -> Result<Self> {
        if tau_ema < 0.0 || !tau_ema.is_finite() {
            return Err(Error::InvalidArgument(format!("tau_ema must be >= 0, got {tau_ema}")));
        }
        let lambda_base = if tau_ema > 0.0 { lambda_from_tau(tau_ema, eta_base, n_steps)? } else { 0.0 };
        Ok(TrainingRecipe {
            tpp,
            p_total,
            tokens: n_steps * (batch_size * seq_len) as u64,
            batch_size,
            seq_len,
            n_steps,
            tau_ema,
            eta_base,
            lambda_base,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(g: f64, w: f64, hyper: GroupHyper, b1: f64, b2: f64) -> f64 {
        let mut st = AdamWState::with_groups(vec![Tensor::<f64>::zeros(&[1])], vec![hyper]);
        st.beta1 = b1;
        st.beta2 = b2;
        let mut w = [w];
        st.step(&mut [&mut w[..]], &[Tensor::from_vec(&[1], vec![g])], 1.0, &|_| "w".into()).unwrap();
        w[0]
    }

    #[test]
    fn sign_sgd_limit() {
        let w = single(1.0, 0.5, GroupHyper { lr: 0.01, wd: 0.0, eps: 0.0 }, 0.0, 0.0);
        assert_eq!(w, 0.5 - 0.01);
    }

    #[test]
    fn decoupled_decay_without_gradient() {
        let w = single(0.0, 2.0, GroupHyper { lr: 0.1, wd: 0.3, eps: 1e-16 }, BETA1, BETA2);
        assert_eq!(w, 2.0 - 0.1 * 0.3 * 2.0);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g in [3.0, -1e-9] {
            let w = single(g, 0.0, GroupHyper { lr: 1e-3, wd: 0.0, eps: 0.0 }, BETA1, BETA2);
            assert!((w + 1e-3 * g.signum()).abs() < 1e-15);
        }
    }

    #[test]
    fn residual_group_eps_in_denominator() {
        use crate::parameterization::{resolve_plan, BaseHyperparams, ParamKind, ParamRole};
        let plan = resolve_plan(ParamKind::COMPLETE_P, &BaseHyperparams::default(), 1024, 32).unwrap();
        let eps = plan.role(ParamRole::HiddenWeight).eps;
        assert!((eps - 1.5625e-18).abs() < 1e-30);
        // |g| comparable to ε makes the ε term visible: update = lr·g/(|g| + ε)
        let g = 1.5625e-18;
        let w = single(g, 0.0, GroupHyper { lr: 1.0, wd: 0.0, eps }, 0.0, 0.0);
        assert!((w + 0.5).abs() < 1e-12, "{w}");
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut st =
            AdamWState::with_groups(vec![Tensor::<f64>::zeros(&[2])], vec![GroupHyper { lr: 1.0, wd: 0.0, eps: 0.0 }]);
        let mut w = [0.0, 0.0];
        let err = st
            .step(&mut [&mut w[..]], &[Tensor::from_vec(&[2], vec![1.0, f64::NAN])], 1.0, &|_| {
                "layers.3.mlp.w_up".into()
            })
            .unwrap_err();
        assert!(err.to_string().contains("layers.3.mlp.w_up") && err.to_string().contains("step 1"), "{err}");
        assert_eq!(st.t, 0);
    }

    #[test]
    fn schedule_knots() {
        let s = Schedule::warmup_decay(1000, 4, 64, DEFAULT_WARMUP_TOKEN_CAP).unwrap();
        assert_eq!(s.warmup_steps, 100);
        assert_eq!(s.lr(100).unwrap(), 1.0);
        assert_eq!(s.lr(1).unwrap(), 0.01);
        assert_eq!(s.lr(1000).unwrap(), 0.0);
        assert!(s.lr(0).is_err() && s.lr(1001).is_err());
        let capped = Schedule::warmup_decay(1000, 4, 64, 256 * 10).unwrap();
        assert_eq!(capped.warmup_steps, 10);
    }

    #[test]
    fn lambda_rule() {
        let l = lambda_from_tau(0.1407, 0.0039, 5923).unwrap();
        assert!((l - 0.307_680_0).abs() < 1e-6, "{l}");
        assert!(lambda_from_tau(1e300, 0.0039, 5923).unwrap() < 1e-290);
        assert!(lambda_from_tau(0.0, 0.1, 1).is_err());
        assert!(lambda_from_tau(0.1, -0.1, 1).is_err());
    }

    #[test]
    fn recipe_counts() {
        let r = TrainingRecipe::new(1_000_000, 20.0, 8, 64, DEFAULT_TAU_EMA, 0.0039).unwrap();
        assert_eq!(r.n_steps, 20_000_000u64.div_ceil(512));
        assert_eq!(r.lambda_base, lambda_from_tau(DEFAULT_TAU_EMA, 0.0039, r.n_steps).unwrap());
        let r0 = TrainingRecipe::new(1000, 20.0, 8, 64, 0.0, 0.0039).unwrap();
        assert_eq!(r0.lambda_base, 0.0);
    }

    proptest! {
        #[test]
        fn tau_lambda_inverse(t in 1e-3f64..10.0, eta in 1e-6f64..1.0, n in 1u64..1_000_000) {
            let l = lambda_from_tau(t, eta, n).unwrap();
            let back = tau_from_lambda(eta, l, n).unwrap();
            prop_assert!((back - t).abs() <= 1e-12 * t);
        }

        #[test]
        fn adam_direction_scale_invariant(c in 1e-3f64..1e3, seed in any::<u64>()) {
            use crate::tensor::{fill_gaussian, RngStream};
            let mut g = vec![0.0; 32];
            fill_gaussian(&mut RngStream::new(seed, 0).rng(), &mut g, 1.0);
            let run = |scale: f64| {
                let h = GroupHyper { lr: 1e-2, wd: 0.0, eps: 0.0 };
                let mut st = AdamWState::with_groups(vec![Tensor::<f64>::zeros(&[32])], vec![h]);
                let mut w = vec![0.0; 32];
                for _ in 0..3 {
                    let gs = Tensor::from_vec(&[32], g.iter().map(|x| x * scale).collect());
                    st.step(&mut [&mut w[..]], &[gs], 1.0, &|_| "w".into()).unwrap();
                }
                w
            };
            let (a, b) = (run(1.0), run(c));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn schedule_in_unit_interval(total in 2u64..5000, batch in 1usize..64, seq in 1usize..512) {
            let s = Schedule::warmup_decay(total, batch, seq, DEFAULT_WARMUP_TOKEN_CAP).unwrap();
            prop_assert!(s.warmup_steps < total);
            prop_assert_eq!(s.lr(total).unwrap(), 0.0);
            for step in 1..=total.min(200) {
                let v = s.lr(step).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
