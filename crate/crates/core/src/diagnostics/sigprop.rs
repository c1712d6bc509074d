//! Forward signal propagation through a ReLU residual network in the
//! infinite-width limit: `H^{ℓ+1} = H^ℓ + (σ²/2)·L^{−2α}·H^ℓ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Limit of `H^L` as `L → ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum SigpropLimit {
    /// `α > 1/2`: `H^L → H^0`.
    Identity { value: f64 },
    /// `α = 1/2`: `H^L → exp(σ²/2)·H^0`.
    ExpHalfSigma2 { value: f64 },
    /// `α < 1/2`: `H^L → ∞`.
    Divergent,
}

impl SigpropLimit {
    pub fn label(&self) -> &'static str {
        match self {
            SigpropLimit::Identity { .. } => "identity",
            SigpropLimit::ExpHalfSigma2 { .. } => "exp(σ²/2)",
            SigpropLimit::Divergent => "divergent",
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            SigpropLimit::Identity { value } | SigpropLimit::ExpHalfSigma2 { value } => *value,
            SigpropLimit::Divergent => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigpropResult {
    /// `H^0..H^L`.
    pub h_seq: Vec<f64>,
    pub limit: SigpropLimit,
}

impl SigpropResult {
    pub fn last(&self) -> f64 {
        *self.h_seq.last().expect("sequence holds H^0")
    }
}

fn check(alpha: f64, sigma_w2: f64, h0: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
    }
    if !(sigma_w2.is_finite() && sigma_w2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_W^2 must be >= 0, got {sigma_w2}")));
    }
    if !(h0.is_finite() && h0 > 0.0) {
        return Err(Error::InvalidArgument(format!("H0 must be > 0, got {h0}")));
    }
    Ok(())
}

/// Iterates the recursion `depth` times.
pub fn sigprop(alpha: f64, sigma_w2: f64, depth: usize, h0: f64) -> Result<SigpropResult> {
    check(alpha, sigma_w2, h0)?;
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be >= 1".into()));
    }
    let gain = 0.5 * sigma_w2 * (depth as f64).powf(-2.0 * alpha);
    let mut h_seq = Vec::with_capacity(depth + 1);
    let mut h = h0;
    h_seq.push(h);
    for _ in 0..depth {
        h = gain.mul_add(h, h);
        h_seq.push(h);
    }
    Ok(SigpropResult { h_seq, limit: sigprop_limit(alpha, sigma_w2, h0)? })
}

/// `(1 + (σ²/2)·L^{−2α})^L · H^0`, evaluated via `exp(L·ln1p(·))`.
pub fn sigprop_closed_form(alpha: f64, sigma_w2: f64, depth: usize, h0: f64) -> f64 {
    let l = depth as f64;
    h0 * (l * (0.5 * sigma_w2 * l.powf(-2.0 * alpha)).ln_1p()).exp()
}

pub fn sigprop_limit(alpha: f64, sigma_w2: f64, h0: f64) -> Result<SigpropLimit> {
    check(alpha, sigma_w2, h0)?;
    Ok(if sigma_w2 == 0.0 || alpha > 0.5 {
        SigpropLimit::Identity { value: h0 }
    } else if alpha == 0.5 {
        SigpropLimit::ExpHalfSigma2 { value: (0.5 * sigma_w2).exp() * h0 }
    } else {
        SigpropLimit::Divergent
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_iterated_value() {
        let r = sigprop(0.5, 2.0, 4, 1.0).unwrap();
        assert_eq!(r.last(), 2.44140625);
        assert_eq!(r.h_seq.len(), 5);
    }

    #[test]
    fn alpha_half_approaches_e() {
        let r = sigprop(0.5, 2.0, 1_000_000, 1.0).unwrap();
        assert!((r.last() / std::f64::consts::E - 1.0).abs() < 1e-5);
        assert!((r.last() / 2.718_280_469_319_376_9 - 1.0).abs() < 1e-9);
        assert!((sigprop_closed_form(0.5, 2.0, 1_000_000, 1.0) / 2.718_280_469_319_376_9 - 1.0).abs() < 1e-12);
        assert_eq!(r.limit.label(), "exp(σ²/2)");
        assert!((r.limit.value() - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn limit_cases() {
        assert_eq!(sigprop_limit(0.75, 2.0, 3.0).unwrap(), SigpropLimit::Identity { value: 3.0 });
        assert_eq!(sigprop_limit(0.4, 2.0, 1.0).unwrap().label(), "divergent");
        let slow = sigprop(0.4, 2.0, 10_000, 1.0).unwrap().last();
        assert!((slow / 548.717_504_787_925_7 - 1.0).abs() < 1e-12, "{slow}");
        assert!(sigprop_limit(-0.1, 2.0, 1.0).is_err());
        assert!(sigprop(0.5, 2.0, 4, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn matches_closed_form(alpha in 0.25f64..1.5, s2 in 0.0f64..4.0, depth in 1usize..2000, h0 in 0.01f64..100.0) {
            let it = sigprop(alpha, s2, depth, h0).unwrap().last();
            let cf = sigprop_closed_form(alpha, s2, depth, h0);
            prop_assert!((it - cf).abs() <= 1e-12 * cf, "{} vs {}", it, cf);
        }

        #[test]
        fn nondecreasing(alpha in 0.0f64..1.5, s2 in 0.0f64..4.0, depth in 1usize..300) {
            let r = sigprop(alpha, s2, depth, 1.0).unwrap();
            prop_assert!(r.h_seq.windows(2).all(|w| w[1] >= w[0]));
        }

        #[test]
        fn zero_variance_is_identity(alpha in 0.0f64..1.5, depth in 1usize..300, h0 in 0.01f64..100.0) {
            prop_assert_eq!(sigprop(alpha, 0.0, depth, h0).unwrap().last(), h0);
        }

        #[test]
        fn decreasing_in_alpha(a in 0.0f64..1.4, da in 0.01f64..0.5, s2 in 0.1f64..4.0, depth in 2usize..500) {
            let lo = sigprop_closed_form(a, s2, depth, 1.0);
            let hi = sigprop_closed_form(a + da, s2, depth, 1.0);
            prop_assert!(hi < lo);
        }
    }
}
