//! Width/depth parameterizations as executable rules.
//!
//! A [`ParamKind`] together with [`BaseHyperparams`] tuned on a base model of
//! shape `(N_base, L_base)` resolves into a [`ScalingPlan`] for any target
//! shape `(N, L)`. With `m_N = N / N_base` and `m_L = L / L_base`:
//!
//! | role            | SP        | muP             | depth-alpha                     |
//! |-----------------|-----------|-----------------|---------------------------------|
//! | emb. std        | σ         | σ               | σ                               |
//! | emb. LR         | η         | η               | η                               |
//! | pre-LN LR       | η         | η               | η·m_L^(α−1)                     |
//! | hidden std      | σ         | σ·m_N^(−1/2)    | σ·m_N^(−1/2)                    |
//! | hidden LR       | η         | η·m_N^(−1)      | η·m_N^(−1)·m_L^(α−1)            |
//! | hidden bias LR  | η         | η               | η·m_L^(α−1)                     |
//! | hidden WD       | λ         | λ·m_N           | λ·m_N                           |
//! | branch mult.    | 1         | 1               | m_L^(−α)                        |
//! | final-LN LR     | η         | η               | η                               |
//! | unemb. LR       | η         | η               | η                               |
//! | unemb. fwd mult | 1         | m_N^(−1)        | m_N^(−1)                        |
//! | ε residual      | ε         | ε·m_N^(−1)      | ε·m_N^(−1)·m_L^(−α)             |
//! | ε emb./unemb.   | ε         | ε·m_N^(−1)      | ε·m_N^(−1)                      |
//!
//! Init entries are standard deviations (the square root of the variance
//! rule). Weight decay is zero for every role other than hidden weights.
//! Setting `m_N = m_L = 1` makes every kind resolve to the same plan.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag written into serialized plans.
pub const PLAN_SCHEMA_VERSION: u32 = 1;

/// Branch exponent α, constrained to `[0.5, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Alpha(f64);

impl Alpha {
    pub const COMPLETE: Alpha = Alpha(1.0);
    pub const HALF: Alpha = Alpha(0.5);

    pub fn new(value: f64) -> Result<Self> {
        if !(0.5..=1.0).contains(&value) {
            return Err(Error::AlphaOutOfRange(value));
        }
        Ok(Alpha(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamKind {
    Sp,
    MuP,
    DepthAlpha(Alpha),
}

impl ParamKind {
    /// CompleteP: the α = 1 member of the depth-alpha family.
    pub const COMPLETE_P: ParamKind = ParamKind::DepthAlpha(Alpha::COMPLETE);

    pub fn depth_alpha(alpha: f64) -> Result<Self> {
        Alpha::new(alpha).map(ParamKind::DepthAlpha)
    }

    pub fn alpha(self) -> Option<f64> {
        match self {
            ParamKind::DepthAlpha(a) => Some(a.get()),
            _ => None,
        }
    }

    /// Stable lowercase label used in documents and reports.
    pub fn label(self) -> &'static str {
        match self {
            ParamKind::Sp => "sp",
            ParamKind::MuP => "mup",
            ParamKind::DepthAlpha(_) => "depth_alpha",
        }
    }

    /// Human-readable name, e.g. `alpha=0.5` or `completep`.
    pub fn display_name(self) -> String {
        match self {
            ParamKind::Sp => "sp".into(),
            ParamKind::MuP => "mup".into(),
            ParamKind::DepthAlpha(a) if a.get() == 1.0 => "completep".into(),
            ParamKind::DepthAlpha(a) => format!("alpha={}", a.get()),
        }
    }

    fn from_parts(label: &str, alpha: Option<f64>) -> Result<Self> {
        match (label, alpha) {
            ("sp", _) => Ok(ParamKind::Sp),
            ("mup", _) => Ok(ParamKind::MuP),
            ("depth_alpha", Some(a)) => ParamKind::depth_alpha(a),
            ("depth_alpha", None) => Err(Error::Schema("depth_alpha plan requires `alpha`".into())),
            (other, _) => Err(Error::Schema(format!("unknown parameterization kind `{other}`"))),
        }
    }
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_name())
    }
}

/// Which scaling rule a trainable tensor follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Embedding,
    PreLn,
    HiddenWeight,
    HiddenBias,
    FinalLn,
    Unembedding,
}

impl ParamRole {
    pub const ALL: [ParamRole; 6] = [
        ParamRole::Embedding,
        ParamRole::PreLn,
        ParamRole::HiddenWeight,
        ParamRole::HiddenBias,
        ParamRole::FinalLn,
        ParamRole::Unembedding,
    ];

    /// Residual-block roles share the depth-corrected AdamW ε rule.
    pub fn in_residual_block(self) -> bool {
        matches!(self, ParamRole::HiddenWeight | ParamRole::HiddenBias | ParamRole::PreLn)
    }

    pub fn key(self) -> &'static str {
        match self {
            ParamRole::Embedding => "embedding",
            ParamRole::PreLn => "pre_ln",
            ParamRole::HiddenWeight => "hidden_weight",
            ParamRole::HiddenBias => "hidden_bias",
            ParamRole::FinalLn => "final_ln",
            ParamRole::Unembedding => "unembedding",
        }
    }
}

impl fmt::Display for ParamRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Hyperparameters tuned on the base model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseHyperparams {
    pub sigma_base: f64,
    pub eta_base: f64,
    pub lambda_base: f64,
    pub epsilon_base: f64,
    pub n_base: usize,
    pub l_base: usize,
}

impl Default for BaseHyperparams {
    fn default() -> Self {
        BaseHyperparams {
            sigma_base: 0.02,
            eta_base: 0.0039,
            lambda_base: 0.0,
            epsilon_base: 1e-16,
            n_base: 256,
            l_base: 2,
        }
    }
}

impl BaseHyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive =
            [("sigma_base", self.sigma_base), ("eta_base", self.eta_base), ("epsilon_base", self.epsilon_base)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.lambda_base.is_finite() && self.lambda_base >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda_base must be >= 0, got {}", self.lambda_base)));
        }
        if self.n_base == 0 || self.l_base == 0 {
            return Err(Error::InvalidArgument("n_base and l_base must be >= 1".into()));
        }
        Ok(())
    }
}

/// Denominator used for attention logits `q·k · scale`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttnScaleMode {
    /// `1 / d_head`, the muP attention scaling.
    #[default]
    InvHeadDim,
    /// `1 / sqrt(d_head)`, the standard transformer scaling.
    InvSqrtHeadDim,
    /// `1 / N`, dividing by the model width.
    InvWidth,
}

impl AttnScaleMode {
    pub fn scale(self, width: usize, d_head: usize) -> f64 {
        match self {
            AttnScaleMode::InvHeadDim => 1.0 / d_head as f64,
            AttnScaleMode::InvSqrtHeadDim => 1.0 / (d_head as f64).sqrt(),
            AttnScaleMode::InvWidth => 1.0 / width as f64,
        }
    }
}

/// Knobs that sit outside the table proper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanOptions {
    pub d_head: usize,
    #[serde(default)]
    pub attn_scale: AttnScaleMode,
    /// Apply the `m_L^(α−1)` factor to LayerNorm and bias learning rates.
    /// Disabling it reproduces depth-alpha as originally proposed.
    #[serde(default = "default_true")]
    pub ln_bias_depth_correction: bool,
    /// Std of hidden bias init; biases start at zero by default.
    #[serde(default)]
    pub bias_init_std: f64,
}

fn default_true() -> bool {
    true
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            d_head: 64,
            attn_scale: AttnScaleMode::InvHeadDim,
            ln_bias_depth_correction: true,
            bias_init_std: 0.0,
        }
    }
}

/// Resolved hyperparameters for one role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleHyper {
    pub init_std: f64,
    /// Final (peak) learning rate for this role.
    pub lr: f64,
    pub wd: f64,
    pub eps: f64,
}

/// Fully resolved per-role hyperparameters for one `(kind, N, L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPlan {
    pub kind: ParamKind,
    pub m_n: f64,
    pub m_l: f64,
    pub roles: BTreeMap<ParamRole, RoleHyper>,
    pub residual_multiplier: f64,
    pub unemb_forward_multiplier: f64,
    pub attn_logit_scale: f64,
    pub bias_init_std: f64,
    pub ln_bias_depth_correction: bool,
}

/// Resolves `kind` at shape `(n, l)` with default [`PlanOptions`].
pub fn resolve_plan(kind: ParamKind, base: &BaseHyperparams, n: usize, l: usize) -> Result<ScalingPlan> {
    resolve_plan_with(kind, base, n, l, &PlanOptions::default())
}

pub fn resolve_plan_with(
    kind: ParamKind,
    base: &BaseHyperparams,
    n: usize,
    l: usize,
    opts: &PlanOptions,
) -> Result<ScalingPlan> {
    if n == 0 || l == 0 {
        return Err(Error::InvalidArgument(format!("N and L must be >= 1, got N={n}, L={l}")));
    }
    if opts.d_head == 0 {
        return Err(Error::InvalidArgument("d_head must be >= 1".into()));
    }
    if !(opts.bias_init_std.is_finite() && opts.bias_init_std >= 0.0) {
        return Err(Error::InvalidArgument("bias_init_std must be >= 0".into()));
    }
    base.validate()?;

    let m_n = n as f64 / base.n_base as f64;
    let m_l = l as f64 / base.l_base as f64;
    let (sigma, eta, lambda, eps) = (base.sigma_base, base.eta_base, base.lambda_base, base.epsilon_base);

    // Width and depth factors per kind.
    let (width_lr, width_std, width_wd, width_eps, unemb_mult) = match kind {
        ParamKind::Sp => (1.0, 1.0, 1.0, 1.0, 1.0),
        ParamKind::MuP | ParamKind::DepthAlpha(_) => (1.0 / m_n, m_n.powf(-0.5), m_n, 1.0 / m_n, 1.0 / m_n),
    };
    let (depth_lr, depth_eps, branch_mult) = match kind {
        ParamKind::DepthAlpha(a) => {
            let a = a.get();
            (m_l.powf(a - 1.0), m_l.powf(-a), m_l.powf(-a))
        }
        _ => (1.0, 1.0, 1.0),
    };
    let ln_bias_depth_lr = if opts.ln_bias_depth_correction { depth_lr } else { 1.0 };

    let residual_eps = eps * width_eps * depth_eps;
    let outer_eps = eps * width_eps;

    let mut roles = BTreeMap::new();
    roles.insert(ParamRole::Embedding, RoleHyper { init_std: sigma, lr: eta, wd: 0.0, eps: outer_eps });
    roles.insert(
        ParamRole::PreLn,
        RoleHyper { init_std: sigma, lr: eta * ln_bias_depth_lr, wd: 0.0, eps: residual_eps },
    );
    roles.insert(
        ParamRole::HiddenWeight,
        RoleHyper {
            init_std: sigma * width_std,
            lr: eta * width_lr * depth_lr,
            wd: lambda * width_wd,
            eps: residual_eps,
        },
    );
    roles.insert(
        ParamRole::HiddenBias,
        RoleHyper { init_std: opts.bias_init_std, lr: eta * ln_bias_depth_lr, wd: 0.0, eps: residual_eps },
    );
    roles.insert(ParamRole::FinalLn, RoleHyper { init_std: sigma, lr: eta, wd: 0.0, eps: outer_eps });
    roles.insert(ParamRole::Unembedding, RoleHyper { init_std: sigma, lr: eta, wd: 0.0, eps: outer_eps });

    Ok(ScalingPlan {
        kind,
        m_n,
        m_l,
        roles,
        residual_multiplier: branch_mult,
        unemb_forward_multiplier: unemb_mult,
        attn_logit_scale: opts.attn_scale.scale(n, opts.d_head),
        bias_init_std: opts.bias_init_std,
        ln_bias_depth_correction: opts.ln_bias_depth_correction,
    })
}

/// One field that differs between two plans.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDiff {
    pub field: String,
    pub left: f64,
    pub right: f64,
}

impl ScalingPlan {
    pub fn role(&self, role: ParamRole) -> &RoleHyper {
        &self.roles[&role]
    }

    /// Numeric fields as `(name, value)` pairs in a fixed order.
    pub fn numeric_fields(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("m_N".to_string(), self.m_n),
            ("m_L".to_string(), self.m_l),
            ("residual_multiplier".to_string(), self.residual_multiplier),
            ("unemb_forward_multiplier".to_string(), self.unemb_forward_multiplier),
            ("attn_logit_scale".to_string(), self.attn_logit_scale),
            ("bias_init_std".to_string(), self.bias_init_std),
        ];
        for (role, h) in &self.roles {
            out.push((format!("roles.{role}.init_std"), h.init_std));
            out.push((format!("roles.{role}.lr"), h.lr));
            out.push((format!("roles.{role}.wd"), h.wd));
            out.push((format!("roles.{role}.eps"), h.eps));
        }
        out
    }

    /// Field-by-field comparison of resolved values. The kind label is not
    /// compared; two kinds that resolve to the same numbers produce no diffs.
    pub fn diff(&self, other: &ScalingPlan) -> Vec<FieldDiff> {
        self.numeric_fields()
            .into_iter()
            .zip(other.numeric_fields())
            .filter(|((_, a), (_, b))| a.to_bits() != b.to_bits())
            .map(|((field, left), (_, right))| FieldDiff { field, left, right })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&PlanDocument::from(self)).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<ScalingPlan> {
        let doc: PlanDocument = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        doc.try_into()
    }
}

/// On-disk form of a [`ScalingPlan`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDocument {
    pub schema_version: u32,
    pub kind: String,
    pub alpha: Option<f64>,
    #[serde(rename = "m_N")]
    pub m_n: f64,
    #[serde(rename = "m_L")]
    pub m_l: f64,
    pub residual_multiplier: f64,
    pub unemb_forward_multiplier: f64,
    pub attn_logit_scale: f64,
    pub bias_init_std: f64,
    pub ln_bias_depth_correction: bool,
    pub roles: BTreeMap<String, RoleHyper>,
}

impl From<&ScalingPlan> for PlanDocument {
    fn from(p: &ScalingPlan) -> Self {
        PlanDocument {
            schema_version: PLAN_SCHEMA_VERSION,
            kind: p.kind.label().to_string(),
            alpha: p.kind.alpha(),
            m_n: p.m_n,
            m_l: p.m_l,
            residual_multiplier: p.residual_multiplier,
            unemb_forward_multiplier: p.unemb_forward_multiplier,
            attn_logit_scale: p.attn_logit_scale,
            bias_init_std: p.bias_init_std,
            ln_bias_depth_correction: p.ln_bias_depth_correction,
            roles: p.roles.iter().map(|(r, h)| (r.key().to_string(), *h)).collect(),
        }
    }
}

impl TryFrom<PlanDocument> for ScalingPlan {
    type Error = Error;

    fn try_from(doc: PlanDocument) -> Result<ScalingPlan> {
        if doc.schema_version != PLAN_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema_version {} (expected {PLAN_SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        let kind = ParamKind::from_parts(&doc.kind, doc.alpha)?;
        if doc.m_n <= 0.0 || doc.m_l <= 0.0 || !doc.m_n.is_finite() || !doc.m_l.is_finite() {
            return Err(Error::Schema("m_N and m_L must be finite and > 0".into()));
        }
        let mut roles = BTreeMap::new();
        for role in ParamRole::ALL {
            let h = doc.roles.get(role.key()).ok_or_else(|| Error::Schema(format!("missing role `{}`", role.key())))?;
            roles.insert(role, *h);
        }
        if let Some(extra) = doc.roles.keys().find(|k| !ParamRole::ALL.iter().any(|r| r.key() == k.as_str())) {
            return Err(Error::Schema(format!("unknown role `{extra}`")));
        }
        Ok(ScalingPlan {
            kind,
            m_n: doc.m_n,
            m_l: doc.m_l,
            roles,
            residual_multiplier: doc.residual_multiplier,
            unemb_forward_multiplier: doc.unemb_forward_multiplier,
            attn_logit_scale: doc.attn_logit_scale,
            bias_init_std: doc.bias_init_std,
            ln_bias_depth_correction: doc.ln_bias_depth_correction,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> BaseHyperparams {
        BaseHyperparams { lambda_base: 0.1, ..BaseHyperparams::default() }
    }

    #[test]
    fn sp_ignores_shape() {
        let b = base();
        let p = resolve_plan(ParamKind::Sp, &b, 256 * 8, 2 * 4).unwrap();
        assert_eq!(p.role(ParamRole::HiddenWeight).lr, b.eta_base);
        assert_eq!(p.role(ParamRole::HiddenWeight).init_std, b.sigma_base);
        assert_eq!(p.residual_multiplier, 1.0);
        assert_eq!(p.unemb_forward_multiplier, 1.0);
    }

    #[test]
    fn completep_reference_cells() {
        let b = BaseHyperparams { eta_base: 0.0039, epsilon_base: 1e-16, lambda_base: 0.3, ..base() };
        let p = resolve_plan(ParamKind::COMPLETE_P, &b, 1024, 32).unwrap();
        assert_eq!((p.m_n, p.m_l), (4.0, 16.0));
        assert_eq!(p.role(ParamRole::HiddenWeight).lr, 0.0039 / 4.0);
        assert!((p.role(ParamRole::HiddenWeight).lr - 9.75e-4).abs() < 1e-18);
        assert_eq!(p.residual_multiplier, 1.0 / 16.0);
        assert!((p.role(ParamRole::HiddenWeight).eps - 1.5625e-18).abs() < 1e-30);
        assert_eq!(p.role(ParamRole::HiddenWeight).wd, 0.3 * 4.0);
        assert_eq!(p.role(ParamRole::Embedding).eps, 1e-16 / 4.0);
        assert_eq!(p.unemb_forward_multiplier, 0.25);
    }

    #[test]
    fn half_alpha_depth_only() {
        let b = base();
        let p = resolve_plan(ParamKind::depth_alpha(0.5).unwrap(), &b, 256, 32).unwrap();
        assert_eq!(p.role(ParamRole::HiddenWeight).lr, b.eta_base / 4.0);
        assert_eq!(p.residual_multiplier, 0.25);
        assert_eq!(p.role(ParamRole::PreLn).lr, b.eta_base / 4.0);
        assert_eq!(p.role(ParamRole::HiddenBias).lr, b.eta_base / 4.0);
        assert_eq!(p.role(ParamRole::FinalLn).lr, b.eta_base);
    }

    #[test]
    fn uncorrected_alpha_keeps_ln_and_bias_lr() {
        let b = base();
        let opts = PlanOptions { ln_bias_depth_correction: false, ..PlanOptions::default() };
        let p = resolve_plan_with(ParamKind::depth_alpha(0.5).unwrap(), &b, 256, 32, &opts).unwrap();
        assert_eq!(p.role(ParamRole::PreLn).lr, b.eta_base);
        assert_eq!(p.role(ParamRole::HiddenBias).lr, b.eta_base);
        assert_eq!(p.role(ParamRole::HiddenWeight).lr, b.eta_base / 4.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(ParamKind::depth_alpha(1.2), Err(Error::AlphaOutOfRange(_))));
        assert!(matches!(ParamKind::depth_alpha(0.49), Err(Error::AlphaOutOfRange(_))));
        assert!(resolve_plan(ParamKind::Sp, &base(), 0, 2).is_err());
        assert!(resolve_plan(ParamKind::Sp, &base(), 256, 0).is_err());
        let bad = BaseHyperparams { eta_base: 0.0, ..base() };
        assert!(resolve_plan(ParamKind::Sp, &bad, 256, 2).is_err());
    }

    #[test]
    fn attention_scale_modes() {
        let b = base();
        for (mode, want) in [
            (AttnScaleMode::InvHeadDim, 1.0 / 64.0),
            (AttnScaleMode::InvSqrtHeadDim, 1.0 / 8.0),
            (AttnScaleMode::InvWidth, 1.0 / 512.0),
        ] {
            let opts = PlanOptions { attn_scale: mode, ..PlanOptions::default() };
            let p = resolve_plan_with(ParamKind::MuP, &b, 512, 2, &opts).unwrap();
            assert_eq!(p.attn_logit_scale, want);
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let b = BaseHyperparams { eta_base: 0.0039, ..base() };
        let p = resolve_plan(ParamKind::COMPLETE_P, &b, 1024, 32).unwrap();
        let back = ScalingPlan::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        assert!(back.diff(&p).is_empty());
    }

    #[test]
    fn parse_rejects_alpha_out_of_range() {
        let p = resolve_plan(ParamKind::COMPLETE_P, &base(), 512, 4).unwrap();
        let doc = p.to_json().replace("\"alpha\": 1.0", "\"alpha\": 1.2");
        assert!(doc.contains("1.2"));
        assert!(matches!(ScalingPlan::from_json(&doc), Err(Error::AlphaOutOfRange(_))));
    }

    #[test]
    fn parse_names_missing_field() {
        let p = resolve_plan(ParamKind::MuP, &base(), 512, 4).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        v.as_object_mut().unwrap().remove("unemb_forward_multiplier");
        let err = ScalingPlan::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("unemb_forward_multiplier"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        v["roles"].as_object_mut().unwrap().remove("final_ln");
        let err = ScalingPlan::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("final_ln"), "{err}");
    }

    #[test]
    fn parse_rejects_malformed_number() {
        let p = resolve_plan(ParamKind::MuP, &base(), 512, 4).unwrap();
        let doc = p.to_json().replacen("\"m_N\": 2.0", "\"m_N\": 2.0.0", 1);
        assert!(ScalingPlan::from_json(&doc).is_err());
    }

    fn any_kind() -> impl Strategy<Value = ParamKind> {
        prop_oneof![
            Just(ParamKind::Sp),
            Just(ParamKind::MuP),
            (0.5f64..=1.0).prop_map(|a| ParamKind::depth_alpha(a).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn base_shape_is_kind_independent(kind in any_kind(), n_base in 1usize..2048, l_base in 1usize..64) {
            let b = BaseHyperparams { n_base, l_base, ..base() };
            let sp = resolve_plan(ParamKind::Sp, &b, n_base, l_base).unwrap();
            let p = resolve_plan(kind, &b, n_base, l_base).unwrap();
            prop_assert!(p.diff(&sp).is_empty());
        }

        #[test]
        fn residual_multiplier_nonincreasing_in_depth(a in 0.5f64..=1.0, l in 2usize..512) {
            let kind = ParamKind::depth_alpha(a).unwrap();
            let p1 = resolve_plan(kind, &base(), 256, l).unwrap();
            let p2 = resolve_plan(kind, &base(), 256, l + 1).unwrap();
            prop_assert!(p2.residual_multiplier <= p1.residual_multiplier);
            prop_assert!(p1.residual_multiplier > 0.0 && p1.residual_multiplier <= 1.0);
            for k in [ParamKind::Sp, ParamKind::MuP] {
                prop_assert_eq!(resolve_plan(k, &base(), 256, l).unwrap().residual_multiplier, 1.0);
            }
        }

        #[test]
        fn eps_group_ratio_is_depth_factor(a in 0.5f64..=1.0, n in 1usize..4096, l in 1usize..256) {
            let p = resolve_plan(ParamKind::depth_alpha(a).unwrap(), &base(), n, l).unwrap();
            let ratio = p.role(ParamRole::HiddenWeight).eps / p.role(ParamRole::Embedding).eps;
            let want = p.m_l.powf(-a);
            prop_assert!((ratio - want).abs() <= 1e-12 * want);
        }

        #[test]
        fn json_round_trip(kind in any_kind(), n in 1usize..8192, l in 1usize..512, eta in 1e-8f64..1.0) {
            let b = BaseHyperparams { eta_base: eta, ..base() };
            let p = resolve_plan(kind, &b, n, l).unwrap();
            prop_assert_eq!(ScalingPlan::from_json(&p.to_json()).unwrap(), p);
        }
    }

    #[test]
    fn depth_transfer_ratios() {
        let b = base();
        let lr = |a: f64, m_l: usize| {
            resolve_plan(ParamKind::depth_alpha(a).unwrap(), &b, 256, 2 * m_l).unwrap().role(ParamRole::HiddenWeight).lr
        };
        for m_l in [1, 4, 16] {
            assert_eq!(lr(1.0, m_l), b.eta_base);
        }
        let r = [lr(0.5, 1), lr(0.5, 4), lr(0.5, 16)];
        assert_eq!(r[1] / r[0], 0.5);
        assert_eq!(r[2] / r[0], 0.25);
    }
}
