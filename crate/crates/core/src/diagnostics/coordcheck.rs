//! Coordinate check: residual-stream norms across depths during the first
//! few training steps.

use serde::{Deserialize, Serialize};

use crate::data::{DataSpec, BYTE_VOCAB};
use crate::error::{Error, Result};
use crate::model::{MergeSite, ModelConfig};
use crate::optimizer::ScheduleShape;
use crate::parameterization::BaseHyperparams;
use crate::tensor::Real;
use crate::train::{KindName, ParamSpec, Precision, RecipeSpec, RunConfig, Trainer};

/// The four parameterizations compared by the coordinate check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordVariant {
    /// SP, which equals muP at the base width.
    Sp,
    /// `α = 1/2` without the depth factor on LayerNorm and bias LRs.
    AlphaHalfUncorrected,
    AlphaHalf,
    CompleteP,
}

impl CoordVariant {
    pub const ALL: [CoordVariant; 4] =
        [CoordVariant::Sp, CoordVariant::AlphaHalfUncorrected, CoordVariant::AlphaHalf, CoordVariant::CompleteP];

    pub fn label(self) -> &'static str {
        match self {
            CoordVariant::Sp => "sp",
            CoordVariant::AlphaHalfUncorrected => "alpha=0.5 uncorrected",
            CoordVariant::AlphaHalf => "alpha=0.5",
            CoordVariant::CompleteP => "completep",
        }
    }

    fn param_spec(self, base: BaseHyperparams) -> ParamSpec {
        let (kind, alpha, corrected) = match self {
            CoordVariant::Sp => (KindName::Sp, None, true),
            CoordVariant::AlphaHalfUncorrected => (KindName::DepthAlpha, Some(0.5), false),
            CoordVariant::AlphaHalf => (KindName::DepthAlpha, Some(0.5), true),
            CoordVariant::CompleteP => (KindName::Completep, None, true),
        };
        ParamSpec { kind, alpha, base, ln_bias_depth_correction: corrected, ..ParamSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheckConfig {
    pub variants: Vec<CoordVariant>,
    pub depths: Vec<usize>,
    pub steps: u64,
    pub width: usize,
    pub d_head: usize,
    pub seq_len: usize,
    pub batch: usize,
    /// `n_base` is forced to `width`, so only depth differs from the base.
    pub base: BaseHyperparams,
    pub seed: u64,
    pub precision: Precision,
    pub jobs: usize,
}

impl Default for CoordCheckConfig {
    fn default() -> Self {
        CoordCheckConfig {
            variants: CoordVariant::ALL.to_vec(),
            depths: vec![2, 4, 8, 16, 32, 64],
            steps: 10,
            width: 256,
            d_head: 64,
            seq_len: 64,
            batch: 4,
            base: BaseHyperparams {
                sigma_base: 0.06,
                eta_base: 2e-3,
                n_base: 256,
                l_base: 2,
                ..BaseHyperparams::default()
            },
            seed: 0,
            precision: Precision::F32,
            jobs: 1,
        }
    }
}

impl CoordCheckConfig {
    fn run_config(&self, variant: CoordVariant, depth: usize) -> RunConfig {
        let base = BaseHyperparams { n_base: self.width, lambda_base: 0.0, ..self.base };
        RunConfig {
            parameterization: variant.param_spec(base),
            model: ModelConfig {
                width: self.width,
                layers: depth,
                d_head: self.d_head,
                vocab_size: BYTE_VOCAB,
                seq_len: self.seq_len,
            },
            recipe: RecipeSpec {
                tau_ema: 0.0,
                batch_size: self.batch,
                steps: Some(self.steps),
                schedule: ScheduleShape::Constant,
                ..RecipeSpec::default()
            },
            data: DataSpec::Synthetic,
            seed: self.seed,
            precision: self.precision,
            eval_batches: 1,
        }
    }
}

/// Frobenius norm of the residual stream after one merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordRow {
    pub variant: String,
    pub depth: usize,
    pub step: u64,
    pub layer: usize,
    pub site: MergeSite,
    pub frobenius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordEvent {
    pub variant: String,
    pub depth: usize,
    pub step: u64,
    pub message: String,
}

/// Final-layer norm for one `(variant, depth)` after each update count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordSeries {
    pub variant: String,
    pub depth: usize,
    /// Index `t` is the probe norm after `t` updates; `None` once the run
    /// produced a non-finite value.
    pub final_norm: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordCheckReport {
    pub rows: Vec<CoordRow>,
    pub series: Vec<CoordSeries>,
    pub events: Vec<CoordEvent>,
}

impl CoordCheckReport {
    fn series_for(&self, variant: &str, depth: usize) -> Option<&CoordSeries> {
        self.series.iter().find(|s| s.variant == variant && s.depth == depth)
    }

    /// `max_t` of `final_norm(depth, t) / final_norm(reference, t)`. A
    /// non-finite step on the deeper model counts as an infinite ratio.
    pub fn ratio(&self, variant: &str, depth: usize, reference: usize) -> Option<f64> {
        let deep = self.series_for(variant, depth)?;
        let shallow = self.series_for(variant, reference)?;
        let mut worst: f64 = 0.0;
        for (d, s) in deep.final_norm.iter().zip(&shallow.final_norm) {
            match (d, s) {
                (Some(d), Some(s)) => worst = worst.max(d / s),
                (None, Some(_)) => return Some(f64::INFINITY),
                _ => {}
            }
        }
        Some(worst)
    }

    /// Ratios against the shallowest depth for every depth of `variant`.
    pub fn growth(&self, variant: &str) -> Vec<(usize, f64)> {
        let mut depths: Vec<usize> = self.series.iter().filter(|s| s.variant == variant).map(|s| s.depth).collect();
        depths.sort_unstable();
        let Some(&reference) = depths.first() else { return Vec::new() };
        depths.iter().filter_map(|&d| self.ratio(variant, d, reference).map(|r| (d, r))).collect()
    }
}

struct JobOutput {
    rows: Vec<CoordRow>,
    series: CoordSeries,
    events: Vec<CoordEvent>,
}

fn run_job<T: Real>(cfg: &CoordCheckConfig, variant: CoordVariant, depth: usize) -> Result<JobOutput> {
    let run = cfg.run_config(variant, depth).resolve()?;
    let mut trainer = Trainer::<T>::new(&run)?;
    let label = variant.label().to_string();
    let mut rows = Vec::new();
    let mut events = Vec::new();
    let mut final_norm = Vec::new();
    for t in 0..=cfg.steps {
        if t > 0 {
            if let Err(e) = trainer.step() {
                if !e.is_numeric() {
                    return Err(e);
                }
                events.push(CoordEvent { variant: label.clone(), depth, step: t, message: e.to_string() });
                break;
            }
        }
        match trainer.probe_trace() {
            Ok(trace) => {
                for e in &trace.entries {
                    rows.push(CoordRow {
                        variant: label.clone(),
                        depth,
                        step: t,
                        layer: e.layer,
                        site: e.site,
                        frobenius: e.frobenius,
                    });
                }
                final_norm.push(Some(trace.last().frobenius));
            }
            Err(e) if e.is_numeric() => {
                events.push(CoordEvent { variant: label.clone(), depth, step: t, message: e.to_string() });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    final_norm.resize(cfg.steps as usize + 1, None);
    Ok(JobOutput { rows, series: CoordSeries { variant: label, depth, final_norm }, events })
}

/// Trains every `(variant, depth)` for `steps` updates and records probe
/// norms after each. Non-finite values end that run and are reported as
/// events.
pub fn coordinate_check(cfg: &CoordCheckConfig) -> Result<CoordCheckReport> {
    if cfg.depths.is_empty() || cfg.variants.is_empty() {
        return Err(Error::InvalidArgument("coordinate check needs at least one depth and variant".into()));
    }
    let jobs: Vec<(CoordVariant, usize)> =
        cfg.variants.iter().flat_map(|&v| cfg.depths.iter().map(move |&d| (v, d))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let outputs: Vec<Result<JobOutput>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(v, d)| match cfg.precision {
                Precision::F32 => run_job::<f32>(cfg, v, d),
                Precision::F64 => run_job::<f64>(cfg, v, d),
            })
            .collect()
    });
    let mut report = CoordCheckReport { rows: Vec::new(), series: Vec::new(), events: Vec::new() };
    for out in outputs {
        let out = out?;
        report.rows.extend(out.rows);
        report.series.push(out.series);
        report.events.extend(out.events);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Transformer;

    fn tiny() -> CoordCheckConfig {
        CoordCheckConfig {
            depths: vec![2, 4],
            steps: 2,
            width: 32,
            d_head: 16,
            seq_len: 8,
            batch: 2,
            ..CoordCheckConfig::default()
        }
    }

    #[test]
    fn grid_is_complete() {
        let cfg = tiny();
        let r = coordinate_check(&cfg).unwrap();
        assert_eq!(r.series.len(), 8);
        assert!(r.events.is_empty());
        let expected: usize = cfg.depths.iter().map(|d| 2 * d * 3).sum::<usize>() * 4;
        assert_eq!(r.rows.len(), expected);
        assert!(r.rows.iter().all(|row| row.frobenius.is_finite() && row.frobenius > 0.0));
        for v in CoordVariant::ALL {
            assert_eq!(r.growth(v.label()).len(), 2);
            assert_eq!(r.growth(v.label())[0].1, 1.0);
        }
    }

    #[test]
    fn step_zero_matches_init() {
        let cfg = tiny();
        let r = coordinate_check(&cfg).unwrap();
        for v in CoordVariant::ALL {
            let run = cfg.run_config(v, 4).resolve().unwrap();
            let trainer = Trainer::<f32>::new(&run).unwrap();
            let fresh = Transformer::<f32>::new(run.config.model, run.plan(), run.config.seed).unwrap();
            assert_eq!(trainer.model.params, fresh.params);
            let init = trainer.probe_trace().unwrap();
            let s = r.series_for(v.label(), 4).unwrap();
            assert_eq!(s.final_norm[0], Some(init.last().frobenius));
        }
    }
}
