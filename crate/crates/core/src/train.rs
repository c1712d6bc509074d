//! Run configuration, the training loop, and learning-rate sweeps.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{DataSource, DataSpec};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, ActivationTrace, Checkpoint, ModelConfig, Transformer};
use crate::optimizer::{
    AdamWState, Schedule, ScheduleShape, TrainingRecipe, DEFAULT_TAU_EMA, DEFAULT_WARMUP_TOKEN_CAP,
};
use crate::parameterization::{
    resolve_plan_with, AttnScaleMode, BaseHyperparams, ParamKind, ParamRole, PlanDocument, PlanOptions, ScalingPlan,
};
use crate::report::{self, LinePlot, Series};
use crate::scaling;
use crate::tensor::Real;

const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const PROBE_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    Sp,
    Mup,
    #[default]
    Completep,
    DepthAlpha,
}

/// Parameterization section of a run config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub kind: KindName,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub base: BaseHyperparams,
    #[serde(default)]
    pub attn_scale: AttnScaleMode,
    #[serde(default = "yes")]
    pub ln_bias_depth_correction: bool,
    #[serde(default)]
    pub bias_init_std: f64,
}

fn yes() -> bool {
    true
}

impl Default for ParamSpec {
    fn default() -> Self {
        ParamSpec {
            kind: KindName::Completep,
            alpha: None,
            base: BaseHyperparams::default(),
            attn_scale: AttnScaleMode::default(),
            ln_bias_depth_correction: true,
            bias_init_std: 0.0,
        }
    }
}

impl ParamSpec {
    pub fn kind(&self) -> Result<ParamKind> {
        match self.kind {
            KindName::Sp => Ok(ParamKind::Sp),
            KindName::Mup => Ok(ParamKind::MuP),
            KindName::Completep => ParamKind::depth_alpha(self.alpha.unwrap_or(1.0)),
            KindName::DepthAlpha => ParamKind::depth_alpha(
                self.alpha.ok_or_else(|| Error::Schema("kind depth_alpha requires `alpha`".into()))?,
            ),
        }
    }

    pub fn from_kind(kind: ParamKind) -> Self {
        let (kind, alpha) = match kind {
            ParamKind::Sp => (KindName::Sp, None),
            ParamKind::MuP => (KindName::Mup, None),
            ParamKind::DepthAlpha(a) => (KindName::DepthAlpha, Some(a.get())),
        };
        ParamSpec { kind, alpha, ..ParamSpec::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeSpec {
    #[serde(default = "default_tpp")]
    pub tpp: f64,
    /// Weight-decay timescale; `0` uses `base.lambda_base` unchanged.
    #[serde(default = "default_tau")]
    pub tau_ema: f64,
    pub batch_size: usize,
    /// Explicit step count; otherwise derived from `tpp`.
    #[serde(default)]
    pub steps: Option<u64>,
    #[serde(default = "default_cap")]
    pub warmup_token_cap: u64,
    #[serde(default)]
    pub schedule: ScheduleShape,
}

fn default_tpp() -> f64 {
    scaling::DEFAULT_TPP
}
fn default_tau() -> f64 {
    DEFAULT_TAU_EMA
}
fn default_cap() -> u64 {
    DEFAULT_WARMUP_TOKEN_CAP
}

impl Default for RecipeSpec {
    fn default() -> Self {
        RecipeSpec {
            tpp: default_tpp(),
            tau_ema: default_tau(),
            batch_size: 8,
            steps: None,
            warmup_token_cap: default_cap(),
            schedule: ScheduleShape::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub parameterization: ParamSpec,
    pub model: ModelConfig,
    #[serde(default)]
    pub recipe: RecipeSpec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    /// Held-out batches averaged for the final loss.
    #[serde(default = "default_eval_batches")]
    pub eval_batches: usize,
}

fn default_eval_batches() -> usize {
    4
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    /// Validates the config and expands every derived quantity.
    pub fn resolve(&self) -> Result<ResolvedRun> {
        self.model.validate()?;
        let kind = self.parameterization.kind()?;
        let c = &self.model;
        let p_total = scaling::total_params(c.width as u64, c.layers as u64, c.vocab_size as u64);
        let r = &self.recipe;
        let eta = self.parameterization.base.eta_base;
        let recipe = match r.steps {
            Some(steps) => TrainingRecipe::with_steps(p_total, r.tpp, r.batch_size, c.seq_len, steps, r.tau_ema, eta)?,
            None => TrainingRecipe::new(p_total, r.tpp, r.batch_size, c.seq_len, r.tau_ema, eta)?,
        };
        let mut base = self.parameterization.base;
        if r.tau_ema > 0.0 {
            base.lambda_base = recipe.lambda_base;
        }
        let opts = PlanOptions {
            d_head: c.d_head,
            attn_scale: self.parameterization.attn_scale,
            ln_bias_depth_correction: self.parameterization.ln_bias_depth_correction,
            bias_init_std: self.parameterization.bias_init_std,
        };
        let plan = resolve_plan_with(kind, &base, c.width, c.layers, &opts)?;
        let schedule = match r.schedule {
            ScheduleShape::WarmupLinearDecay => {
                Schedule::warmup_decay(recipe.n_steps, r.batch_size, c.seq_len, r.warmup_token_cap)?
            }
            ScheduleShape::Constant => Schedule::constant(recipe.n_steps),
        };
        let mut config = self.clone();
        config.parameterization.base = base;
        if let DataSpec::Text { path } = &config.data {
            if !path.exists() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("data file {} not found", path.display()),
                )));
            }
        }
        Ok(ResolvedRun {
            config,
            recipe,
            schedule,
            plan: PlanDocument::from(&plan),
            param_count: c.param_count() as u64,
        })
    }
}

/// A run config with all defaults and derived values written out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub recipe: TrainingRecipe,
    pub schedule: Schedule,
    pub plan: PlanDocument,
    /// Trainable scalars including biases and LayerNorm parameters.
    pub param_count: u64,
}

impl ResolvedRun {
    pub fn plan(&self) -> ScalingPlan {
        ScalingPlan::try_from(self.plan.clone()).expect("resolved plan is valid")
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub tokens_seen: u64,
    /// `None` when the loss was not finite.
    pub loss: Option<f64>,
    pub lr: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Single-run training state.
pub struct Trainer<T> {
    pub model: Transformer<T>,
    pub opt: AdamWState<T>,
    pub schedule: Schedule,
    pub data: DataSource,
    pub seed: u64,
    pub batch: usize,
    pub seq: usize,
    pub step: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(run: &ResolvedRun) -> Result<Self> {
        let plan = run.plan();
        let cfg = &run.config;
        let model = Transformer::new(cfg.model, plan.clone(), cfg.seed)?;
        let opt = AdamWState::new(&model.params, &plan);
        Ok(Trainer {
            model,
            opt,
            schedule: run.schedule,
            data: DataSource::open(&cfg.data)?,
            seed: cfg.seed,
            batch: cfg.recipe.batch_size,
            seq: cfg.model.seq_len,
            step: 0,
        })
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.schedule.total_steps
    }

    fn lrs(&self, scale: f64) -> BTreeMap<String, f64> {
        ParamRole::ALL.iter().map(|r| (r.key().to_string(), scale * self.model.plan.role(*r).lr)).collect()
    }

    /// One optimizer step on the next training batch.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let next = self.step + 1;
        let b = self.data.batch(self.seed, TRAIN_STREAM, next, self.batch, self.seq);
        let scale = self.schedule.lr(next)?;
        let with_step = |e: Error| match e {
            Error::NonFinite { what, layer, .. } => Error::NonFinite { what, layer, step: Some(next) },
            other => other,
        };
        let (loss, grads, _) = self.model.loss_and_grad(&b.inputs, &b.targets, b.batch).map_err(with_step)?;
        self.opt.step_params(&mut self.model.params, &grads, scale).map_err(with_step)?;
        self.step = next;
        Ok(MetricsRecord {
            step: next,
            tokens_seen: next * (self.batch * self.seq) as u64,
            loss: Some(loss),
            lr: self.lrs(scale),
            error: None,
        })
    }

    /// Mean loss over `n` fixed held-out batches.
    pub fn eval_loss(&self, n: usize) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..n.max(1) {
            let b = self.data.batch(self.seed, EVAL_STREAM, i as u64, self.batch, self.seq);
            total += self.model.loss(&b.inputs, &b.targets, b.batch)?;
        }
        Ok(total / n.max(1) as f64)
    }

    /// Trace of a fixed probe batch under the current parameters.
    pub fn probe_trace(&self) -> Result<ActivationTrace> {
        let b = self.data.batch(self.seed, PROBE_STREAM, 0, self.batch, self.seq);
        let mut t = self.model.forward(&b.inputs, b.batch)?.trace;
        t.step = self.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.model.config,
            plan: self.model.plan.clone(),
            seed: self.seed,
            step: self.step,
            params: self.model.params.clone(),
            optimizer: Some(self.opt.clone()),
        }
    }
}

#[derive(Serialize)]
struct ReportRow {
    step: u64,
    tokens_seen: u64,
    loss: Option<f64>,
}

/// Result of a completed (or aborted) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps_completed: u64,
    pub final_train_loss: Option<f64>,
    pub final_eval_loss: Option<f64>,
    pub error: Option<String>,
}

/// Writes `config.json`, `metrics.jsonl`, `timings.jsonl`, `report.csv`,
/// `plots/loss.svg`, `checkpoint.bin` and `summary.json` under `out`.
/// Wall-clock timings go only to `timings.jsonl`.
pub fn run_to_dir(run: &ResolvedRun, out: &Path) -> Result<TrainSummary> {
    match run.config.precision {
        Precision::F32 => run_typed::<f32>(run, out),
        Precision::F64 => run_typed::<f64>(run, out),
    }
}

fn run_typed<T: Real>(run: &ResolvedRun, out: &Path) -> Result<TrainSummary> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(run)?)?;
    let mut trainer = Trainer::<T>::new(run)?;
    let mut metrics = BufWriter::new(File::create(out.join("metrics.jsonl"))?);
    let mut timings = BufWriter::new(File::create(out.join("timings.jsonl"))?);
    let mut last = None;
    let mut failure = None;
    let mut curve = Vec::new();
    while !trainer.is_done() {
        let t0 = Instant::now();
        match trainer.step() {
            Ok(rec) => {
                last = rec.loss;
                curve.push(ReportRow { step: rec.step, tokens_seen: rec.tokens_seen, loss: rec.loss });
                writeln!(metrics, "{}", serde_json::to_string(&rec)?)?;
                writeln!(
                    timings,
                    "{}",
                    serde_json::json!({"step": rec.step, "wall_ms": t0.elapsed().as_secs_f64() * 1e3})
                )?;
            }
            Err(e) if e.is_numeric() => {
                let step = trainer.step + 1;
                let rec = MetricsRecord {
                    step,
                    tokens_seen: trainer.step * (trainer.batch * trainer.seq) as u64,
                    loss: None,
                    lr: trainer.lrs(trainer.schedule.lr(step).unwrap_or(0.0)),
                    error: Some(e.to_string()),
                };
                writeln!(metrics, "{}", serde_json::to_string(&rec)?)?;
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    metrics.flush()?;
    timings.flush()?;
    let final_eval_loss = if failure.is_none() { trainer.eval_loss(run.config.eval_batches).ok() } else { None };
    save_checkpoint(&out.join("checkpoint.bin"), &trainer.checkpoint())?;
    report::write_csv(&out.join("report.csv"), &curve)?;
    LinePlot {
        title: format!("{} N={} L={}", run.plan().kind.display_name(), run.config.model.width, run.config.model.layers),
        x_label: "step".into(),
        y_label: "train loss".into(),
        log_x: false,
        log_y: false,
        series: vec![Series::new("train", curve.iter().filter_map(|r| Some((r.step as f64, r.loss?))).collect())],
    }
    .write(&out.join("plots").join("loss.svg"))?;
    let summary = TrainSummary {
        steps_completed: trainer.step,
        final_train_loss: last,
        final_eval_loss,
        error: failure.as_ref().map(|e| e.to_string()),
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

/// Final loss of one learning rate in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eta_base: f64,
    pub log2_eta: f64,
    /// `None` when the run diverged.
    pub final_eval_loss: Option<f64>,
    pub dir: PathBuf,
}

/// Trains one run per `η_base`, up to `jobs` at a time, each under
/// `out/eta_<k>`. Points come back in the order of `etas`.
pub fn lr_sweep(config: &RunConfig, etas: &[f64], jobs: usize, out: &Path) -> Result<Vec<SweepPoint>> {
    let runs: Vec<(f64, ResolvedRun, PathBuf)> = etas
        .iter()
        .enumerate()
        .map(|(k, &eta)| {
            let mut c = config.clone();
            c.parameterization.base.eta_base = eta;
            Ok((eta, c.resolve()?, out.join(format!("eta_{k:02}"))))
        })
        .collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let results: Vec<Result<SweepPoint>> = pool.install(|| {
        use rayon::prelude::*;
        runs.par_iter()
            .map(|(eta, run, dir)| {
                let loss = match run_to_dir(run, dir) {
                    Ok(s) => s.final_eval_loss,
                    Err(e) if e.is_numeric() => None,
                    Err(e) => return Err(e),
                };
                Ok(SweepPoint { eta_base: *eta, log2_eta: eta.log2(), final_eval_loss: loss, dir: dir.clone() })
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Index of the lowest finite loss.
pub fn sweep_argmin(points: &[SweepPoint]) -> Option<usize> {
    points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.final_eval_loss.filter(|l| l.is_finite()).map(|l| (i, l)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}
