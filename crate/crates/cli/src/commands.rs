use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use completep::diagnostics::coordcheck::CoordVariant;
use completep::diagnostics::maxupdate::LrRule;
use completep::diagnostics::{
    coordinate_check, laziness_experiment, max_update_probe, sigprop, CoordCheckConfig, LazinessConfig,
    MaxUpdateConfig, UpdateMode, UpdateRule,
};
use completep::parameterization::{
    resolve_plan_with, AttnScaleMode, BaseHyperparams, ParamKind, PlanOptions, ScalingPlan,
};
use completep::report::{write_csv, write_json, LinePlot, Series};
use completep::scaling::{fit_power_law, nl_grid, GridOptions};
use completep::train::{lr_sweep, run_to_dir, sweep_argmin, Precision, RunConfig};

use crate::lr_grid::parse_lr_grid;
use crate::{
    usage, AttnScaleArg, Cli, Command, CoordArgs, CoordVariantArg, FitArgs, GridArgs, KindArg, LazinessArgs,
    MaxUpdateArgs, PlanArgs, PrecisionArg, RuleArg, SigpropArgs, TrainArgs, UpdateArg,
};

const DEFAULT_OUT: &str = "out";

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Plan(a) => plan(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Coordcheck(a) => coordcheck(cli, a),
        Command::Laziness(a) => laziness(cli, a),
        Command::Maxupdate(a) => maxupdate(cli, a),
        Command::Sigprop(a) => sigprop_cmd(cli, a),
        Command::Fit(a) => fit(cli, a),
        Command::Grid(a) => grid(cli, a),
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn kind_from(kind: KindArg, alpha: Option<f64>) -> Result<ParamKind> {
    let checked = |a: f64| ParamKind::depth_alpha(a).map_err(|e| usage("--alpha", e.to_string()));
    match (kind, alpha) {
        (KindArg::Sp, None) => Ok(ParamKind::Sp),
        (KindArg::Mup, None) => Ok(ParamKind::MuP),
        (KindArg::Sp | KindArg::Mup, Some(_)) => Err(usage("--alpha", "only depth_alpha and completep take --alpha")),
        (KindArg::Completep, a) => checked(a.unwrap_or(1.0)),
        (KindArg::DepthAlpha, Some(a)) => checked(a),
        (KindArg::DepthAlpha, None) => Err(usage("--alpha", "required for --kind depth_alpha")),
    }
}

fn plan(cli: &Cli, a: &PlanArgs) -> Result<()> {
    let kind = kind_from(a.kind, a.alpha)?;
    let base = BaseHyperparams {
        sigma_base: a.base.sigma,
        eta_base: a.base.eta,
        lambda_base: a.base.lambda,
        epsilon_base: a.base.eps,
        n_base: a.base.n,
        l_base: a.base.l,
    };
    let opts = PlanOptions {
        d_head: a.d_head,
        attn_scale: match a.attn_scale {
            AttnScaleArg::InvHeadDim => AttnScaleMode::InvHeadDim,
            AttnScaleArg::InvSqrtHeadDim => AttnScaleMode::InvSqrtHeadDim,
            AttnScaleArg::InvWidth => AttnScaleMode::InvWidth,
        },
        ln_bias_depth_correction: !a.no_ln_bias_correction,
        ..PlanOptions::default()
    };
    let plan = resolve_plan_with(kind, &base, a.n, a.l, &opts).map_err(|e| usage("plan", e.to_string()))?;
    let json = plan.to_json();
    match &cli.out {
        Some(out) => {
            let path = if out.extension().is_some_and(|e| e == "json") { out.clone() } else { out.join("plan.json") };
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None if a.diff.is_none() => println!("{json}"),
        None => {}
    }
    if let Some(other_path) = &a.diff {
        let text =
            fs::read_to_string(other_path).with_context(|| format!("reading --diff {}", other_path.display()))?;
        let other = ScalingPlan::from_json(&text).map_err(|e| usage("--diff", e.to_string()))?;
        let diffs = plan.diff(&other);
        for d in &diffs {
            println!("{}\t{}\t{}", d.field, d.left, d.right);
        }
        println!("{} differences", diffs.len());
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    RunConfig::from_json(&text).map_err(|e| usage("config", e.to_string()))
}

#[derive(Serialize)]
struct SweepRow {
    eta_base: f64,
    log2_eta: f64,
    final_eval_loss: Option<f64>,
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut config = load_config(&a.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = out_dir(cli);
    match &a.lr_grid {
        None => {
            let run = config.resolve().map_err(|e| match e {
                completep::Error::Io(_) => anyhow::Error::from(e),
                other => usage("config", other.to_string()),
            })?;
            eprintln!("training {} steps into {}", run.recipe.n_steps, out.display());
            let summary = run_to_dir(&run, &out)?;
            println!(
                "steps {}  final train loss {}  eval loss {}",
                summary.steps_completed,
                fmt_opt(summary.final_train_loss),
                fmt_opt(summary.final_eval_loss)
            );
        }
        Some(spec) => {
            let etas = parse_lr_grid(spec).map_err(|e| usage("--lr-grid", format!("{e:#}")))?;
            let points = lr_sweep(&config, &etas, cli.jobs, &out)?;
            let rows: Vec<SweepRow> = points
                .iter()
                .map(|p| SweepRow { eta_base: p.eta_base, log2_eta: p.log2_eta, final_eval_loss: p.final_eval_loss })
                .collect();
            write_csv(&out.join("sweep.csv"), &rows)?;
            LinePlot {
                title: format!("LR sweep, L={}", config.model.layers),
                x_label: "eta_base".into(),
                y_label: "final eval loss".into(),
                log_x: true,
                log_y: false,
                series: vec![Series::new(
                    "final loss",
                    points.iter().filter_map(|p| Some((p.eta_base, p.final_eval_loss?))).collect(),
                )],
            }
            .write(&out.join("plots").join("lr_sweep.svg"))?;
            println!("log2_eta\tfinal_eval_loss");
            for p in &points {
                println!("{}\t{}", p.log2_eta, fmt_opt(p.final_eval_loss));
            }
            match sweep_argmin(&points) {
                Some(i) => println!("best eta_base = 2^{}", points[i].log2_eta),
                None => println!("every run diverged"),
            }
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "diverged".to_string(), |v| format!("{v:.6}"))
}

#[derive(Serialize)]
struct FinalNormRow<'a> {
    variant: &'a str,
    depth: usize,
    step: usize,
    final_norm: Option<f64>,
}

#[derive(Serialize)]
struct GrowthSummary {
    variant: String,
    growth: Vec<(usize, f64)>,
}

fn coordcheck(cli: &Cli, a: &CoordArgs) -> Result<()> {
    let variants = if a.variants.is_empty() {
        CoordVariant::ALL.to_vec()
    } else {
        a.variants
            .iter()
            .map(|v| match v {
                CoordVariantArg::Sp => CoordVariant::Sp,
                CoordVariantArg::AlphaHalfUncorrected => CoordVariant::AlphaHalfUncorrected,
                CoordVariantArg::AlphaHalf => CoordVariant::AlphaHalf,
                CoordVariantArg::Completep => CoordVariant::CompleteP,
            })
            .collect()
    };
    let defaults = CoordCheckConfig::default();
    let cfg = CoordCheckConfig {
        variants,
        depths: a.depths.clone(),
        steps: a.steps,
        width: a.width,
        d_head: a.d_head,
        seq_len: a.seq_len,
        batch: a.batch,
        base: BaseHyperparams {
            sigma_base: a.sigma,
            eta_base: a.eta,
            n_base: a.width,
            l_base: a.base_l,
            ..defaults.base
        },
        seed: cli.seed.unwrap_or(0),
        precision: match a.precision {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        },
        jobs: cli.jobs,
    };
    let report = coordinate_check(&cfg).map_err(|e| match e {
        completep::Error::InvalidArgument(_) => usage("coordcheck", e.to_string()),
        other => other.into(),
    })?;
    let out = out_dir(cli);
    write_csv(&out.join("coordcheck.csv"), &report.rows)?;
    let finals: Vec<FinalNormRow> = report
        .series
        .iter()
        .flat_map(|s| {
            s.final_norm.iter().enumerate().map(|(t, v)| FinalNormRow {
                variant: &s.variant,
                depth: s.depth,
                step: t,
                final_norm: *v,
            })
        })
        .collect();
    write_csv(&out.join("coordcheck_final.csv"), &finals)?;
    let growth: Vec<GrowthSummary> = cfg
        .variants
        .iter()
        .map(|v| GrowthSummary { variant: v.label().into(), growth: report.growth(v.label()) })
        .collect();
    write_json(&out.join("coordcheck_summary.json"), &serde_json::json!({"growth": growth, "events": report.events}))?;
    for v in &cfg.variants {
        let series = report
            .series
            .iter()
            .filter(|s| s.variant == v.label())
            .map(|s| {
                Series::new(
                    format!("L={}", s.depth),
                    s.final_norm.iter().enumerate().filter_map(|(t, n)| Some((t as f64, (*n)?))).collect(),
                )
            })
            .collect();
        LinePlot {
            title: format!("coordinate check: {}", v.label()),
            x_label: "step".into(),
            y_label: "final-layer residual Frobenius norm".into(),
            log_x: false,
            log_y: true,
            series,
        }
        .write(&out.join("plots").join(format!("coordcheck_{}.svg", v.label().replace([' ', '='], "_"))))?;
    }
    println!("variant\tdepth\tmax_t ratio vs shallowest");
    for g in &growth {
        for (d, r) in &g.growth {
            println!("{}\t{d}\t{r:.4}", g.variant);
        }
    }
    for e in &report.events {
        println!("event: {} L={} step {}: {}", e.variant, e.depth, e.step, e.message);
    }
    Ok(())
}

fn laziness(cli: &Cli, a: &LazinessArgs) -> Result<()> {
    let mut kinds = a
        .alpha
        .iter()
        .map(|&x| ParamKind::depth_alpha(x).map_err(|e| usage("--alpha", e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if a.mup {
        kinds.push(ParamKind::MuP);
    }
    let defaults = LazinessConfig::default();
    if kinds.is_empty() {
        kinds = defaults.kinds.clone();
    }
    let cfg = LazinessConfig {
        kinds,
        depths: a.depths.clone(),
        n_seeds: a.seeds,
        eta0: a.eta0,
        width: a.width,
        batch: a.batch,
        layer: a.layer,
        mode: match a.update {
            UpdateArg::Both => UpdateMode::Both,
            UpdateArg::W2 => UpdateMode::W2,
        },
        rule: match a.rule {
            RuleArg::Sign => UpdateRule::Sign,
            RuleArg::Gradient => UpdateRule::Gradient,
        },
        seed: cli.seed.unwrap_or(0),
        jobs: cli.jobs,
        ..defaults
    };
    let report = laziness_experiment(&cfg).map_err(|e| usage("laziness", e.to_string()))?;
    let out = out_dir(cli);
    write_csv(&out.join("laziness_points.csv"), &report.points)?;
    write_csv(&out.join("laziness_summary.csv"), &report.summaries)?;
    write_json(&out.join("laziness.json"), &serde_json::json!({"fits": report.fits, "summaries": report.summaries}))?;
    let series = report
        .fits
        .iter()
        .map(|f| {
            Series::new(
                f.variant.clone(),
                report
                    .summaries
                    .iter()
                    .filter(|s| s.variant == f.variant)
                    .filter_map(|s| Some((s.depth as f64, s.median?)))
                    .collect(),
            )
        })
        .collect();
    LinePlot {
        title: "linearization distance".into(),
        x_label: "depth L".into(),
        y_label: "median metric".into(),
        log_x: true,
        log_y: true,
        series,
    }
    .write(&out.join("plots").join("laziness.svg"))?;
    println!("variant\tslope\tr2\tevents");
    for f in &report.fits {
        match f.fit {
            Some(fit) => println!("{}\t{:.4}\t{:.4}\t{}", f.variant, fit.slope, fit.r2, f.n_events),
            None => println!("{}\t-\t-\t{}", f.variant, f.n_events),
        }
    }
    Ok(())
}

fn maxupdate(cli: &Cli, a: &MaxUpdateArgs) -> Result<()> {
    let kind = ParamKind::depth_alpha(a.alpha).map_err(|e| usage("--alpha", e.to_string()))?;
    let cfg = MaxUpdateConfig {
        kind,
        lr_rule: if a.depth_unaware { LrRule::DepthUnaware } else { LrRule::Plan },
        with_bias: a.with_bias,
        bias_depth_correction: !a.no_bias_correction,
        depths: a.depths.clone(),
        width: a.width,
        batch: a.batch,
        eta_base: a.eta,
        n_seeds: a.seeds,
        seed: cli.seed.unwrap_or(0),
        ..MaxUpdateConfig::default()
    };
    let report = max_update_probe(&cfg).map_err(|e| match e {
        completep::Error::NonFinite { .. } => anyhow::Error::from(e),
        other => usage("maxupdate", other.to_string()),
    })?;
    let out = out_dir(cli);
    write_csv(&out.join("maxupdate.csv"), &report.points)?;
    write_json(
        &out.join("maxupdate.json"),
        &serde_json::json!({"variant": report.variant, "spread": report.spread(), "points": report.points}),
    )?;
    println!("{}", report.variant);
    println!("depth\thidden_lr\tdelta_sq");
    for p in &report.points {
        println!("{}\t{:.4e}\t{:.6e}", p.depth, p.hidden_lr, p.delta_sq);
    }
    println!("spread (max/min) = {:.4}", report.spread());
    Ok(())
}

#[derive(Serialize)]
struct SigpropRow {
    layer: usize,
    h: f64,
}

fn sigprop_cmd(cli: &Cli, a: &SigpropArgs) -> Result<()> {
    let r = sigprop(a.alpha, a.sigma2, a.l, a.h0).map_err(|e| usage("sigprop", e.to_string()))?;
    let ratio = r.last() / a.h0;
    println!("H^L/H^0 = {ratio:.12}");
    match r.limit.value() {
        v if v.is_finite() => println!("limit: {} (H^L -> {v:.12})", r.limit.label()),
        _ => println!("limit: {}", r.limit.label()),
    }
    if let Some(out) = &cli.out {
        let stride = (a.l / 1000).max(1);
        let rows: Vec<SigpropRow> = r
            .h_seq
            .iter()
            .enumerate()
            .filter(|(l, _)| l % stride == 0 || *l == a.l)
            .map(|(layer, &h)| SigpropRow { layer, h })
            .collect();
        write_csv(&out.join("sigprop.csv"), &rows)?;
        write_json(
            &out.join("sigprop.json"),
            &serde_json::json!({"alpha": a.alpha, "sigma2": a.sigma2, "L": a.l, "H0": a.h0, "ratio": ratio, "limit": r.limit}),
        )?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct FitInput {
    #[serde(alias = "F")]
    flops: f64,
    #[serde(alias = "X")]
    loss: f64,
}

#[derive(Serialize)]
struct FitRow {
    flops: f64,
    loss: f64,
    predicted: f64,
    log_residual: f64,
}

fn fit(cli: &Cli, a: &FitArgs) -> Result<()> {
    let mut reader = csv::Reader::from_path(&a.input).with_context(|| format!("reading --in {}", a.input.display()))?;
    let points = reader
        .deserialize::<FitInput>()
        .map(|r| r.map(|p| (p.flops, p.loss)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| usage("--in", e.to_string()))?;
    let fit = fit_power_law(&points).map_err(|e| usage("--in", e.to_string()))?;
    println!("a = {:.6e}", fit.a);
    println!("b = {:.6}", fit.b);
    println!("rss = {:.3e} over {} points", fit.rss, fit.n_points);
    let rows: Vec<FitRow> = points
        .iter()
        .zip(&fit.residuals)
        .map(|(&(flops, loss), &r)| FitRow { flops, loss, predicted: fit.predict(flops), log_residual: r })
        .collect();
    println!("flops\tloss\tpredicted");
    for r in &rows {
        println!("{:.4e}\t{:.6}\t{:.6}", r.flops, r.loss, r.predicted);
    }
    let out = out_dir(cli);
    write_csv(&out.join("fit_table.csv"), &rows)?;
    write_json(&out.join("fit.json"), &fit)?;
    Ok(())
}

fn grid(cli: &Cli, a: &GridArgs) -> Result<()> {
    let opts = GridOptions {
        d_head: a.d_head,
        count: Some(a.count),
        vocab: a.vocab,
        seq_len: a.seq_len,
        tpp: a.tpp,
        ..GridOptions::default()
    };
    let shapes = nl_grid(a.p, &opts).map_err(|e| usage("--p", e.to_string()))?;
    println!("N\tL\tN:L\tP_nonemb\tP_total\ttokens\tFLOPs\tbatch\tsteps");
    for s in &shapes {
        println!(
            "{}\t{}\t{:.1}\t{}\t{}\t{}\t{:.3e}\t{}\t{}",
            s.n, s.l, s.n_over_l, s.p_nonemb, s.p_total, s.tokens, s.train_flops, s.batch_size, s.steps
        );
    }
    let out = out_dir(cli);
    write_csv(&out.join("grid.csv"), &shapes)?;
    write_json(&out.join("grid.json"), &shapes)?;
    Ok(())
}
