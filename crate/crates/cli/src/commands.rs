use std::path::Path;

use anyhow::{bail, Context, Result};
use mgseg::attention::MotionGuidanceConfig;
use mgseg::bench::{bench_case, BenchCase, BenchResult, BenchTarget};
use mgseg::flops::{instrumented_breakdown, reference_rows, FlopsRow};
use mgseg::gradcheck::{check_component, Component, ComponentCheck};
use mgseg::metrics::MetricsReport;
use mgseg::network::{load_checkpoint, save_checkpoint};
use mgseg::synth::{load_dataset, save_dataset, VideoClip};
use mgseg::train::{
    ablate, evaluate, kernel_grid, run_experiment, table_variants, write_ablation, write_predictions, AblationSetup,
    EvalOptions, TrainConfig, TrainLog,
};
use mgseg::Shape;
use serde::Serialize;

use crate::config::Config;
use crate::report::{both, write_csv, write_json};
use crate::{Command, ComponentArg, ConfigArgs, Grid, TargetArg};

/// Runs one subcommand; `Ok(false)` means a check failed.
pub fn run(command: Command) -> Result<bool> {
    match command {
        Command::Synth { config, out, count } => synth(&load(&config)?, &out, count),
        Command::Train { config, data, eval_data, no_eval, out } => {
            train(&load(&config)?, data.as_deref(), eval_data.as_deref(), no_eval, &out)
        }
        Command::Eval { config, checkpoint, data, flip, out } => {
            eval(&load(&config)?, &checkpoint, data.as_deref(), flip, &out)
        }
        Command::Ablate { config, grid, windows, cascades, out } => {
            ablation(&load(&config)?, grid, &windows, &cascades, &out)
        }
        Command::Gradcheck { component, seeds, first_seed, out } => {
            gradcheck(&component, first_seed, seeds, out.as_deref())
        }
        Command::Bench { config, target, shape, window, compression, cascade, warmup, rounds, trim, out } => {
            let mut cfg = load(&config)?;
            if let Some(v) = warmup {
                cfg.bench.warmup = v;
            }
            if let Some(v) = rounds {
                cfg.bench.rounds = v;
            }
            if let Some(v) = trim {
                cfg.bench.trim = v;
            }
            bench(&cfg, &target, shape, MotionGuidanceConfig::new(window, compression, cascade), out.as_deref())
        }
        Command::Flops { shape, compression, window, cascade, no_reference, verify, out } => {
            flops(&shape, compression, window, cascade, !no_reference, verify, out.as_deref())
        }
    }
}

fn load(args: &ConfigArgs) -> Result<Config> {
    let mut cfg = Config::load(args.config.as_deref(), &args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn load_clips(dir: &Path) -> Result<Vec<VideoClip>> {
    let clips = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    if clips.is_empty() {
        bail!("no clips found under {}", dir.display());
    }
    Ok(clips)
}

fn synth(cfg: &Config, out: &Path, count: Option<usize>) -> Result<bool> {
    let setup = AblationSetup { train_clips: count.unwrap_or(cfg.train_clips), ..cfg.setup() };
    let clips = setup.data(cfg.seed())?.0;
    save_dataset(out, &clips)?;
    println!("wrote {} clips to {}", clips.len(), out.display());
    Ok(true)
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    sequence: &'a str,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "F")]
    f: f64,
    #[serde(rename = "RF")]
    rf: f64,
    #[serde(rename = "MAE")]
    mae: f64,
    #[serde(rename = "Fbeta")]
    fbeta: f64,
}

fn write_metrics(stem: &Path, report: &MetricsReport) -> Result<()> {
    let (json, csv) = both(stem);
    write_json(&json, report)?;
    let row = |sequence, m: &mgseg::metrics::FrameMetrics| MetricsRow {
        sequence,
        r: m.r,
        f: m.f,
        rf: m.rf,
        mae: m.mae,
        fbeta: m.fbeta,
    };
    let rows = report.sequences.iter().map(|s| row(&s.name, &s.metrics)).chain([row("mean", &report.mean)]);
    write_csv(&csv, rows)
}

fn write_losses(path: &Path, log: &TrainLog) -> Result<()> {
    let rows = std::iter::once(LossRow { epoch: 0, loss: log.initial_loss })
        .chain(log.epoch_losses.iter().enumerate().map(|(i, &loss)| LossRow { epoch: i + 1, loss }));
    write_csv(path, rows)
}

fn print_metrics(report: &MetricsReport) {
    let m = &report.mean;
    println!("R {:.4}  F {:.4}  R&F {:.4}  MAE {:.4}  Fbeta {:.4}", m.r, m.f, m.rf, m.mae, m.fbeta);
}

fn train(cfg: &Config, data: Option<&Path>, eval_data: Option<&Path>, no_eval: bool, out: &Path) -> Result<bool> {
    let seed = cfg.seed();
    let setup = cfg.setup();
    let (train_clips, held_out, source) = match data {
        Some(dir) => {
            let held_out = eval_data.map(load_clips).transpose()?;
            (load_clips(dir)?, held_out, dir.display().to_string())
        }
        None => {
            let (train, test) = setup.data(seed)?;
            let held_out = match eval_data {
                Some(dir) => Some(load_clips(dir)?),
                None if no_eval => None,
                None => Some(test),
            };
            (train, held_out, format!("synthetic, seed {seed}"))
        }
    };
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let eval = held_out.as_deref().map(|clips| (clips, &cfg.eval));
    let (net, mut record) = run_experiment(&cfg.network, &train_cfg, seed, &train_clips, eval)?;
    record.data = source;

    let ckpt = out.join("model.ckpt");
    save_checkpoint(&ckpt, &net, &serde_json::json!({ "seed": seed, "train": train_cfg, "data": record.data }))?;
    record.checkpoint = Some(ckpt.clone());
    write_json(&out.join("run.json"), &record)?;
    write_losses(&out.join("loss.csv"), &record.log)?;
    println!(
        "loss {:.4} -> {:.4} in {:.1}s; checkpoint {}",
        record.log.initial_loss,
        record.log.final_loss,
        record.timings.train_secs,
        ckpt.display()
    );
    if let Some(m) = &record.metrics {
        write_metrics(&out.join("metrics"), m)?;
        print_metrics(m);
    }
    Ok(true)
}

fn eval(cfg: &Config, checkpoint: &Path, data: Option<&Path>, flip: bool, out: &Path) -> Result<bool> {
    let net = load_checkpoint::<f32>(checkpoint)?.network;
    let clips = match data {
        Some(dir) => load_clips(dir)?,
        None => cfg.setup().data(cfg.seed())?.1,
    };
    let opts = EvalOptions { flip: flip || cfg.eval.flip, ..cfg.eval.clone() };
    let (report, preds) = evaluate(&net, &clips, &opts)?;
    write_metrics(&out.join("metrics"), &report)?;
    write_predictions(&out.join("masks"), &clips, &preds)?;
    print_metrics(&report);
    Ok(true)
}

fn ablation(cfg: &Config, grid: Grid, windows: &[usize], cascades: &[usize], out: &Path) -> Result<bool> {
    let variants = match grid {
        Grid::Modules => {
            // a single explicit value wins over the configured guidance
            let g = cfg.network.guidance.first().copied().unwrap_or_default();
            let k = if let [k] = windows { *k } else { g.window };
            let c = if let [c] = cascades { *c } else { g.cascade };
            table_variants(k, c)
        }
        Grid::Kernels => kernel_grid(windows, cascades),
    };
    let report = ablate(&cfg.setup(), &variants, |r| {
        println!(
            "{:<8} seed {:<3} R {:.4}  F {:.4}  loss {:.4}  {:.1}s",
            r.variant, r.seed, r.metrics.r, r.metrics.f, r.final_loss, r.train_secs
        );
    })?;
    write_ablation(out, &report)?;
    for s in &report.summary {
        println!(
            "{:<8} mean over {} R {:.4}  F {:.4}  R&F {:.4}",
            s.variant, s.runs, s.metrics.r, s.metrics.f, s.metrics.rf
        );
    }
    Ok(true)
}

fn component(c: ComponentArg) -> Component {
    match c {
        ComponentArg::Conv2d => Component::Conv2d,
        ComponentArg::BiasAdd => Component::BiasAdd,
        ComponentArg::Relu => Component::Relu,
        ComponentArg::Sigmoid => Component::Sigmoid,
        ComponentArg::ElementwiseMul => Component::ElementwiseMul,
        ComponentArg::Concat => Component::Concat,
        ComponentArg::Upsample => Component::Upsample,
        ComponentArg::Unfold => Component::Unfold,
        ComponentArg::WindowSoftmax => Component::WindowSoftmax,
        ComponentArg::MotionGuidance => Component::MotionGuidance,
        ComponentArg::Cascade => Component::Cascade,
        ComponentArg::Bce => Component::Bce,
        ComponentArg::Network => Component::Network,
    }
}

#[derive(Serialize)]
struct CheckRow {
    component: Component,
    seed: u64,
    relative_error: f64,
    tolerance: f64,
    passed: bool,
}

fn gradcheck(selected: &[ComponentArg], first_seed: u64, seeds: u64, out: Option<&Path>) -> Result<bool> {
    let components: Vec<Component> =
        if selected.is_empty() { Component::all() } else { selected.iter().map(|&c| component(c)).collect() };
    let mut checks: Vec<ComponentCheck> = Vec::new();
    for c in components {
        for seed in first_seed..first_seed + seeds {
            let check = check_component(c, seed)?;
            println!(
                "{:<16} seed {:<3} rel. err {:.3e} (tol {:.0e}) {}",
                serde_json::to_value(c)?.as_str().unwrap_or_default(),
                seed,
                check.relative_error,
                check.tolerance,
                if check.passed { "ok" } else { "FAIL" }
            );
            checks.push(check);
        }
    }
    if let Some(stem) = out {
        let (json, csv) = both(stem);
        write_json(&json, &checks)?;
        write_csv(
            &csv,
            checks.iter().map(|c| CheckRow {
                component: c.component,
                seed: c.seed,
                relative_error: c.relative_error,
                tolerance: c.tolerance,
                passed: c.passed,
            }),
        )?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(failed == 0)
}

#[derive(Serialize)]
struct BenchRow {
    target: BenchTarget,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    compression: usize,
    cascade: usize,
    rounds: usize,
    kept: usize,
    trimmed_mean_ms: f64,
    mean_ms: f64,
    median_ms: f64,
    min_ms: f64,
    max_ms: f64,
}

fn bench(
    cfg: &Config,
    targets: &[TargetArg],
    shape: Shape,
    guidance: MotionGuidanceConfig,
    out: Option<&Path>,
) -> Result<bool> {
    let targets: Vec<BenchTarget> = if targets.is_empty() {
        vec![BenchTarget::MotionGuidanceNaive, BenchTarget::MotionGuidanceFast, BenchTarget::CoAttention]
    } else {
        targets
            .iter()
            .map(|t| match t {
                TargetArg::MgNaive => BenchTarget::MotionGuidanceNaive,
                TargetArg::MgFast => BenchTarget::MotionGuidanceFast,
                TargetArg::MgCascade => BenchTarget::MotionGuidanceCascade,
                TargetArg::CoAttention => BenchTarget::CoAttention,
                TargetArg::Network => BenchTarget::Network,
            })
            .collect()
    };
    let mut results: Vec<BenchResult> = Vec::new();
    for target in targets {
        let case = BenchCase { target, shape, guidance, seed: cfg.seed() };
        let r = bench_case(&case, &cfg.bench)?;
        println!(
            "{:<24} {}  trimmed mean {:.3} ms  (median {:.3}, min {:.3}, max {:.3})",
            format!("{target:?}"),
            shape,
            r.stats.trimmed_mean_ms,
            r.stats.median_ms,
            r.stats.min_ms,
            r.stats.max_ms
        );
        results.push(r);
    }
    if let Some(stem) = out {
        let (json, csv) = both(stem);
        write_json(&json, &results)?;
        write_csv(
            &csv,
            results.iter().map(|r| {
                let s = r.case.shape;
                let g = r.case.guidance;
                BenchRow {
                    target: r.case.target,
                    n: s.n,
                    c: s.c,
                    h: s.h,
                    w: s.w,
                    window: g.window,
                    compression: g.compression,
                    cascade: g.cascade,
                    rounds: r.stats.rounds,
                    kept: r.stats.kept,
                    trimmed_mean_ms: r.stats.trimmed_mean_ms,
                    mean_ms: r.stats.mean_ms,
                    median_ms: r.stats.median_ms,
                    min_ms: r.stats.min_ms,
                    max_ms: r.stats.max_ms,
                }
            }),
        )?;
    }
    Ok(true)
}

#[derive(Serialize)]
struct FlopsEntry {
    #[serde(flatten)]
    row: FlopsRow,
    instrumented_match: Option<bool>,
}

#[derive(Serialize)]
struct FlopsCsvRow {
    module: mgseg::flops::AttentionModule,
    h: usize,
    w: usize,
    c: usize,
    d: usize,
    k: Option<usize>,
    cascade: Option<usize>,
    compression_macs: u64,
    similarity_macs: u64,
    weighted_sum_macs: u64,
    normalization_ops: u64,
    total_macs: u64,
    total_flops: u64,
    reported_millions: Option<f64>,
    instrumented_match: Option<bool>,
}

fn flops(
    shapes: &[(usize, usize, usize)],
    d: usize,
    k: usize,
    cascade: usize,
    reference: bool,
    verify: bool,
    out: Option<&Path>,
) -> Result<bool> {
    let mut rows = if reference { reference_rows()? } else { Vec::new() };
    for &(h, w, c) in shapes {
        rows.push(FlopsRow::co_attention(h, w, c, d)?);
        rows.push(FlopsRow::motion_guidance(h, w, c, d, k, cascade)?);
    }
    if rows.is_empty() {
        bail!("nothing to report: pass --shape or drop --no-reference");
    }
    let mut entries = Vec::with_capacity(rows.len());
    println!(
        "{:<16} {:>4} {:>4} {:>4} {:>2} {:>2} {:>2} {:>14} {:>10}",
        "module", "H", "W", "C", "d", "K", "x", "MACs", "reported"
    );
    for row in rows {
        let matched = if verify { Some(instrumented_breakdown(&row, 0)? == row.breakdown) } else { None };
        let dash = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
        println!(
            "{:<16} {:>4} {:>4} {:>4} {:>2} {:>2} {:>2} {:>14} {:>10}{}",
            serde_json::to_value(row.module)?.as_str().unwrap_or_default(),
            row.h,
            row.w,
            row.c,
            row.d,
            dash(row.k),
            dash(row.cascade),
            row.breakdown.total_macs,
            row.reported_millions.map_or("-".to_string(), |m| format!("{m:.1}M")),
            match matched {
                Some(true) => "  instrumented ok",
                Some(false) => "  instrumented MISMATCH",
                None => "",
            }
        );
        entries.push(FlopsEntry { row, instrumented_match: matched });
    }
    if let Some(stem) = out {
        let (json, csv) = both(stem);
        write_json(&json, &entries)?;
        write_csv(
            &csv,
            entries.iter().map(|e| {
                let (r, b) = (&e.row, &e.row.breakdown);
                FlopsCsvRow {
                    module: r.module,
                    h: r.h,
                    w: r.w,
                    c: r.c,
                    d: r.d,
                    k: r.k,
                    cascade: r.cascade,
                    compression_macs: b.compression_macs,
                    similarity_macs: b.similarity_macs,
                    weighted_sum_macs: b.weighted_sum_macs,
                    normalization_ops: b.normalization_ops,
                    total_macs: b.total_macs,
                    total_flops: b.total_flops,
                    reported_millions: r.reported_millions,
                    instrumented_match: e.instrumented_match,
                }
            }),
        )?;
    }
    Ok(entries.iter().all(|e| e.instrumented_match != Some(false)))
}
