use std::path::Path;

use clap::Args;
use salnet_core::data::{Manifest, IMAGENET_MEANS};
use salnet_core::eval::{evaluate_dataset, write_text, EvalConfig, MetricsReport, ModelSource, PredictionDir};
use salnet_core::model::load_checkpoint;
use salnet_core::Result;

use crate::settings::{PathArg, Settings};
use crate::Outcome;

/// Where the maps come from: stored predictions or a checkpoint run on the fly.
#[derive(Args, Debug)]
pub struct MapArgs {
    /// Directory of `<image stem>.pgm` saliency maps
    #[arg(long, value_name = "DIR")]
    pred_dir: Option<PathArg>,
    /// Run this checkpoint on the manifest images instead of reading maps
    #[arg(long, value_name = "FILE", conflicts_with = "pred_dir")]
    checkpoint: Option<PathArg>,
    /// Ground truth: one `image<TAB>mask` pair per line
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathArg>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    maps: MapArgs,
    /// Maps are binarized with `value > threshold`
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// β² in the F-measure
    #[arg(long, default_value_t = 0.09)]
    beta_squared: f64,
    /// Metrics CSV; printed to stdout when absent
    #[arg(long, value_name = "FILE")]
    out: Option<PathArg>,
}

#[derive(Args, Debug)]
pub struct PrCurveArgs {
    #[command(flatten)]
    maps: MapArgs,
    /// Thresholds spaced evenly over [0, 1]
    #[arg(long, default_value_t = 256)]
    points: usize,
    /// PR curve CSV
    #[arg(long, value_name = "FILE")]
    out: Option<PathArg>,
}

struct Resolved {
    pred_dir: Option<PathArg>,
    checkpoint: Option<PathArg>,
    manifest: PathArg,
}

fn resolve_maps(m: MapArgs, s: &mut Settings) -> Result<Resolved> {
    let pred_dir = s.get_opt("pred_dir", m.pred_dir)?;
    let checkpoint = s.get_opt("checkpoint", m.checkpoint)?;
    let manifest = s.require("manifest", m.manifest)?;
    if pred_dir.is_some() == checkpoint.is_some() {
        return Err(salnet_core::Error::Usage("give exactly one of --pred-dir and --checkpoint".into()));
    }
    Ok(Resolved { pred_dir, checkpoint, manifest })
}

fn run(r: &Resolved, cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let manifest = Manifest::load(r.manifest.as_ref())?;
    let report = match (&r.pred_dir, &r.checkpoint) {
        (Some(dir), _) => evaluate_dataset(&PredictionDir::new(&dir.0), &manifest, cfg)?,
        (None, Some(ck)) => {
            let ck = load_checkpoint(ck.as_ref())?;
            let model = ck.model()?;
            let source = ModelSource { model: &model, params: &ck.params, means: IMAGENET_MEANS };
            evaluate_dataset(&source, &manifest, cfg)?
        }
        (None, None) => unreachable!("checked in resolve_maps"),
    };
    if !report.skipped.is_empty() {
        eprintln!("skipped {} of {} entries:", report.skipped.len(), manifest.len());
        for (name, why) in &report.skipped {
            eprintln!("  {name}: {why}");
        }
    }
    Ok(report)
}

pub fn eval(a: EvalArgs, s: &mut Settings) -> Result<Outcome> {
    let maps = resolve_maps(a.maps, s)?;
    let cfg = EvalConfig {
        threshold: s.get("threshold", a.threshold)?,
        beta_squared: s.get("beta_squared", a.beta_squared)?,
        ..Default::default()
    };
    let out = s.get_opt("out", a.out)?;
    s.log("eval");
    let report = run(&maps, &cfg)?;
    match &out {
        Some(p) => {
            write_text(p.as_ref(), &report.to_csv())?;
            println!("{}\n{}", MetricsReport::CSV_HEADER, report.average_row());
        }
        None => print!("{}", report.to_csv()),
    }
    Ok(Outcome::Ok)
}

pub fn pr_curve(a: PrCurveArgs, s: &mut Settings) -> Result<Outcome> {
    let maps = resolve_maps(a.maps, s)?;
    let cfg = EvalConfig { pr_thresholds: s.get("points", a.points)?, ..Default::default() };
    let out = s.require("out", a.out)?;
    s.log("pr-curve");
    let report = run(&maps, &cfg)?;
    write_text(Path::new(&out.0), &report.pr_csv())?;
    log::info!("wrote {} points to {out}", report.pr_curve.len());
    Ok(Outcome::Ok)
}
