use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};

use clap::{ArgAction, Args};
use salnet_core::data::{DataConfig, Dataset, Manifest, IMAGENET_MEANS};
use salnet_core::model::{import_weights, load_checkpoint, parse_kv};
use salnet_core::train::{fit, AdamConfig, AdamState, TrainConfig, TrainLog};
use salnet_core::{build_model, Error, ModelConfig, PoolKind, Result};

use crate::settings::{PathArg, Settings};
use crate::Outcome;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training manifest: one `image<TAB>mask` pair per line
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathArg>,
    /// Checkpoint written during and at the end of training
    #[arg(long, value_name = "FILE")]
    out_checkpoint: Option<PathArg>,
    /// FCNW1 container with pretrained weights (typically the encoder)
    #[arg(long, value_name = "FILE")]
    weights: Option<PathArg>,
    /// key=value file renaming container entries to parameter names
    #[arg(long, value_name = "FILE")]
    weights_map: Option<PathArg>,
    /// Continue from a checkpoint, including its optimizer state
    #[arg(long, value_name = "FILE")]
    resume: Option<PathArg>,
    /// Keep encoder parameters fixed
    #[arg(long, default_value_t = true, action = ArgAction::Set, value_name = "BOOL")]
    freeze_encoder: bool,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    batch_size: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Seeds initialization and shuffling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplier on every layer width; 0.0625 gives the tiny model
    #[arg(long, default_value_t = 1.0)]
    channel_scale: f64,
    /// Encoder pooling: average or max
    #[arg(long, default_value = "average")]
    pool: String,
    /// Square side samples are resized to; 0 keeps native sizes
    #[arg(long, default_value_t = 224)]
    size: usize,
    /// Threshold soft masks at one half
    #[arg(long, default_value_t = false, action = ArgAction::Set, value_name = "BOOL")]
    binarize_masks: bool,
    /// Stop after this many optimizer steps in total
    #[arg(long)]
    max_steps: Option<u64>,
    /// Also checkpoint every this many steps
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Per-step loss CSV (`epoch,step,loss`); always echoed to stdout
    #[arg(long, value_name = "FILE")]
    log_csv: Option<PathArg>,
}

pub fn train(a: TrainArgs, s: &mut Settings) -> Result<Outcome> {
    let manifest_path = s.require("manifest", a.manifest)?;
    let out = s.require("out_checkpoint", a.out_checkpoint)?;
    let weights = s.get_opt("weights", a.weights)?;
    let weights_map = s.get_opt("weights_map", a.weights_map)?;
    let resume = s.get_opt("resume", a.resume)?;
    let freeze = s.get("freeze_encoder", a.freeze_encoder)?;
    let epochs = s.get("epochs", a.epochs)?;
    let batch_size = s.get("batch_size", a.batch_size)?;
    let lr = s.get("lr", a.lr)?;
    let seed = s.get("seed", a.seed)?;
    let scale = s.get("channel_scale", a.channel_scale)?;
    let pool: PoolKind = s.get("pool", a.pool)?.parse()?;
    let size = s.get("size", a.size)?;
    let binarize = s.get("binarize_masks", a.binarize_masks)?;
    let max_steps = s.get_opt("max_steps", a.max_steps)?;
    let checkpoint_every = s.get_opt("checkpoint_every", a.checkpoint_every)?;
    let log_csv = s.get_opt("log_csv", a.log_csv)?;
    s.log("train");

    let cfg = TrainConfig {
        epochs,
        batch_size,
        adam: AdamConfig { lr, ..Default::default() },
        seed,
        max_steps,
        checkpoint_every,
        checkpoint_path: Some(out.0.clone()),
    };
    cfg.validate()?;

    // Everything that can fail on inputs is checked before the first write.
    let manifest = Manifest::load(manifest_path.as_ref())?;
    if manifest.is_empty() {
        return Err(Error::Usage(format!("{manifest_path} lists no samples")));
    }
    let missing = manifest.missing_files();
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().take(5).map(|p| p.display().to_string()).collect();
        return Err(Error::Usage(format!("{} manifest files missing, e.g. {}", missing.len(), list.join(", "))));
    }

    let (model, mut params, mut state) = match &resume {
        Some(path) => {
            let ck = load_checkpoint(path.as_ref())?;
            let model = ck.model()?;
            let state = ck.optimizer.unwrap_or_else(|| AdamState::new(cfg.adam));
            log::info!("resuming from {path} at step {}", state.t);
            (model, ck.params, state)
        }
        None => {
            let config = ModelConfig::default().with_channel_scale(scale).with_pool(pool);
            let (model, params) = build_model(config, seed)?;
            (model, params, AdamState::new(cfg.adam))
        }
    };
    state.config.lr = lr;
    if let Some(w) = &weights {
        let map: HashMap<String, String> = match &weights_map {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.0.clone(), source: e })?;
                parse_kv(&text)?.into_iter().collect()
            }
            None => HashMap::new(),
        };
        let report = import_weights(&mut params, w.as_ref(), &map)?;
        log::info!("imported {w}: {}", report.to_string().trim_end());
        if report.matched.is_empty() {
            log::warn!("no tensor in {w} matched a parameter name");
        }
    }
    if freeze {
        let n = params.freeze_encoder();
        log::info!("froze {n} encoder tensors");
    }
    log::info!(
        "{} samples, {} parameters ({} trainable elements)",
        manifest.len(),
        params.len(),
        params.iter().filter(|e| e.updatable()).map(|e| e.value.len()).sum::<usize>()
    );

    let data = Dataset::new(
        manifest,
        DataConfig {
            size: (size > 0).then_some((size, size)),
            means: IMAGENET_MEANS,
            binarize_masks: binarize,
        },
    );
    let mut file = match &log_csv {
        Some(p) => {
            let f = File::create(p).map_err(|e| Error::Io { path: p.0.clone(), source: e })?;
            let mut w = BufWriter::new(f);
            writeln!(w, "{}", TrainLog::CSV_HEADER).map_err(|e| Error::Io { path: p.0.clone(), source: e })?;
            Some(w)
        }
        None => None,
    };
    println!("{}", TrainLog::CSV_HEADER);
    let mut write_err = None;
    fit(&model, &mut params, &mut state, &data, &cfg, |r| {
        let line = TrainLog::csv_line(r);
        println!("{line}");
        if let Some(w) = file.as_mut() {
            if let Err(e) = writeln!(w, "{line}") {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let (Some(w), Some(p)) = (file.as_mut(), &log_csv) {
        let res = match write_err {
            Some(e) => Err(e),
            None => w.flush(),
        };
        res.map_err(|e| Error::Io { path: p.0.clone(), source: e })?;
    }
    log::info!("wrote {out} after {} steps", state.t);
    Ok(Outcome::Ok)
}
