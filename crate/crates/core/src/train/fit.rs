use std::fmt::Write as _;
use std::path::PathBuf;

use super::adam::{adam_step, AdamConfig, AdamState};
use crate::autograd::{Graph, Ops};
use crate::data::{batch_indices, load_batch, SampleSource};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Model, ParamStore};
use crate::tensor::{BatchNormMode, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Stop once the optimizer has taken this many steps in total.
    pub max_steps: Option<u64>,
    /// Write a checkpoint every this many steps (and at the end) when `checkpoint_path` is set.
    pub checkpoint_every: Option<u64>,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 20,
            adam: AdamConfig::default(),
            seed: 0,
            max_steps: None,
            checkpoint_every: None,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.adam.lr.is_finite() && self.adam.lr >= 0.0) {
            return Err(Error::config("lr", format!("must be finite and non-negative, got {}", self.adam.lr)));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::config("checkpoint_every", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Zero-based epoch.
    pub epoch: usize,
    /// One-based global optimizer step.
    pub step: u64,
    /// Batch loss before this step's update.
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,step,loss";

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn csv_line(r: &StepRecord) -> String {
        format!("{},{},{:.6}", r.epoch, r.step, r.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            writeln!(s, "{}", Self::csv_line(r)).unwrap();
        }
        s
    }
}

/// Forward, loss and backward on one batch. Fills the store's gradients for
/// every trainable entry and writes the batch-norm running statistics.
/// Returns the batch loss.
pub fn compute_gradients(model: &Model, params: &mut ParamStore, images: &Tensor, masks: &Tensor) -> Result<f64> {
    let mut g = Graph::<f32>::new();
    let bound = model.bind(&mut g, params);
    let x = g.input(images.clone());
    let target = g.input(masks.clone());
    let out = model.forward_bound(&mut g, &bound, params, &x, BatchNormMode::Train)?;
    let loss = g.l1_loss(&out.saliency, &target)?;
    let loss_value = g.value(&loss).data()[0] as f64;
    let mut grads = g.backward(loss, &Tensor::scalar(1.0))?;
    params.zero_grads();
    for (name, id) in &bound {
        if let Some(grad) = grads.take(*id) {
            params.set_grad(name, grad)?;
        }
    }
    for (name, value) in out.bn_updates {
        params.set_value(&name, value)?;
    }
    Ok(loss_value)
}

/// Gradient computation followed by one Adam update.
pub fn train_step(
    model: &Model,
    params: &mut ParamStore,
    state: &mut AdamState,
    images: &Tensor,
    masks: &Tensor,
) -> Result<f64> {
    let loss = compute_gradients(model, params, images, masks)?;
    adam_step(params, state)?;
    Ok(loss)
}

/// Epoch loop with seeded shuffling; the final short batch is kept.
///
/// Training resumes where `state.t` left off: the epoch is `t / batches_per_epoch`
/// and already-consumed batches of that epoch are skipped, so a resumed run
/// sees the same batches as an uninterrupted one.
pub fn fit<S: SampleSource + ?Sized>(
    model: &Model,
    params: &mut ParamStore,
    state: &mut AdamState,
    data: &S,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let per_epoch = data.len().div_ceil(cfg.batch_size) as u64;
    let start_epoch = (state.t / per_epoch) as usize;
    let mut skip = (state.t % per_epoch) as usize;
    let mut log = TrainLog::default();
    let done = |t: u64| cfg.max_steps.is_some_and(|m| t >= m);

    'epochs: for epoch in start_epoch..cfg.epochs {
        let groups = batch_indices(data.len(), cfg.batch_size, cfg.seed, epoch as u64)?;
        for group in groups.into_iter().skip(std::mem::take(&mut skip)) {
            if done(state.t) {
                break 'epochs;
            }
            let batch = load_batch(data, &group)?;
            let loss = train_step(model, params, state, &batch.images, &batch.masks)?;
            let rec = StepRecord { epoch, step: state.t, loss };
            log::debug!("{}", TrainLog::csv_line(&rec));
            on_step(&rec);
            log.records.push(rec);
            if let (Some(every), Some(path)) = (cfg.checkpoint_every, &cfg.checkpoint_path) {
                if state.t % every == 0 {
                    save_checkpoint(path, model.config(), params, Some(state))?;
                }
            }
        }
    }
    if let Some(path) = &cfg.checkpoint_path {
        save_checkpoint(path, model.config(), params, Some(state))?;
    }
    Ok(log)
}
