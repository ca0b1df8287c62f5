use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use super::checkpoint::TrainingState;
use super::loss::{multiscale_loss, DEFAULT_FREQ_WEIGHT};
use super::optim::{adam_step, AdamConfig, AdamState};
use super::restore::mean_psnr;
use crate::data::{build_pyramid, Batch, PairDataset};
use crate::error::{Error, Result};
use crate::network::{AmsaUnet, ModelConfig};
use crate::tensor::Graph;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.amsa";
pub const METRICS_HEADER: &str = "epoch,loss,lr,val_psnr";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: u64,
    pub epochs: u64,
    pub batch: usize,
    /// Square training crop; `None` trains on whole images.
    pub crop: Option<usize>,
    pub loss_freq_weight: f64,
    /// Seeds the per-epoch shuffles and crops.
    pub seed: u64,
    /// Pairs held out for validation (the last ones in name order);
    /// `None` holds out a tenth of the data.
    pub holdout: Option<usize>,
    pub checkpoint_every: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            decay_factor: 0.5,
            decay_every: 500,
            epochs: 1,
            batch: 4,
            crop: Some(64),
            loss_freq_weight: DEFAULT_FREQ_WEIGHT,
            seed: 0,
            holdout: None,
            checkpoint_every: 1,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::contract(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::contract(format!("decay_factor must be in (0, 1], got {}", self.decay_factor)));
        }
        if self.decay_every == 0 {
            return Err(Error::contract("decay_every must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::contract("batch must be at least 1"));
        }
        if self.crop == Some(0) {
            return Err(Error::contract("crop must be positive"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::contract("checkpoint_every must be at least 1"));
        }
        if !(self.loss_freq_weight >= 0.0) {
            return Err(Error::contract("loss_freq_weight must be non-negative"));
        }
        Ok(())
    }

    fn holdout_for(&self, pairs: usize) -> usize {
        self.holdout.unwrap_or(pairs / 10).min(pairs)
    }
}

/// `lr0 · decay_factor^⌊epoch / decay_every⌋`.
pub fn lr_at(epoch: u64, cfg: &TrainConfig) -> f64 {
    let k = epoch / cfg.decay_every.max(1);
    cfg.lr0 * cfg.decay_factor.powf(k as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// Completed epochs, starting at 1.
    pub epoch: u64,
    pub loss: f64,
    pub lr: f64,
    pub val_psnr: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.loss, self.lr, self.val_psnr)
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub state: TrainingState,
    pub history: Vec<EpochRecord>,
    pub final_val_psnr: f64,
}

/// Initial parameters with zeroed output heads: training starts from the
/// identity map, whose output is the blurry input at every scale.
pub fn fresh_state(model_cfg: &ModelConfig) -> Result<TrainingState> {
    let model = AmsaUnet::new(model_cfg.clone())?;
    let mut params = model.init_params()?;
    model.zero_heads(&mut params)?;
    Ok(TrainingState {
        model: model_cfg.clone(),
        adam: AdamState::new(&params),
        params,
        epoch: 0,
    })
}

/// Forward, loss, backward and one Adam update. Returns the batch loss.
pub fn train_step(model: &AmsaUnet, state: &mut TrainingState, batch: &Batch, lr: f64, cfg: &TrainConfig) -> Result<f64> {
    let g = Graph::new();
    let tracked = state.params.track(&g);
    let out = model.forward(&g, &tracked, &batch.blur)?;
    let targets = build_pyramid(&batch.sharp)?;
    let loss = multiscale_loss(&g, &out.restored, &targets, cfg.loss_freq_weight)?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss {value} at step {}",
            state.adam.step + 1
        )));
    }
    let grads = tracked.gradients(&g.backward(&loss)?)?;
    adam_step(&mut state.params, &grads, &mut state.adam, lr, &cfg.adam)?;
    Ok(value)
}

/// Drops metric rows past `epoch`, keeping the header.
fn truncate_metrics(path: &Path, epoch: u64) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::from(METRICS_HEADER);
    kept.push('\n');
    for line in text.lines().skip(1) {
        let e: u64 = line
            .split(',')
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Training(format!("malformed metrics row {line:?} in {}", path.display())))?;
        if e <= epoch {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

/// Trains on `train` and validates on full `val` images after each epoch.
///
/// `out_dir` receives `metrics.csv` and `checkpoint.amsa`. With `resume`,
/// an existing checkpoint there is continued from its epoch; the run is then
/// bitwise identical to one that was never interrupted.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train: &PairDataset,
    val: &PairDataset,
    out_dir: &Path,
    resume: bool,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainSummary> {
    cfg.validate()?;
    if train.batches_per_epoch(cfg.batch) == 0 {
        return Err(Error::Dataset {
            path: out_dir.to_path_buf(),
            message: format!("{} training pairs cannot fill a batch of {}", train.len(), cfg.batch),
        });
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let metrics_path = out_dir.join(METRICS_FILE);

    let mut state = if resume && ckpt_path.exists() {
        let state = TrainingState::load(&ckpt_path)?;
        if &state.model != model_cfg {
            return Err(Error::contract(format!(
                "checkpoint was trained with {:?}, not {:?}",
                state.model, model_cfg
            )));
        }
        if metrics_path.exists() {
            truncate_metrics(&metrics_path, state.epoch)?;
        } else {
            fs::write(&metrics_path, format!("{METRICS_HEADER}\n")).map_err(|e| Error::io(&metrics_path, e))?;
        }
        state
    } else {
        fs::write(&metrics_path, format!("{METRICS_HEADER}\n")).map_err(|e| Error::io(&metrics_path, e))?;
        fresh_state(model_cfg)?
    };
    let model = AmsaUnet::new(model_cfg.clone())?;

    let mut history = Vec::new();
    let mut val_psnr = f64::NAN;
    for epoch in state.epoch..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut total = 0.0;
        let mut steps = 0;
        for batch in train.epoch(epoch, cfg.batch, cfg.crop, cfg.seed)? {
            total += train_step(&model, &mut state, &batch?, lr, cfg)?;
            steps += 1;
        }
        state.epoch = epoch + 1;
        val_psnr = if val.is_empty() {
            f64::NAN
        } else {
            mean_psnr(&model, &state.params, val)?
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: total / steps as f64,
            lr,
            val_psnr,
        };
        let mut log = OpenOptions::new()
            .append(true)
            .open(&metrics_path)
            .map_err(|e| Error::io(&metrics_path, e))?;
        writeln!(log, "{}", record.csv_row()).map_err(|e| Error::io(&metrics_path, e))?;
        if state.epoch % cfg.checkpoint_every == 0 || state.epoch == cfg.epochs {
            state.save(&ckpt_path)?;
        }
        on_epoch(&record);
        history.push(record);
    }
    if history.is_empty() && !val.is_empty() {
        val_psnr = mean_psnr(&model, &state.params, val)?;
    }
    Ok(TrainSummary {
        state,
        history,
        final_val_psnr: val_psnr,
    })
}

/// Loads paired directories, holds out the validation pairs and runs [`train`].
pub fn train_loop(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    dir_blur: &Path,
    dir_sharp: &Path,
    out_dir: &Path,
    resume: bool,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainSummary> {
    let mut data = PairDataset::load(dir_blur, dir_sharp)?;
    let val = data.split_off(cfg.holdout_for(data.len()));
    train(model_cfg, cfg, &data, &val, out_dir, resume, on_epoch)
}
