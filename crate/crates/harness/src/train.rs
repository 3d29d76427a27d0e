//! Mini-batch training with AdamW, early stopping and best-validation
//! restore.

use htgnn_core::{l1_loss, Batch, LoadModel, Mode, WindowSample};
use htgnn_tensor::{AdamW, AdamWConfig, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Wait,
    Stop,
}

/// Patience counter over validation losses. Epochs are counted from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_epochs: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_epochs: usize) -> Self {
        Self {
            patience,
            min_epochs,
            best: f64::INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_improvement = 0;
            return StopDecision::Improved;
        }
        self.since_improvement += 1;
        if self.since_improvement >= self.patience && epoch >= self.min_epochs {
            StopDecision::Stop
        } else {
            StopDecision::Wait
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub steps: u64,
}

pub fn write_train_log<W: std::io::Write>(writer: W, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "train_loss", "val_loss", "best"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            format!("{:.8}", e.train_loss),
            format!("{:.8}", e.val_loss),
            u8::from(e.best).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluation-mode predictions in model units, `len x 2`.
pub fn predict_all(model: &mut dyn LoadModel, windows: &[&WindowSample], batch_size: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(windows.len() * 2);
    for chunk in windows.chunks(batch_size.max(1)) {
        let out = model.predict(&Batch::from_samples(chunk)?)?;
        data.extend_from_slice(out.data());
    }
    Ok(Tensor::new(vec![windows.len(), 2], data)?)
}

/// Mean over windows of the per-window L1 loss.
pub fn mean_l1(model: &mut dyn LoadModel, windows: &[&WindowSample], batch_size: usize) -> Result<f64> {
    if windows.is_empty() {
        return Err(HarnessError::Empty("evaluate"));
    }
    let pred = predict_all(model, windows, batch_size)?;
    let total: f64 = windows
        .iter()
        .enumerate()
        .map(|(i, w)| (pred.at2(i, 0) - w.y[0]).abs() + (pred.at2(i, 1) - w.y[1]).abs())
        .sum();
    Ok(total / windows.len() as f64)
}

fn snapshot(model: &dyn LoadModel) -> (Vec<Tensor>, Option<Vec<Tensor>>) {
    (model.params().snapshot(), model.buffers().map(|b| b.snapshot()))
}

/// Trains on standardized windows. The model ends up holding the
/// parameters of the epoch with the lowest validation loss.
pub fn train(
    model: &mut dyn LoadModel,
    train_set: &[&WindowSample],
    val_set: &[&WindowSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(HarnessError::Empty("train on"));
    }
    if val_set.is_empty() {
        return Err(HarnessError::Empty("validate on"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        model.params(),
    );
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_epochs);
    let mut best = snapshot(model);
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let started = std::time::Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<&WindowSample> = chunk.iter().map(|&i| train_set[i]).collect();
            let batch = Batch::from_samples(&samples)?;
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &batch, Mode::Train(&mut rng))?;
            let y = tape.constant(batch.y.clone());
            let loss = l1_loss(&mut tape, out, y)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(HarnessError::Diverged { epoch, loss: value });
            }
            total += value * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate(&grads);
            opt.step(params)?;
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = mean_l1(model, val_set, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(HarnessError::Diverged { epoch, loss: val_loss });
        }
        let decision = stopper.observe(epoch, val_loss);
        if decision == StopDecision::Improved {
            best = snapshot(model);
        }
        log::info!(
            "epoch {epoch:>3}  train {train_loss:.5}  val {val_loss:.5}{}  ({:.1} s)",
            if decision == StopDecision::Improved { " *" } else { "" },
            started.elapsed().as_secs_f64()
        );
        epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            best: decision == StopDecision::Improved,
        });
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    model.params_mut().restore(&best.0)?;
    if let (Some(values), Some(buffers)) = (&best.1, model.buffers_mut()) {
        buffers.restore(values)?;
    }
    Ok(TrainReport {
        epochs,
        best_epoch: stopper.best_epoch,
        best_val_loss: stopper.best,
        stopped_early,
        steps: opt.steps_taken(),
    })
}
