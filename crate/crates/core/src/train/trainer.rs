use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use super::loss::mse_loss_and_grad;
use super::schedule::{PlateauSchedule, ScheduleEvent};
use crate::datahub::{batch_labels, batch_signals, ImuWindow};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, IoNext, Mode, ScheduleState, TrainingMeta};

pub const HISTORY_FILE: &str = "history.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    /// Rate used during the epoch.
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    LrFloor,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::LrFloor => "lr_floor",
        })
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen in this run.
    pub best: Checkpoint,
    /// Final state including optimizer moments, suitable for resuming.
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// Single-precision training state: model, optimizer, schedule and history.
pub struct Trainer {
    model: IoNext<f32>,
    adam: Adam<f32>,
    schedule: PlateauSchedule,
    cfg: TrainConfig,
    epoch: usize,
    sample_rate: Option<f64>,
    history: Vec<EpochRecord>,
    best: Option<Checkpoint>,
}

impl Trainer {
    pub fn new(model: IoNext<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(model.params(), cfg.adam());
        let schedule = PlateauSchedule::new(
            cfg.initial_lr,
            cfg.plateau_factor,
            cfg.plateau_patience,
            cfg.lr_floor,
        );
        Ok(Self {
            model,
            adam,
            schedule,
            cfg,
            epoch: 0,
            sample_rate: None,
            history: Vec::new(),
            best: None,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`]. Epoch
    /// numbering, optimizer moments and schedule state carry over.
    pub fn resume(ckpt: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let (Some(opt), Some(sched)) = (&ckpt.optimizer, &ckpt.schedule) else {
            return Err(Error::Checkpoint(
                "checkpoint has no optimizer/schedule state and cannot be resumed".into(),
            ));
        };
        let mut t = Self::new(ckpt.model()?, cfg)?;
        t.adam = Adam::from_state(t.model.params(), t.cfg.adam(), opt)?;
        t.schedule = t.schedule.restore(
            sched.lr,
            ckpt.meta.best_val_loss,
            sched.epochs_since_improvement,
        );
        t.epoch = ckpt.meta.epoch;
        t.sample_rate = ckpt.meta.sample_rate_hz;
        Ok(t)
    }

    /// Recorded in checkpoints so evaluation can reject data at another rate.
    pub fn set_sample_rate(&mut self, hz: f64) {
        self.sample_rate = Some(hz);
    }

    pub fn model(&self) -> &IoNext<f32> {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr()
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn steps_taken(&self) -> u64 {
        self.adam.steps_taken()
    }

    fn meta(&self) -> TrainingMeta {
        TrainingMeta {
            epoch: self.epoch,
            best_val_loss: self.schedule.best(),
            rng_seed: self.cfg.rng_seed,
            sample_rate_hz: self.sample_rate,
            window_seconds: Some(self.cfg.window_seconds),
        }
    }

    /// Current parameters with optimizer and schedule state.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::from_model(&self.model, self.meta());
        c.optimizer = Some(self.adam.state());
        c.schedule = Some(ScheduleState {
            lr: self.schedule.lr(),
            epochs_since_improvement: self.schedule.epochs_since_improvement(),
        });
        c
    }

    /// Best-validation parameters seen since this trainer was created.
    pub fn best_checkpoint(&self) -> Option<&Checkpoint> {
        self.best.as_ref()
    }

    /// One Adam step on a minibatch; returns the training-mode loss.
    ///
    /// A non-finite loss leaves the parameters untouched and is reported
    /// with `batch` as the index.
    pub fn step(&mut self, windows: &[&ImuWindow], batch: usize) -> Result<f64> {
        let x = batch_signals::<f32>(windows)?;
        let y = batch_labels::<f32>(windows);
        let (pred, tape) = self.model.forward_with(&x, Mode::Train)?;
        let dim = self.model.config().output_dim;
        let (loss, d_out) = mse_loss_and_grad(&pred, &y, dim)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                epoch: self.epoch + 1,
                batch,
            });
        }
        let grads = self.model.backward(&tape, &d_out);
        self.model.update_running_stats(&tape);
        let lr = self.schedule.lr();
        self.adam.step(self.model.params_mut(), &grads, lr);
        Ok(f64::from(loss))
    }

    /// Shuffles `train` with the epoch's seeded order, runs one pass of
    /// minibatch steps, then measures validation loss and updates the
    /// schedule.
    pub fn run_epoch(&mut self, train: &[ImuWindow], val: &[ImuWindow]) -> Result<EpochRecord> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Invalid(
                "training and validation sets must be non-empty".into(),
            ));
        }
        let lr = self.schedule.lr();
        let mut order: Vec<&ImuWindow> = train.iter().collect();
        order.shuffle(&mut epoch_rng(self.cfg.rng_seed, self.epoch));
        let mut total = 0.0;
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            total += self.step(chunk, b)? * chunk.len() as f64;
        }
        let train_mse = total / train.len() as f64;
        let val_mse = mse_on(&self.model, val, self.cfg.batch_size)?;
        if !val_mse.is_finite() {
            return Err(Error::NonFinite {
                epoch: self.epoch + 1,
                batch: 0,
            });
        }
        self.epoch += 1;
        if let ScheduleEvent::Improved = self.schedule.observe(val_mse) {
            self.best = Some(Checkpoint::from_model(&self.model, self.meta()));
        }
        let rec = EpochRecord {
            epoch: self.epoch,
            train_mse,
            val_mse,
            lr,
        };
        self.history.push(rec.clone());
        Ok(rec)
    }

    /// Runs epochs until `max_epochs` is reached or the rate falls below the
    /// floor. `on_epoch` sees every record as it is produced.
    pub fn fit(
        &mut self,
        train: &[ImuWindow],
        val: &[ImuWindow],
        mut on_epoch: impl FnMut(&EpochRecord, &Trainer) -> Result<()>,
    ) -> Result<StopReason> {
        loop {
            if self.epoch >= self.cfg.max_epochs {
                return Ok(StopReason::MaxEpochs);
            }
            let rec = self.run_epoch(train, val)?;
            on_epoch(&rec, self)?;
            if self.schedule.below_floor() {
                return Ok(StopReason::LrFloor);
            }
        }
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Eval-mode loss over `windows`, processed in chunks of `batch_size`.
pub fn mse_on(model: &IoNext<f32>, windows: &[ImuWindow], batch_size: usize) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Invalid("empty window set".into()));
    }
    let mut total = 0.0;
    let refs: Vec<&ImuWindow> = windows.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let pred = model.forward(&batch_signals(chunk)?)?;
        let y = batch_labels::<f32>(chunk);
        total += pred
            .iter()
            .zip(&y)
            .map(|(&p, &t)| (f64::from(p) - f64::from(t)).powi(2))
            .sum::<f64>();
    }
    Ok(total / windows.len() as f64)
}

/// Trains a fresh model to completion.
pub fn train(
    model: IoNext<f32>,
    train: &[ImuWindow],
    val: &[ImuWindow],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut t = Trainer::new(model, cfg.clone())?;
    let stop = t.fit(train, val, |_, _| Ok(()))?;
    let best = t
        .best_checkpoint()
        .cloned()
        .expect("at least one epoch ran, so a best checkpoint exists");
    Ok(TrainOutcome {
        best,
        last: t.checkpoint(),
        history: t.history,
        stop,
    })
}

pub fn write_history(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    if records.is_empty() {
        w.write_record(["epoch", "train_mse", "val_mse", "lr"])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::data(path, e.to_string())
}
