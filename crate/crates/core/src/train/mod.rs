//! Loss, optimizer, learning-rate schedule, training loop and gradient check.

mod adam;
mod config;
mod gradcheck;
mod loss;
mod schedule;
mod trainer;

pub use adam::{Adam, AdamHyper};
pub use config::TrainConfig;
pub use gradcheck::{
    gradcheck, relative_error, GradcheckEntry, GradcheckOptions, GradcheckReport,
    MAX_GRADCHECK_PARAMS,
};
pub use loss::{mse_loss, mse_loss_and_grad};
pub use schedule::{PlateauSchedule, ScheduleEvent};
pub use trainer::{
    mse_on, read_history, train, write_history, EpochRecord, StopReason, TrainOutcome, Trainer,
    HISTORY_FILE,
};
