/// Reduce-on-plateau learning rate control.
///
/// The rate is multiplied by `factor` once validation loss has failed to
/// improve on its best value for more than `patience` consecutive epochs.
/// Training stops once the rate falls below `floor`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    factor: f64,
    patience: usize,
    floor: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScheduleEvent {
    Improved,
    Waiting,
    Reduced { from: f64, to: f64 },
}

/// Relative slack when comparing the rate against the floor, so that a
/// product like `1e-4 · 0.1 · 0.1` is not treated as below `1e-6`.
const FLOOR_SLACK: f64 = 1e-9;

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, patience: usize, floor: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            floor,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn restore(mut self, lr: f64, best: Option<f64>, bad_epochs: usize) -> Self {
        self.lr = lr;
        self.best = best;
        self.bad_epochs = bad_epochs;
        self
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.bad_epochs
    }

    pub fn below_floor(&self) -> bool {
        self.lr < self.floor * (1.0 - FLOOR_SLACK)
    }

    pub fn observe(&mut self, val_loss: f64) -> ScheduleEvent {
        if self.best.is_none_or(|b| val_loss < b) {
            self.best = Some(val_loss);
            self.bad_epochs = 0;
            return ScheduleEvent::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            let from = self.lr;
            self.lr *= self.factor;
            self.bad_epochs = 0;
            return ScheduleEvent::Reduced { from, to: self.lr };
        }
        ScheduleEvent::Waiting
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_reductions_then_floor() {
        let mut s = PlateauSchedule::new(1e-4, 0.1, 10, 1e-6);
        assert_eq!(s.observe(1.0), ScheduleEvent::Improved);
        let mut reductions = Vec::new();
        for _ in 0..100 {
            if let ScheduleEvent::Reduced { to, .. } = s.observe(2.0) {
                reductions.push(to);
                if s.below_floor() {
                    break;
                }
            }
        }
        assert_eq!(reductions.len(), 3);
        assert!(!PlateauSchedule::new(reductions[1], 0.1, 10, 1e-6).below_floor());
        assert!(s.below_floor());
    }

    #[test]
    fn patience_counts_non_improving_epochs() {
        let mut s = PlateauSchedule::new(1.0, 0.5, 2, 1e-3);
        s.observe(1.0);
        assert_eq!(s.observe(1.0), ScheduleEvent::Waiting);
        assert_eq!(s.observe(1.5), ScheduleEvent::Waiting);
        assert_eq!(
            s.observe(1.2),
            ScheduleEvent::Reduced { from: 1.0, to: 0.5 }
        );
        assert_eq!(s.observe(0.9), ScheduleEvent::Improved);
    }
}
