//! Plateau learning-rate decay and accuracy-based early stopping.
//!
//! The two trackers watch different signals on purpose: the scheduler and
//! checkpointing follow validation loss, early stopping follows validation
//! accuracy. Their counters are independent.

/// Validation-loss improvement below this does not reset the plateau counter.
pub const PLATEAU_MIN_IMPROVEMENT: f64 = 1e-8;
/// Validation-accuracy improvement below this counts as stagnant.
pub const EARLY_STOP_MIN_IMPROVEMENT: f64 = 1e-4;

/// Multiply the learning rate by `factor` whenever the validation loss has
/// not improved for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr_init: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            lr: lr_init,
            factor,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feed one epoch's validation loss; returns true when the rate was just
    /// reduced (taking effect from the next epoch).
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best - PLATEAU_MIN_IMPROVEMENT {
            self.best = val_loss;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.lr *= self.factor;
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}

/// Stop when validation accuracy has not improved by more than 1e-4 for
/// `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feed one epoch's validation accuracy; returns true when training
    /// should stop after this epoch.
    pub fn observe(&mut self, val_accuracy: f64) -> bool {
        if val_accuracy > self.best + EARLY_STOP_MIN_IMPROVEMENT {
            self.best = val_accuracy;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        self.bad_epochs >= self.patience
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn flat_loss_halves_after_the_first_stagnant_epoch() {
        // Constant 0.9 losses with patience 1: the first epoch sets the
        // baseline, the second is stagnant, so the rate entering epoch 3
        // is half the initial one.
        let mut sched = PlateauScheduler::new(1e-4, 0.5, 1);
        assert!(!sched.observe(0.9));
        assert_abs_diff_eq!(sched.lr(), 1e-4, epsilon = 1e-20);
        assert!(sched.observe(0.9));
        assert_abs_diff_eq!(sched.lr(), 5e-5, epsilon = 1e-20);
        assert!(sched.observe(0.9));
        assert_abs_diff_eq!(sched.lr(), 2.5e-5, epsilon = 1e-20);
    }

    #[test]
    fn improvement_resets_the_plateau_counter() {
        let mut sched = PlateauScheduler::new(1.0, 0.5, 2);
        assert!(!sched.observe(1.0));
        assert!(!sched.observe(1.0)); // bad 1 of 2
        assert!(!sched.observe(0.5)); // improvement resets
        assert!(!sched.observe(0.5));
        assert!(sched.observe(0.5)); // bad 2 of 2
        assert_abs_diff_eq!(sched.lr(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn tiny_improvements_do_not_count() {
        let mut sched = PlateauScheduler::new(1.0, 0.5, 1);
        assert!(!sched.observe(1.0));
        assert!(sched.observe(1.0 - 1e-9));
    }

    #[test]
    fn constant_accuracy_stops_after_patience_epochs() {
        // Accuracy constant from epoch 2: with patience 3, stop fires at
        // epoch 4.
        let mut stopper = EarlyStopper::new(3);
        assert!(!stopper.observe(0.8)); // epoch 1 improves over -inf
        assert!(!stopper.observe(0.8)); // epoch 2, bad 1
        assert!(!stopper.observe(0.8)); // epoch 3, bad 2
        assert!(stopper.observe(0.8)); // epoch 4, bad 3 -> stop
    }

    #[test]
    fn sub_threshold_accuracy_gains_are_stagnant() {
        let mut stopper = EarlyStopper::new(2);
        assert!(!stopper.observe(0.5));
        assert!(!stopper.observe(0.5 + 5e-5));
        assert!(stopper.observe(0.5 + 9e-5));
        let mut stopper = EarlyStopper::new(2);
        assert!(!stopper.observe(0.5));
        assert!(!stopper.observe(0.51)); // real improvement resets
        assert!(!stopper.observe(0.51));
        assert!(stopper.observe(0.51));
    }
}
