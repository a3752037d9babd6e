use serde::{Deserialize, Serialize};

use crate::error::{QusError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    /// Length of one triangular learning-rate cycle, in epochs.
    pub cycle_epochs: f64,
    /// Epochs without a new best validation AUC before stopping.
    pub patience: usize,
    pub fine_tune: bool,
    /// Factor applied to both learning-rate bounds when fine-tuning.
    pub fine_tune_scale: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            batch_size: 64,
            lr_min: 1e-4,
            lr_max: 1e-3,
            cycle_epochs: 4.0,
            patience: 20,
            fine_tune: false,
            fine_tune_scale: 0.1,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_max) {
            return Err(QusError::invalid("need 0 < lr_min < lr_max"));
        }
        if self.patience == 0 || self.batch_size < 2 {
            return Err(QusError::invalid("patience must be >= 1 and batch_size >= 2"));
        }
        if !(self.cycle_epochs > 0.0) || !(self.fine_tune_scale > 0.0) {
            return Err(QusError::invalid("cycle_epochs and fine_tune_scale must be positive"));
        }
        Ok(())
    }

    pub fn lr_bounds(&self) -> (f64, f64) {
        let s = if self.fine_tune { self.fine_tune_scale } else { 1.0 };
        (self.lr_min * s, self.lr_max * s)
    }

    /// Cycle length in optimizer steps for the given epoch length.
    pub fn cycle_steps(&self, steps_per_epoch: usize) -> usize {
        ((self.cycle_epochs * steps_per_epoch as f64).round() as usize).max(2)
    }

    pub fn lr_at(&self, step: usize, steps_per_epoch: usize) -> f64 {
        let (lo, hi) = self.lr_bounds();
        cyclic_lr(step, lo, hi, self.cycle_steps(steps_per_epoch))
    }
}

/// Triangular cyclic learning rate: `lr_min` at the start of each cycle,
/// `lr_max` halfway through.
pub fn cyclic_lr(step: usize, lr_min: f64, lr_max: f64, cycle_len: usize) -> f64 {
    let frac = (step % cycle_len) as f64 / cycle_len as f64;
    lr_min + (lr_max - lr_min) * (1.0 - (2.0 * frac - 1.0).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Validation-AUC early stopping with 1-based epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub max_epochs: usize,
    pub best_epoch: usize,
    pub best_auc: f64,
}

impl EarlyStopping {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        Self { patience, max_epochs, best_epoch: 0, best_auc: f64::NEG_INFINITY }
    }

    /// Records the AUC of `epoch`; `best_epoch == epoch` afterwards means it
    /// was a strict improvement.
    pub fn observe(&mut self, epoch: usize, auc: f64) -> StopDecision {
        if auc > self.best_auc {
            self.best_auc = auc;
            self.best_epoch = epoch;
        }
        if epoch >= self.max_epochs || epoch - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    /// Replays a validation-AUC trace; returns `(best_epoch, stopped_epoch)`.
    pub fn replay(trace: &[f64], patience: usize, max_epochs: usize) -> (usize, usize) {
        let mut es = EarlyStopping::new(patience, max_epochs);
        for (i, &auc) in trace.iter().enumerate() {
            if es.observe(i + 1, auc) == StopDecision::Stop {
                return (es.best_epoch, i + 1);
            }
        }
        (es.best_epoch, trace.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_wave_landmarks() {
        assert_eq!(cyclic_lr(0, 1e-4, 1e-3, 100), 1e-4);
        assert!((cyclic_lr(50, 1e-4, 1e-3, 100) - 1e-3).abs() < 1e-15);
        assert!((cyclic_lr(25, 1e-4, 1e-3, 100) - 5.5e-4).abs() < 1e-15);
        assert_eq!(cyclic_lr(100, 1e-4, 1e-3, 100), 1e-4);
    }

    #[test]
    fn fine_tune_scales_the_trace() {
        let normal = Schedule::default();
        let ft = Schedule { fine_tune: true, ..normal };
        for step in [0, 3, 17, 40, 91] {
            let a = normal.lr_at(step, 10);
            let b = ft.lr_at(step, 10);
            assert!((b - 0.1 * a).abs() < 1e-15);
        }
    }

    #[test]
    fn peak_at_seven_stops_at_twenty_seven() {
        let mut trace: Vec<f64> = (1..=7).map(|e| 0.5 + 0.05 * e as f64).collect();
        trace.extend(std::iter::repeat_n(0.7, 40));
        assert_eq!(EarlyStopping::replay(&trace, 20, 500), (7, 27));
    }

    #[test]
    fn max_epochs_one_trains_one_epoch() {
        assert_eq!(EarlyStopping::replay(&[0.6, 0.7, 0.8], 20, 1), (1, 1));
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let trace = vec![0.8; 30];
        assert_eq!(EarlyStopping::replay(&trace, 5, 100), (1, 6));
    }
}
