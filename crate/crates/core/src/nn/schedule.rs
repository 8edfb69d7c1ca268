use serde::{Deserialize, Serialize};

/// Halves the learning rate whenever the epoch loss has not improved on the
/// best value by more than `min_delta` for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub patience: usize,
    #[serde(default)]
    pub min_delta: f64,
    current: f64,
    best: f64,
    since_improvement: usize,
    halvings: u32,
}

impl LrSchedule {
    pub fn new(initial: f64, patience: usize) -> Self {
        LrSchedule {
            initial,
            patience,
            min_delta: 0.0,
            current: initial,
            best: f64::INFINITY,
            since_improvement: 0,
            halvings: 0,
        }
    }

    pub fn rate(&self) -> f64 {
        self.current
    }

    pub fn halvings(&self) -> u32 {
        self.halvings
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feeds one epoch's mean loss and returns the rate for the next epoch.
    pub fn update(&mut self, epoch_loss: f64) -> f64 {
        if epoch_loss < self.best - self.min_delta {
            self.best = epoch_loss;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                self.halvings += 1;
                self.current = self.initial * 0.5f64.powi(self.halvings as i32);
                self.since_improvement = 0;
            }
        }
        self.current
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::new(0.01, 10)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_losses_keep_the_rate() {
        let mut s = LrSchedule::default();
        for e in 0..30 {
            s.update(1.0 / (e + 1) as f64);
        }
        assert_eq!(s.rate(), 0.01);
    }

    #[test]
    fn decreases_below_min_delta_count_as_flat() {
        let mut s = LrSchedule::default();
        s.min_delta = 1e-4;
        s.update(1.0);
        for e in 1..=10 {
            s.update(1.0 - 5e-6 * e as f64);
        }
        assert_eq!(s.rate(), 0.005);
        assert_eq!(s.best(), 1.0);
    }

    #[test]
    fn plateau_of_ten_halves_once() {
        let mut s = LrSchedule::default();
        s.update(1.0);
        for epoch in 2..=11 {
            let r = s.update(1.0);
            if epoch < 11 {
                assert_eq!(r, 0.01, "epoch {epoch}");
            }
        }
        assert_eq!(s.rate(), 0.005);
    }

    #[test]
    fn plateau_of_twenty_halves_twice() {
        let mut s = LrSchedule::default();
        s.update(1.0);
        for _ in 0..20 {
            s.update(1.0);
        }
        assert_eq!(s.rate(), 0.0025);
        assert_eq!(s.halvings(), 2);
    }

    #[test]
    fn improvement_resets_the_counter() {
        let mut s = LrSchedule::default();
        s.update(1.0);
        for _ in 0..9 {
            s.update(1.0);
        }
        s.update(0.5);
        for _ in 0..9 {
            s.update(0.7);
        }
        assert_eq!(s.rate(), 0.01);
        s.update(0.7);
        assert_eq!(s.rate(), 0.005);
    }
}
