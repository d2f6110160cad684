//! Plateau learning-rate decay and early stopping, driven by a monitored
//! loss (validation loss when fine-tuning, training loss when pre-training).

use super::TrainConfig;

/// Learning rates never decay below this.
pub const MIN_LR: f64 = 1e-6;

/// What happened after observing one epoch's monitored loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub improved: bool,
    pub lr: f64,
    pub lr_decayed: bool,
    pub stop: bool,
}

/// Stateful tracker combining plateau decay and early stopping.
#[derive(Clone, Debug)]
pub struct PlateauTracker {
    factor: f64,
    lr_patience: usize,
    stop_patience: usize,
    min_delta: f64,
    lr: f64,
    best: f64,
    best_epoch: usize,
    epoch: usize,
    since_decay: usize,
    since_best: usize,
}

impl PlateauTracker {
    pub fn new(cfg: &TrainConfig) -> Self {
        PlateauTracker {
            factor: cfg.plateau_factor,
            lr_patience: cfg.plateau_patience,
            stop_patience: cfg.early_stop_patience,
            min_delta: cfg.min_delta,
            lr: cfg.learning_rate,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
            since_decay: 0,
            since_best: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// 1-based epoch of the best loss so far (0 before any observation).
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn observe(&mut self, loss: f64) -> Observation {
        self.epoch += 1;
        let improved = loss.is_finite() && loss < self.best - self.min_delta;
        let mut lr_decayed = false;
        if improved {
            self.best = loss;
            self.best_epoch = self.epoch;
            self.since_best = 0;
            self.since_decay = 0;
        } else {
            self.since_best += 1;
            self.since_decay += 1;
            if self.since_decay >= self.lr_patience {
                let next = (self.lr * self.factor).max(MIN_LR);
                lr_decayed = next < self.lr;
                self.lr = next;
                self.since_decay = 0;
            }
        }
        Observation {
            improved,
            lr: self.lr,
            lr_decayed,
            stop: self.since_best >= self.stop_patience,
        }
    }
}

/// Learning rate after replaying a loss history.
pub fn lr_schedule(history: &[f64], cfg: &TrainConfig) -> f64 {
    let mut t = PlateauTracker::new(cfg);
    for &l in history {
        t.observe(l);
    }
    t.lr()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    /// Stop now and restore the weights of this (1-based) epoch.
    Stop { best_epoch: usize },
}

/// Early-stopping decision after replaying a loss history.
pub fn early_stop(history: &[f64], cfg: &TrainConfig) -> StopDecision {
    let mut t = PlateauTracker::new(cfg);
    for (i, &l) in history.iter().enumerate() {
        if t.observe(l).stop || i + 1 >= cfg.max_epochs {
            return StopDecision::Stop {
                best_epoch: t.best_epoch(),
            };
        }
    }
    StopDecision::Continue
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig {
            max_epochs: 1000,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn decreasing_loss_keeps_lr() {
        let h: Vec<f64> = (0..50).map(|i| 1.0 - i as f64 * 0.01).collect();
        assert_eq!(lr_schedule(&h, &cfg()), 1e-3);
        assert_eq!(early_stop(&h, &cfg()), StopDecision::Continue);
    }

    #[test]
    fn one_and_two_plateaus() {
        let c = cfg();
        let flat = |n| vec![0.5; n];
        // First epoch sets the best; `patience` further flat epochs decay once.
        assert_eq!(lr_schedule(&flat(c.plateau_patience), &c), 1e-3);
        assert!((lr_schedule(&flat(1 + c.plateau_patience), &c) - 1e-4).abs() < 1e-18);
        assert!((lr_schedule(&flat(1 + 2 * c.plateau_patience), &c) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn lr_floor_and_monotone() {
        let c = cfg();
        let h = vec![1.0; 200];
        let mut t = PlateauTracker::new(&c);
        let mut prev = t.lr();
        for &l in &h {
            let o = t.observe(l);
            assert!(o.lr <= prev);
            prev = o.lr;
        }
        assert_eq!(prev, MIN_LR);
    }

    #[test]
    fn flat_history_stops_at_patience_plus_one() {
        let c = TrainConfig {
            early_stop_patience: 12,
            ..cfg()
        };
        let mut t = PlateauTracker::new(&c);
        let stop_epoch = (1..=100).find(|_| t.observe(0.7).stop).unwrap();
        assert_eq!(stop_epoch, 13);
        assert_eq!(
            early_stop(&vec![0.7; 13], &c),
            StopDecision::Stop { best_epoch: 1 }
        );
    }

    #[test]
    fn min_delta_counts_as_no_improvement() {
        let mut t = PlateauTracker::new(&cfg());
        assert!(t.observe(1.0).improved);
        assert!(!t.observe(1.0 - 5e-5).improved);
        assert!(t.observe(0.9).improved);
    }
}
