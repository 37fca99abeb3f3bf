use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Relative improvement needed to reset the patience counter.
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 3,
            min_lr: 1e-6,
            threshold: 1e-4,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!(
                "plateau factor must lie in (0, 1), got {}",
                self.factor
            )));
        }
        if !(self.min_lr >= 0.0) || !(self.threshold >= 0.0) {
            return Err(Error::Config(
                "plateau min_lr and threshold must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub lr: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl PlateauState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Feeds one epoch's monitored (lower-is-better) metric and returns the
    /// learning rate for the next epoch.
    pub fn step(&mut self, metric: f64, cfg: &PlateauConfig) -> f64 {
        let improved = match self.best {
            None => true,
            Some(best) => metric < best - best.abs() * cfg.threshold,
        };
        if improved {
            self.best = Some(metric);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= cfg.patience {
                self.lr = (self.lr * cfg.factor).max(cfg.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Learning rate in effect after each epoch for a metric sequence.
pub fn plateau_schedule(initial_lr: f64, metrics: &[f64], cfg: &PlateauConfig) -> Vec<f64> {
    let mut st = PlateauState::new(initial_lr);
    metrics.iter().map(|&m| st.step(m, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_metric_halves_after_patience() {
        let lrs = plateau_schedule(1e-3, &[1.0; 8], &PlateauConfig::default());
        assert_eq!(lrs, vec![1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 5e-4, 2.5e-4, 2.5e-4]);
    }

    #[test]
    fn improving_metric_keeps_rate() {
        let metrics: Vec<f64> = (0..10).map(|i| 1.0 - 0.01 * i as f64).collect();
        assert!(plateau_schedule(1e-3, &metrics, &PlateauConfig::default())
            .iter()
            .all(|&l| l == 1e-3));
    }

    #[test]
    fn floor_is_respected() {
        let lrs = plateau_schedule(2e-6, &[1.0; 20], &PlateauConfig::default());
        assert_eq!(*lrs.last().unwrap(), 1e-6);
    }
}
