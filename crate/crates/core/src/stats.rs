//! Single-pass mean and variance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Running count, mean and sum of squared deviations (Welford's recurrence).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::InvalidSample { value: x });
        }
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        let delta2 = x - self.mean;
        // delta and delta2 always share a sign, so m2 never decreases.
        self.m2 += delta * delta2;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Mean of the samples seen so far, 0 when empty.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// Sample variance, `m2 / (count - 1)`.
    pub fn variance(&self) -> Result<f64> {
        if self.count < 2 {
            return Err(Error::InsufficientHistory {
                required: 2,
                available: self.count,
            });
        }
        Ok(self.m2 / (self.count - 1) as f64)
    }

    /// Sample standard deviation.
    pub fn std_dev(&self) -> Result<f64> {
        self.variance().map(f64::sqrt)
    }
}

impl FromIterator<f64> for RunningStats {
    /// Folds the samples; panics on a non-finite value.
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::new();
        for x in iter {
            s.update(x).expect("finite sample");
        }
        s
    }
}

/// Arithmetic mean of a window.
pub fn windowed_mean(window: &[f64]) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::InvalidWindow);
    }
    Ok(window.iter().sum::<f64>() / window.len() as f64)
}
