//! Per-VM online change-point detection.
//!
//! A [`VmDetectorState`] keeps the `w` most recent samples in a pending
//! window and folds everything older into [`RunningStats`]. Once the window
//! is full and enough history has accumulated, each new sample produces a
//! verdict for tick `t = ticks_seen - w`: the window covers ticks
//! `(t, t + w]` and the history covers ticks `1..=t`.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{DetectorConfig, DetectorKind};
use crate::stats::{windowed_mean, RunningStats};

/// Decision for one tick of one VM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChangePointVerdict {
    pub tick: usize,
    pub change: bool,
}

/// Percent-difference test between the window mean and the history mean.
pub fn mean_detector(window: &[f64], hist: &RunningStats, cfg: &DetectorConfig) -> Result<bool> {
    Ok(mean_shift_exceeds(windowed_mean(window)?, hist, cfg))
}

/// Z-test of the window mean against the history distribution.
pub fn zscore_detector(window: &[f64], hist: &RunningStats, cfg: &DetectorConfig) -> Result<bool> {
    zscore_exceeds(windowed_mean(window)?, window.len(), hist, cfg)
}

fn mean_shift_exceeds(window_mean: f64, hist: &RunningStats, cfg: &DetectorConfig) -> bool {
    let global_mean = hist.mean();
    let percent = 100.0 * (window_mean - global_mean).abs() / global_mean.abs().max(cfg.epsilon);
    percent > cfg.mean_threshold_percent
}

fn zscore_exceeds(
    window_mean: f64,
    window_len: usize,
    hist: &RunningStats,
    cfg: &DetectorConfig,
) -> Result<bool> {
    let global_std = hist.std_dev()?;
    let diff = window_mean - hist.mean();
    if global_std <= cfg.epsilon {
        return Ok(diff.abs() > cfg.epsilon);
    }
    let z = diff / (global_std / (window_len as f64).sqrt());
    Ok(z.abs() > cfg.z_multiplier)
}

/// Online detector state for a single VM stream.
#[derive(Debug, Clone)]
pub struct VmDetectorState {
    vm_id: Arc<str>,
    window: usize,
    pending: VecDeque<f64>,
    /// Running sum of `pending`, recomputed exactly once per `window`
    /// evictions so rounding drift stays bounded.
    pending_sum: f64,
    evictions_since_resum: usize,
    history: RunningStats,
    ticks_seen: usize,
}

impl VmDetectorState {
    pub fn new(vm_id: impl Into<Arc<str>>, cfg: &DetectorConfig) -> Self {
        Self {
            vm_id: vm_id.into(),
            window: cfg.window,
            pending: VecDeque::with_capacity(cfg.window + 1),
            pending_sum: 0.0,
            evictions_since_resum: 0,
            history: RunningStats::new(),
            ticks_seen: 0,
        }
    }

    pub fn vm_id(&self) -> &Arc<str> {
        &self.vm_id
    }

    pub fn ticks_seen(&self) -> usize {
        self.ticks_seen
    }

    pub fn history(&self) -> &RunningStats {
        &self.history
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Ingests one sample. Returns the verdict for tick `ticks_seen - w` when
    /// the window is full and the history is warm.
    ///
    /// `cfg` must carry the same window length the state was built with.
    pub fn step(&mut self, x: f64, cfg: &DetectorConfig) -> Result<Option<ChangePointVerdict>> {
        debug_assert_eq!(cfg.window, self.window);
        if !x.is_finite() {
            return Err(Error::InvalidSample { value: x });
        }
        self.pending.push_back(x);
        self.pending_sum += x;
        self.ticks_seen += 1;
        if self.pending.len() > self.window {
            let oldest = self.pending.pop_front().expect("non-empty window");
            self.history.update(oldest)?;
            self.evictions_since_resum += 1;
            if self.evictions_since_resum >= self.window {
                self.pending_sum = self.pending.iter().sum();
                self.evictions_since_resum = 0;
            } else {
                self.pending_sum -= oldest;
            }
        }
        let required = cfg.warmup().max(cfg.min_history()) as u64;
        if self.pending.len() < self.window || self.history.count() < required {
            return Ok(None);
        }
        let window_mean = self.pending_sum / self.window as f64;
        let change = match cfg.detector_kind {
            DetectorKind::MeanBased => mean_shift_exceeds(window_mean, &self.history, cfg),
            DetectorKind::ZScoreBased => {
                zscore_exceeds(window_mean, self.window, &self.history, cfg)?
            }
        };
        Ok(Some(ChangePointVerdict {
            tick: self.ticks_seen - self.window,
            change,
        }))
    }
}
