//! JSON document written by `iad detect`.
//!
//! Everything except `timings` is a pure function of the input traces and
//! the echoed configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{classify_vmm, AnomalyEvent, Detection};
use crate::model::DetectorConfig;

pub const RESULTS_FORMAT_VERSION: u32 = 1;

/// Configuration echo; enough to rerun the detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub detector: DetectorConfig,
    /// Resolved warm-up (`detector.warmup_ticks` may be null).
    pub warmup_ticks: usize,
    pub max_gap: usize,
    pub min_events: usize,
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
}

/// One tick with at least one changed VM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub vote_fraction: f64,
    pub anomalous: bool,
    pub changed_vm_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmmResult {
    pub vmm_id: String,
    pub num_vms: usize,
    pub num_ticks: usize,
    /// Range of ticks that received a verdict; null when the series is too
    /// short for any.
    pub first_verdict_tick: Option<usize>,
    pub last_verdict_tick: Option<usize>,
    pub anomalous: bool,
    pub anomalous_ticks: usize,
    /// Ticks in the verdict range not listed here had a vote of zero.
    pub verdicts: Vec<TickRecord>,
    pub events: Vec<AnomalyEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub detect_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub format_version: u32,
    pub config: RunEcho,
    pub vmms: Vec<VmmResult>,
    pub timings: Timings,
}

impl VmmResult {
    pub fn from_detection(d: &Detection, min_events: usize) -> Self {
        Self {
            vmm_id: d.vmm_id.clone(),
            num_vms: d.num_vms,
            num_ticks: d.num_ticks,
            first_verdict_tick: d.verdicts.first().map(|v| v.tick),
            last_verdict_tick: d.verdicts.last().map(|v| v.tick),
            anomalous: classify_vmm(&d.events, min_events),
            anomalous_ticks: d.anomalous_ticks().count(),
            verdicts: d
                .verdicts
                .iter()
                .filter(|v| v.num_changed() > 0)
                .map(|v| TickRecord {
                    tick: v.tick,
                    vote_fraction: v.vote_fraction,
                    anomalous: v.anomalous,
                    changed_vm_ids: v.changed_vm_ids().map(str::to_string).collect(),
                })
                .collect(),
            events: d.events.clone(),
        }
    }
}

impl DetectionReport {
    pub fn new(config: RunEcho, detections: &[Detection], detect_seconds: f64) -> Self {
        let vmms = detections
            .iter()
            .map(|d| VmmResult::from_detection(d, config.min_events))
            .collect();
        Self {
            format_version: RESULTS_FORMAT_VERSION,
            config,
            vmms,
            timings: Timings { detect_seconds },
        }
    }

    pub fn predictions(&self) -> BTreeMap<String, bool> {
        self.vmms
            .iter()
            .map(|v| (v.vmm_id.clone(), v.anomalous))
            .collect()
    }

    pub fn events_by_vmm(&self) -> BTreeMap<String, Vec<AnomalyEvent>> {
        self.vmms
            .iter()
            .map(|v| (v.vmm_id.clone(), v.events.clone()))
            .collect()
    }
}
