//! Domain types shared by the detector, the data tooling and the evaluation
//! harness.
//!
//! Time ticks are 1-based everywhere: the first sample of a series is tick 1.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One VM's utilization series, one value per tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmSeries {
    pub vm_id: String,
    pub values: Vec<f64>,
}

impl VmSeries {
    pub fn new(vm_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            vm_id: vm_id.into(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The VMs hosted on one hypervisor; the unit of detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmmGroup {
    pub vmm_id: String,
    pub series: Vec<VmSeries>,
}

impl VmmGroup {
    pub fn new(vmm_id: impl Into<String>, series: Vec<VmSeries>) -> Self {
        Self {
            vmm_id: vmm_id.into(),
            series,
        }
    }

    /// Number of hosted VMs.
    pub fn num_vms(&self) -> usize {
        self.series.len()
    }

    /// Length of the first series; meaningful once the group is validated.
    pub fn num_ticks(&self) -> usize {
        self.series.first().map_or(0, VmSeries::len)
    }
}

/// Checks that a group can be fed to the detector: at least one VM, no empty
/// series, equal lengths, finite values.
///
/// Values outside `[0, 100]` are logged and accepted.
pub fn validate_group(group: &VmmGroup) -> Result<&VmmGroup> {
    let first = group.series.first().ok_or_else(|| Error::EmptyGroup {
        vmm_id: group.vmm_id.clone(),
    })?;
    if let Some(empty) = group.series.iter().find(|s| s.is_empty()) {
        return Err(Error::EmptySeries {
            vm_id: empty.vm_id.clone(),
        });
    }
    let expected = first.len();
    if let Some(bad) = group.series.iter().find(|s| s.len() != expected) {
        return Err(Error::LengthMismatch {
            expected,
            vm_id: bad.vm_id.clone(),
            actual: bad.len(),
        });
    }
    for s in &group.series {
        if let Some(&value) = s.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidSample { value });
        }
        if s.values.iter().any(|v| !(0.0..=100.0).contains(v)) {
            log::warn!(
                "VM `{}` on `{}` has utilization values outside [0, 100]",
                s.vm_id,
                group.vmm_id
            );
        }
    }
    Ok(group)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    MeanBased,
    #[default]
    ZScoreBased,
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mean" | "mean_based" => Ok(DetectorKind::MeanBased),
            "zscore" | "z_score" | "zscore_based" | "z_score_based" => {
                Ok(DetectorKind::ZScoreBased)
            }
            other => Err(Error::InvalidConfig(format!(
                "unknown detector kind `{other}` (expected `mean` or `zscore`)"
            ))),
        }
    }
}

/// Detector hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Window length in ticks; a verdict for tick `t` is available once tick
    /// `t + window` has been ingested.
    #[serde(rename = "w")]
    pub window: usize,
    /// Mean detector threshold on the absolute percent difference.
    pub mean_threshold_percent: f64,
    /// Z-score detector threshold on `|z|`.
    pub z_multiplier: f64,
    /// Minimum percentage of a VMM's VMs that must change at a tick.
    pub min_percent_vms_fault: f64,
    /// History length required before the first verdict; `None` means
    /// `window`.
    pub warmup_ticks: Option<usize>,
    pub epsilon: f64,
    pub detector_kind: DetectorKind,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 60,
            mean_threshold_percent: 5.0,
            z_multiplier: 3.0,
            min_percent_vms_fault: 90.0,
            warmup_ticks: None,
            epsilon: 1e-9,
            detector_kind: DetectorKind::ZScoreBased,
        }
    }
}

impl DetectorConfig {
    pub fn warmup(&self) -> usize {
        self.warmup_ticks.unwrap_or(self.window)
    }

    /// History samples the configured detector needs before it is defined.
    pub fn min_history(&self) -> usize {
        match self.detector_kind {
            DetectorKind::MeanBased => 1,
            DetectorKind::ZScoreBased => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.window < 2 {
            return fail(format!("w must be at least 2, got {}", self.window));
        }
        if !(self.mean_threshold_percent.is_finite() && self.mean_threshold_percent > 0.0) {
            return fail(format!(
                "mean_threshold_percent must be > 0, got {}",
                self.mean_threshold_percent
            ));
        }
        if !(self.z_multiplier.is_finite() && self.z_multiplier > 0.0) {
            return fail(format!(
                "z_multiplier must be > 0, got {}",
                self.z_multiplier
            ));
        }
        if !(self.min_percent_vms_fault > 0.0 && self.min_percent_vms_fault <= 100.0) {
            return fail(format!(
                "min_percent_vms_fault must be in (0, 100], got {}",
                self.min_percent_vms_fault
            ));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return fail(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// Voting result for one VMM at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct VmmVerdict {
    pub vmm_id: Arc<str>,
    pub tick: usize,
    pub anomalous: bool,
    /// `|changed| / d`.
    pub vote_fraction: f64,
    vm_ids: Arc<[Arc<str>]>,
    /// Bit `j` set when VM `j` (hosting order) changed; empty when none did.
    changed: Vec<u64>,
}

impl VmmVerdict {
    /// `vm_ids` lists every VM of the VMM in hosting order; `changed` holds
    /// positions into it, ascending.
    pub fn new(
        vmm_id: Arc<str>,
        tick: usize,
        anomalous: bool,
        vm_ids: Arc<[Arc<str>]>,
        changed: impl IntoIterator<Item = usize>,
    ) -> Self {
        let mut bits: Vec<u64> = Vec::new();
        let mut count = 0usize;
        for j in changed {
            assert!(j < vm_ids.len(), "VM index {j} out of range");
            if bits.is_empty() {
                bits = vec![0; vm_ids.len().div_ceil(64)];
            }
            let (word, bit) = (j / 64, 1u64 << (j % 64));
            if bits[word] & bit == 0 {
                bits[word] |= bit;
                count += 1;
            }
        }
        Self {
            vmm_id,
            tick,
            anomalous,
            vote_fraction: count as f64 / vm_ids.len() as f64,
            vm_ids,
            changed: bits,
        }
    }

    /// Number of VMs hosted on the VMM.
    pub fn num_vms(&self) -> usize {
        self.vm_ids.len()
    }

    pub fn num_changed(&self) -> usize {
        self.changed.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Hosting-order positions of the VMs that changed at `tick`.
    pub fn changed_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.changed.iter().enumerate().flat_map(|(w, &word)| {
            (0..64)
                .filter(move |b| word & (1u64 << b) != 0)
                .map(move |b| w * 64 + b)
        })
    }

    /// Ids of the VMs that changed at `tick`, in hosting order.
    pub fn changed_vm_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.changed_indices().map(|j| &*self.vm_ids[j])
    }

    pub fn changed_set(&self) -> BTreeSet<&str> {
        self.changed_vm_ids().collect()
    }
}

/// Inclusive tick interval, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickInterval {
    pub start: usize,
    pub end: usize,
}

impl TickInterval {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, tick: usize) -> bool {
        (self.start..=self.end).contains(&tick)
    }

    pub fn overlaps(&self, other: &TickInterval) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    /// Checks `1 <= start <= end <= len`.
    pub fn check_within(&self, len: usize) -> Result<()> {
        if self.start >= 1 && self.start <= self.end && self.end <= len {
            Ok(())
        } else {
            Err(Error::IntervalOutOfRange {
                start: self.start,
                end: self.end,
                len,
            })
        }
    }
}

/// Label for one VMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub vmm_id: String,
    pub anomalous: bool,
    pub fault_interval: Option<TickInterval>,
}
