//! Per-VMM voting over the per-VM change-point detectors.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::VmDetectorState;
use crate::error::{Error, Result};
use crate::model::{validate_group, DetectorConfig, VmmGroup, VmmVerdict};

/// Default number of quiet ticks tolerated inside one event.
pub const DEFAULT_MAX_GAP: usize = 2;
/// Ticks per block in [`detect_offline`].
const OFFLINE_BLOCK: usize = 4096;
/// Default number of events needed to call a VMM anomalous.
pub const DEFAULT_MIN_EVENTS: usize = 1;

/// A maximal run of anomalous ticks for one VMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub vmm_id: String,
    pub start_tick: usize,
    pub end_tick: usize,
    pub peak_vote_fraction: f64,
}

/// Streaming detector for one VMM. Every call to [`step`](Self::step) takes
/// exactly one value per hosted VM.
#[derive(Debug, Clone)]
pub struct VmmEngineState {
    vmm_id: Arc<str>,
    vm_ids: Arc<[Arc<str>]>,
    cfg: DetectorConfig,
    vms: Vec<VmDetectorState>,
}

impl VmmEngineState {
    pub fn new<I, S>(vmm_id: impl Into<Arc<str>>, vm_ids: I, cfg: DetectorConfig) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<Arc<str>>,
    {
        cfg.validate()?;
        let vmm_id = vmm_id.into();
        let vms: Vec<_> = vm_ids
            .into_iter()
            .map(|id| VmDetectorState::new(id, &cfg))
            .collect();
        if vms.is_empty() {
            return Err(Error::EmptyGroup {
                vmm_id: vmm_id.to_string(),
            });
        }
        let vm_ids = vms.iter().map(|v| Arc::clone(v.vm_id())).collect();
        Ok(Self {
            vmm_id,
            vm_ids,
            cfg,
            vms,
        })
    }

    pub fn vmm_id(&self) -> &str {
        &self.vmm_id
    }

    pub fn num_vms(&self) -> usize {
        self.vms.len()
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn ticks_seen(&self) -> usize {
        self.vms[0].ticks_seen()
    }

    /// Ingests one tick. Returns the verdict for tick `ticks_seen - w` once
    /// the detectors are warm.
    ///
    /// The whole tick is checked before any detector advances, so an error
    /// leaves the state untouched.
    pub fn step(&mut self, xs: &[f64]) -> Result<Option<VmmVerdict>> {
        if xs.len() != self.vms.len() {
            return Err(Error::ArityMismatch {
                expected: self.vms.len(),
                actual: xs.len(),
            });
        }
        if let Some(&value) = xs.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidSample { value });
        }
        let mut tick = None;
        let mut changed = Vec::new();
        for (j, (vm, &x)) in self.vms.iter_mut().zip(xs).enumerate() {
            if let Some(v) = vm.step(x, &self.cfg)? {
                tick = Some(v.tick);
                if v.change {
                    changed.push(j);
                }
            }
        }
        Ok(tick.map(|tick| vote(&self.vmm_id, &self.vm_ids, tick, changed, &self.cfg)))
    }
}

/// Applies the voting rule: anomalous when at least `min_percent_vms_fault`
/// percent of the VMs changed.
fn vote(
    vmm_id: &Arc<str>,
    vm_ids: &Arc<[Arc<str>]>,
    tick: usize,
    changed: impl IntoIterator<Item = usize>,
    cfg: &DetectorConfig,
) -> VmmVerdict {
    let mut v = VmmVerdict::new(Arc::clone(vmm_id), tick, false, Arc::clone(vm_ids), changed);
    let votes = v.num_changed() as f64;
    // votes / d * 100 >= f, without the rounding of the division
    v.anomalous = votes * 100.0 >= cfg.min_percent_vms_fault * vm_ids.len() as f64;
    v
}

/// Verdicts and events for one VMM.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub vmm_id: String,
    pub num_vms: usize,
    pub num_ticks: usize,
    pub verdicts: Vec<VmmVerdict>,
    pub events: Vec<AnomalyEvent>,
}

impl Detection {
    pub fn anomalous_ticks(&self) -> impl Iterator<Item = &VmmVerdict> {
        self.verdicts.iter().filter(|v| v.anomalous)
    }
}

/// Replays a whole group through [`VmmEngineState`] and merges the anomalous
/// ticks into events with [`DEFAULT_MAX_GAP`].
pub fn detect_offline(group: &VmmGroup, cfg: &DetectorConfig) -> Result<Detection> {
    detect_offline_with_gap(group, cfg, DEFAULT_MAX_GAP)
}

pub fn detect_offline_with_gap(
    group: &VmmGroup,
    cfg: &DetectorConfig,
    max_gap: usize,
) -> Result<Detection> {
    validate_group(group)?;
    cfg.validate()?;
    let vmm_id: Arc<str> = group.vmm_id.as_str().into();
    let d = group.num_vms();
    let n = group.num_ticks();
    let mut states: Vec<VmDetectorState> = group
        .series
        .iter()
        .map(|s| VmDetectorState::new(s.vm_id.as_str(), cfg))
        .collect();
    let vm_ids: Arc<[Arc<str>]> = states.iter().map(|s| Arc::clone(s.vm_id())).collect();
    // Ticks are processed in blocks: every VM runs over the block into a
    // compact flag matrix (`flags[vm * OFFLINE_BLOCK + k]`), then the block is
    // voted. Series are read sequentially and the result equals feeding
    // `VmmEngineState` one tick at a time.
    let mut flags = vec![false; OFFLINE_BLOCK * d];
    let mut verdicts = Vec::with_capacity(n.saturating_sub(cfg.window + cfg.warmup()) + 1);
    for block_start in (0..n).step_by(OFFLINE_BLOCK) {
        let block_end = (block_start + OFFLINE_BLOCK).min(n);
        let mut first_tick = None;
        let mut emitted = 0;
        for (j, (state, s)) in states.iter_mut().zip(&group.series).enumerate() {
            let row = &mut flags[j * OFFLINE_BLOCK..(j + 1) * OFFLINE_BLOCK];
            let mut k = 0;
            for &x in &s.values[block_start..block_end] {
                if let Some(v) = state.step(x, cfg)? {
                    first_tick.get_or_insert(v.tick);
                    row[k] = v.change;
                    k += 1;
                }
            }
            emitted = k;
        }
        let Some(first_tick) = first_tick else {
            continue;
        };
        for k in 0..emitted {
            let changed = (0..d).filter(|&j| flags[j * OFFLINE_BLOCK + k]);
            verdicts.push(vote(&vmm_id, &vm_ids, first_tick + k, changed, cfg));
        }
    }
    let events = merge_events(&verdicts, max_gap);
    Ok(Detection {
        vmm_id: group.vmm_id.clone(),
        num_vms: group.num_vms(),
        num_ticks: group.num_ticks(),
        verdicts,
        events,
    })
}

/// Runs [`detect_offline_with_gap`] over many VMMs on `parallelism` threads.
/// Output order follows input order regardless of scheduling.
pub fn detect_many(
    groups: &[VmmGroup],
    cfg: &DetectorConfig,
    max_gap: usize,
    parallelism: usize,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    if parallelism <= 1 {
        return groups
            .iter()
            .map(|g| detect_offline_with_gap(g, cfg, max_gap))
            .collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        groups
            .par_iter()
            .map(|g| detect_offline_with_gap(g, cfg, max_gap))
            .collect()
    })
}

/// Merges anomalous ticks into events. Two runs separated by at most
/// `max_gap` non-anomalous ticks form one event. Verdicts must be sorted by
/// tick.
pub fn merge_events(verdicts: &[VmmVerdict], max_gap: usize) -> Vec<AnomalyEvent> {
    let mut events: Vec<AnomalyEvent> = Vec::new();
    for v in verdicts.iter().filter(|v| v.anomalous) {
        match events.last_mut() {
            Some(e)
                if e.vmm_id == *v.vmm_id && v.tick.saturating_sub(e.end_tick + 1) <= max_gap =>
            {
                e.end_tick = v.tick;
                e.peak_vote_fraction = e.peak_vote_fraction.max(v.vote_fraction);
            }
            _ => events.push(AnomalyEvent {
                vmm_id: v.vmm_id.to_string(),
                start_tick: v.tick,
                end_tick: v.tick,
                peak_vote_fraction: v.vote_fraction,
            }),
        }
    }
    events
}

/// A VMM is predicted anomalous when it has at least `min_events` events.
pub fn classify_vmm(events: &[AnomalyEvent], min_events: usize) -> bool {
    events.len() >= min_events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VmSeries;

    fn verdict(tick: usize, anomalous: bool) -> VmmVerdict {
        let ids: Arc<[Arc<str>]> = vec![Arc::from("vm0")].into();
        let changed = if anomalous { vec![0] } else { vec![] };
        VmmVerdict::new("vmm".into(), tick, anomalous, ids, changed)
    }

    /// Engine with `d` VMs, w=2 and zero warm-up, pre-fed with three ticks of
    /// 50 so that the next tick of input already yields a verdict.
    fn voting_engine(d: usize, f: f64) -> VmmEngineState {
        let cfg = DetectorConfig {
            window: 2,
            warmup_ticks: Some(0),
            min_percent_vms_fault: f,
            ..Default::default()
        };
        let mut e = VmmEngineState::new("vmm", (0..d).map(|i| format!("vm{i}")), cfg).unwrap();
        for _ in 0..3 {
            assert!(e.step(&vec![50.0; d]).unwrap().is_none());
        }
        e
    }

    fn vote(d: usize, changed: usize, f: f64) -> VmmVerdict {
        let mut e = voting_engine(d, f);
        // Constant history has zero std, so any deviation counts as a change.
        let mut row = vec![50.0; d];
        for x in row.iter_mut().take(changed) {
            *x = 60.0;
        }
        e.step(&row).unwrap().unwrap()
    }

    #[test]
    fn nine_of_ten_is_anomalous_at_ninety_percent() {
        let v = vote(10, 9, 90.0);
        assert_eq!(v.num_changed(), 9);
        assert_eq!(
            v.changed_vm_ids().collect::<Vec<_>>(),
            (0..9).map(|i| format!("vm{i}")).collect::<Vec<_>>()
        );
        assert!((v.vote_fraction - 0.9).abs() < 1e-15);
        assert!(v.anomalous);
    }

    #[test]
    fn eight_of_ten_is_not() {
        let v = vote(10, 8, 90.0);
        assert!(!v.anomalous);
    }

    #[test]
    fn two_vm_groups_need_both() {
        assert!(!vote(2, 1, 90.0).anomalous);
        assert!(vote(2, 2, 90.0).anomalous);
    }

    #[test]
    fn hundred_percent_reachable() {
        assert!(vote(4, 4, 100.0).anomalous);
        assert!(!vote(4, 3, 100.0).anomalous);
    }

    #[test]
    fn arity_checked() {
        let mut e = voting_engine(3, 90.0);
        let before = e.ticks_seen();
        assert!(matches!(
            e.step(&[1.0, 2.0]),
            Err(Error::ArityMismatch {
                expected: 3,
                actual: 2
            })
        ));
        assert!(matches!(
            e.step(&[1.0, f64::NAN, 2.0]),
            Err(Error::InvalidSample { .. })
        ));
        assert_eq!(e.ticks_seen(), before);
    }

    #[test]
    fn merge_single_run() {
        let vs: Vec<_> = (100..=160).map(|t| verdict(t, true)).collect();
        let events = merge_events(&vs, 2);
        assert_eq!(events.len(), 1);
        assert_eq!((events[0].start_tick, events[0].end_tick), (100, 160));
    }

    #[test]
    fn merge_gap_semantics() {
        let vs: Vec<_> = (100..=103)
            .map(|t| verdict(t, t == 100 || t == 103))
            .collect();
        let merged = merge_events(&vs, 2);
        assert_eq!(merged.len(), 1);
        assert_eq!((merged[0].start_tick, merged[0].end_tick), (100, 103));
        let split = merge_events(&vs, 1);
        assert_eq!(split.len(), 2);
        assert_eq!((split[1].start_tick, split[1].end_tick), (103, 103));
    }

    #[test]
    fn merge_empty() {
        assert!(merge_events(&[], 2).is_empty());
        assert!(merge_events(&[verdict(5, false)], 2).is_empty());
    }

    #[test]
    fn merge_keeps_peak_vote() {
        let mut vs = vec![verdict(10, true), verdict(11, true)];
        vs[0].vote_fraction = 0.5;
        let e = merge_events(&vs, 0);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].peak_vote_fraction, 1.0);
    }

    #[test]
    fn classify() {
        let e = AnomalyEvent {
            vmm_id: "vmm".into(),
            start_tick: 1,
            end_tick: 1,
            peak_vote_fraction: 1.0,
        };
        assert!(!classify_vmm(&[], 1));
        assert!(classify_vmm(std::slice::from_ref(&e), 1));
        assert!(!classify_vmm(std::slice::from_ref(&e), 2));
    }

    #[test]
    fn offline_rejects_invalid_group() {
        let g = VmmGroup::new(
            "vmm",
            vec![
                VmSeries::new("a", vec![1.0; 10]),
                VmSeries::new("b", vec![1.0; 9]),
            ],
        );
        assert!(matches!(
            detect_offline(&g, &DetectorConfig::default()),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn offline_verdict_count() {
        let g = VmmGroup::new("vmm", vec![VmSeries::new("a", vec![5.0; 500])]);
        let d = detect_offline(&g, &DetectorConfig::default()).unwrap();
        // ticks 60..=440
        assert_eq!(d.verdicts.len(), 381);
        assert_eq!(d.verdicts.first().unwrap().tick, 60);
        assert_eq!(d.verdicts.last().unwrap().tick, 440);
        assert!(d.events.is_empty());
    }

    #[test]
    fn short_series_yields_no_verdicts() {
        let g = VmmGroup::new("vmm", vec![VmSeries::new("a", vec![5.0; 119])]);
        let d = detect_offline(&g, &DetectorConfig::default()).unwrap();
        assert!(d.verdicts.is_empty());
    }
}
