//! Synthetic VMM datasets, fault injection into existing traces, and random
//! grouping of trace pools into VMMs.
//!
//! Every random choice draws from its own ChaCha stream keyed by the run seed
//! and a label such as `(vmm_id, vm_id)`, so results do not depend on the
//! order in which VMMs or VMs are generated.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{GroundTruth, TickInterval, VmSeries, VmmGroup};

pub const MIN_UTILIZATION: f64 = 0.0;
pub const MAX_UTILIZATION: f64 = 100.0;

fn clamp_utilization(x: f64) -> f64 {
    x.clamp(MIN_UTILIZATION, MAX_UTILIZATION)
}

/// RNG for one labelled stream of a seeded run.
pub fn stream_rng(seed: u64, labels: &[&str]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_vmms: usize,
    pub vms_per_vmm: usize,
    pub percent_vms_with_fault: f64,
    pub percent_anomalous_vmms: f64,
    pub ticks: usize,
    /// Per-VM mean utilization is drawn uniformly from `[lo, hi]`.
    pub baseline_mean_range: (f64, f64),
    pub baseline_std: f64,
    /// Magnitude (or signed value, see `random_fault_sign`) of the mean
    /// shift added during the fault.
    pub fault_shift: f64,
    /// Pick the sign of `fault_shift` per VMM at random.
    pub random_fault_sign: bool,
    /// Defaults to `[0.4 * ticks, 0.6 * ticks]`.
    pub fault_interval: Option<TickInterval>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_vmms: 10,
            vms_per_vmm: 10,
            percent_vms_with_fault: 100.0,
            percent_anomalous_vmms: 50.0,
            ticks: 1000,
            baseline_mean_range: (20.0, 60.0),
            baseline_std: 2.0,
            fault_shift: 25.0,
            random_fault_sign: true,
            fault_interval: None,
            seed: 0,
        }
    }
}

/// Default fault window for a series of `ticks` samples.
pub fn default_fault_interval(ticks: usize) -> TickInterval {
    let start = ((ticks as f64 * 0.4).round() as usize).max(1);
    let end = ((ticks as f64 * 0.6).round() as usize).clamp(start, ticks.max(1));
    TickInterval::new(start, end)
}

fn check_percent(field: &'static str, v: f64) -> Result<()> {
    if (0.0..=100.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidSpec {
            field,
            message: format!("must be within [0, 100], got {v}"),
        })
    }
}

impl SyntheticSpec {
    pub fn resolved_fault_interval(&self) -> TickInterval {
        self.fault_interval
            .unwrap_or_else(|| default_fault_interval(self.ticks))
    }

    pub fn fault_plan(&self) -> FaultPlan {
        FaultPlan {
            percent_anomalous_vmms: self.percent_anomalous_vmms,
            percent_vms_with_fault: self.percent_vms_with_fault,
            fault_shift: self.fault_shift,
            random_fault_sign: self.random_fault_sign,
            fault_interval: Some(self.resolved_fault_interval()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let spec_err = |field, message: String| Err(Error::InvalidSpec { field, message });
        if self.num_vmms == 0 {
            return spec_err("num_vmms", "must be positive".into());
        }
        if self.vms_per_vmm == 0 {
            return spec_err("vms_per_vmm", "must be positive".into());
        }
        if self.ticks == 0 {
            return spec_err("ticks", "must be positive".into());
        }
        check_percent("percent_vms_with_fault", self.percent_vms_with_fault)?;
        check_percent("percent_anomalous_vmms", self.percent_anomalous_vmms)?;
        let (lo, hi) = self.baseline_mean_range;
        if !(lo.is_finite()
            && hi.is_finite()
            && lo <= hi
            && lo >= MIN_UTILIZATION
            && hi <= MAX_UTILIZATION)
        {
            return spec_err(
                "baseline_mean_range",
                format!("need 0 <= lo <= hi <= 100, got [{lo}, {hi}]"),
            );
        }
        if !(self.baseline_std.is_finite() && self.baseline_std > 0.0) {
            return spec_err(
                "baseline_std",
                format!("must be > 0, got {}", self.baseline_std),
            );
        }
        if !self.fault_shift.is_finite() {
            return spec_err("fault_shift", "must be finite".into());
        }
        let iv = self.resolved_fault_interval();
        if iv.check_within(self.ticks).is_err() {
            return spec_err(
                "fault_interval",
                format!(
                    "[{}, {}] must satisfy 1 <= start <= end <= {}",
                    iv.start, iv.end, self.ticks
                ),
            );
        }
        Ok(())
    }
}

/// How faults are injected into a set of VMM groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub percent_anomalous_vmms: f64,
    pub percent_vms_with_fault: f64,
    pub fault_shift: f64,
    pub random_fault_sign: bool,
    /// `None` uses [`default_fault_interval`] of each group's length.
    pub fault_interval: Option<TickInterval>,
}

pub fn vmm_id(index: usize) -> String {
    format!("vmm-{index:03}")
}

pub fn vm_id(index: usize) -> String {
    format!("vm-{index:03}")
}

fn baseline_series(spec: &SyntheticSpec, vmm: &str, vm: &str) -> VmSeries {
    let mut rng = stream_rng(spec.seed, &["baseline", vmm, vm]);
    let (lo, hi) = spec.baseline_mean_range;
    let mean = if lo < hi {
        rng.random_range(lo..=hi)
    } else {
        lo
    };
    let noise = Normal::new(mean, spec.baseline_std).expect("validated std");
    let values = (0..spec.ticks)
        .map(|_| clamp_utilization(noise.sample(&mut rng)))
        .collect();
    VmSeries::new(vm, values)
}

/// Generates the groups described by `spec` and labels them.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Vec<VmmGroup>, Vec<GroundTruth>)> {
    spec.validate()?;
    let mut groups: Vec<VmmGroup> = (0..spec.num_vmms)
        .into_par_iter()
        .map(|i| {
            let vmm = vmm_id(i);
            let series = (0..spec.vms_per_vmm)
                .map(|j| baseline_series(spec, &vmm, &vm_id(j)))
                .collect();
            VmmGroup::new(vmm, series)
        })
        .collect();
    let labels = inject_faults(&mut groups, &spec.fault_plan(), spec.seed)?;
    Ok((groups, labels))
}

fn share(percent: f64, total: usize) -> usize {
    ((percent / 100.0 * total as f64).round() as usize).min(total)
}

/// Picks `percent_anomalous_vmms` of the groups at random and shifts
/// `percent_vms_with_fault` of their VMs during the fault interval. Returns
/// one label per group, in group order.
pub fn inject_faults(
    groups: &mut [VmmGroup],
    plan: &FaultPlan,
    seed: u64,
) -> Result<Vec<GroundTruth>> {
    check_percent("percent_anomalous_vmms", plan.percent_anomalous_vmms)?;
    check_percent("percent_vms_with_fault", plan.percent_vms_with_fault)?;

    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut stream_rng(seed, &["anomalous-vmms"]));
    let mut chosen = vec![false; groups.len()];
    for &i in &order[..share(plan.percent_anomalous_vmms, groups.len())] {
        chosen[i] = true;
    }

    groups
        .iter_mut()
        .zip(chosen)
        .map(|(group, anomalous)| {
            let label = GroundTruth {
                vmm_id: group.vmm_id.clone(),
                anomalous: false,
                fault_interval: None,
            };
            if !anomalous {
                return Ok(label);
            }
            let interval = plan
                .fault_interval
                .unwrap_or_else(|| default_fault_interval(group.num_ticks()));
            let mut rng = stream_rng(seed, &["fault", &group.vmm_id]);
            let shift = if plan.random_fault_sign && rng.random_bool(0.5) {
                -plan.fault_shift
            } else {
                plan.fault_shift
            };
            let mut vms: Vec<usize> = (0..group.num_vms()).collect();
            vms.shuffle(&mut rng);
            let faulty = &vms[..share(plan.percent_vms_with_fault, vms.len())];
            for &j in faulty {
                group.series[j] = inject_anomaly(&group.series[j], interval, shift)?;
            }
            Ok(GroundTruth {
                anomalous: !faulty.is_empty(),
                fault_interval: (!faulty.is_empty()).then_some(interval),
                ..label
            })
        })
        .collect()
}

/// Adds `shift` to the values inside `interval` (1-based, inclusive), clamping
/// the shifted values to `[0, 100]`.
pub fn inject_anomaly(series: &VmSeries, interval: TickInterval, shift: f64) -> Result<VmSeries> {
    interval.check_within(series.len())?;
    let mut out = series.clone();
    if shift != 0.0 {
        for x in &mut out.values[interval.start - 1..interval.end] {
            *x = clamp_utilization(*x + shift);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthPolicy {
    /// Unequal pool lengths are an error.
    #[default]
    Strict,
    /// Cut every series to the shortest one in the pool.
    TruncateToShortest,
}

/// Shuffles a pool of VM traces into disjoint groups of `vms_per_vmm`;
/// leftover VMs are dropped.
pub fn group_traces(
    mut pool: Vec<VmSeries>,
    vms_per_vmm: usize,
    seed: u64,
    policy: LengthPolicy,
) -> Result<Vec<VmmGroup>> {
    if vms_per_vmm == 0 || pool.len() < vms_per_vmm {
        return Err(Error::PoolTooSmall {
            available: pool.len(),
            required: vms_per_vmm,
        });
    }
    let shortest = pool.iter().map(VmSeries::len).min().unwrap_or(0);
    match policy {
        LengthPolicy::Strict => {
            let expected = pool[0].len();
            if let Some(bad) = pool.iter().find(|s| s.len() != expected) {
                return Err(Error::LengthMismatch {
                    expected,
                    vm_id: bad.vm_id.clone(),
                    actual: bad.len(),
                });
            }
        }
        LengthPolicy::TruncateToShortest => {
            for s in &mut pool {
                s.values.truncate(shortest);
            }
        }
    }
    if let Some(empty) = pool.iter().find(|s| s.is_empty()) {
        return Err(Error::EmptySeries {
            vm_id: empty.vm_id.clone(),
        });
    }
    pool.shuffle(&mut stream_rng(seed, &["grouping"]));
    let num_groups = pool.len() / vms_per_vmm;
    pool.truncate(num_groups * vms_per_vmm);
    let mut groups = Vec::with_capacity(num_groups);
    let mut it = pool.into_iter();
    for i in 0..num_groups {
        groups.push(VmmGroup::new(
            vmm_id(i),
            it.by_ref().take(vms_per_vmm).collect(),
        ));
    }
    Ok(groups)
}

/// Lengthens every series to `ticks` by repeating it, adding Gaussian noise
/// with `noise_std` to each repeated copy (the first copy is kept as is).
pub fn extend_with_noise(
    group: &VmmGroup,
    ticks: usize,
    noise_std: f64,
    seed: u64,
) -> Result<VmmGroup> {
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidSpec {
        field: "noise_std",
        message: e.to_string(),
    })?;
    let series = group
        .series
        .iter()
        .map(|s| {
            if s.is_empty() {
                return Err(Error::EmptySeries {
                    vm_id: s.vm_id.clone(),
                });
            }
            let mut rng = stream_rng(seed, &["extend", &group.vmm_id, &s.vm_id]);
            let mut values = Vec::with_capacity(ticks);
            values.extend(s.values.iter().take(ticks));
            while values.len() < ticks {
                let need = ticks - values.len();
                values.extend(
                    s.values
                        .iter()
                        .take(need)
                        .map(|x| clamp_utilization(x + noise.sample(&mut rng))),
                );
            }
            Ok(VmSeries::new(s.vm_id.clone(), values))
        })
        .collect::<Result<_>>()?;
    Ok(VmmGroup::new(group.vmm_id.clone(), series))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_reference_synthetic_dataset() {
        let (groups, labels) = generate_synthetic(&SyntheticSpec::default()).unwrap();
        assert_eq!(groups.len(), 10);
        assert!(groups
            .iter()
            .all(|g| g.num_vms() == 10 && g.num_ticks() == 1000));
        assert_eq!(labels.iter().filter(|l| l.anomalous).count(), 5);
        for l in labels.iter().filter(|l| l.anomalous) {
            assert_eq!(l.fault_interval, Some(TickInterval::new(400, 600)));
        }
    }

    #[test]
    fn no_anomalous_vmms() {
        let spec = SyntheticSpec {
            percent_anomalous_vmms: 0.0,
            ..Default::default()
        };
        let (_, labels) = generate_synthetic(&spec).unwrap();
        assert!(labels
            .iter()
            .all(|l| !l.anomalous && l.fault_interval.is_none()));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec {
            seed: 7,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn vm_streams_independent_of_vmm_count() {
        let small = SyntheticSpec {
            num_vmms: 2,
            percent_anomalous_vmms: 0.0,
            ..Default::default()
        };
        let large = SyntheticSpec {
            num_vmms: 6,
            ..small.clone()
        };
        let (a, _) = generate_synthetic(&small).unwrap();
        let (b, _) = generate_synthetic(&large).unwrap();
        assert_eq!(a[..], b[..2]);
    }

    #[test]
    fn values_clamped() {
        let spec = SyntheticSpec {
            baseline_mean_range: (0.0, 100.0),
            baseline_std: 30.0,
            fault_shift: 80.0,
            ..Default::default()
        };
        let (groups, _) = generate_synthetic(&spec).unwrap();
        for g in &groups {
            for s in &g.series {
                assert!(s.values.iter().all(|x| (0.0..=100.0).contains(x)));
            }
        }
    }

    #[test]
    fn labels_match_injection() {
        let spec = SyntheticSpec {
            seed: 3,
            ..Default::default()
        };
        let (groups, labels) = generate_synthetic(&spec).unwrap();
        let clean = generate_synthetic(&SyntheticSpec {
            percent_anomalous_vmms: 0.0,
            ..spec
        })
        .unwrap()
        .0;
        for ((g, c), l) in groups.iter().zip(&clean).zip(&labels) {
            assert_eq!(g != c, l.anomalous, "{}", g.vmm_id);
        }
    }

    #[test]
    fn partial_fault_share() {
        let spec = SyntheticSpec {
            percent_vms_with_fault: 30.0,
            percent_anomalous_vmms: 100.0,
            ..Default::default()
        };
        let (groups, _) = generate_synthetic(&spec).unwrap();
        let clean = generate_synthetic(&SyntheticSpec {
            percent_anomalous_vmms: 0.0,
            ..spec
        })
        .unwrap()
        .0;
        for (g, c) in groups.iter().zip(&clean) {
            let shifted = g
                .series
                .iter()
                .zip(&c.series)
                .filter(|(a, b)| a != b)
                .count();
            assert_eq!(shifted, 3);
        }
    }

    #[test]
    fn invalid_spec_names_field() {
        let bad = SyntheticSpec {
            baseline_mean_range: (50.0, 120.0),
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic(&bad),
            Err(Error::InvalidSpec {
                field: "baseline_mean_range",
                ..
            })
        ));
        let bad = SyntheticSpec {
            fault_interval: Some(TickInterval::new(900, 1200)),
            ..Default::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(Error::InvalidSpec {
                field: "fault_interval",
                ..
            })
        ));
        let bad = SyntheticSpec {
            percent_anomalous_vmms: 101.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn inject_zero_shift_is_identity() {
        let s = VmSeries::new("vm", (0..50).map(f64::from).collect());
        assert_eq!(
            inject_anomaly(&s, TickInterval::new(10, 20), 0.0).unwrap(),
            s
        );
    }

    #[test]
    fn inject_clamps() {
        let s = VmSeries::new("vm", vec![95.0; 10]);
        let out = inject_anomaly(&s, TickInterval::new(1, 10), 30.0).unwrap();
        assert!(out.values.iter().all(|&x| x == 100.0));
    }

    #[test]
    fn inject_negative_shift_inside_interval_only() {
        let s = VmSeries::new("vm", vec![50.0; 1000]);
        let out = inject_anomaly(&s, TickInterval::new(400, 600), -20.0).unwrap();
        for (i, &x) in out.values.iter().enumerate() {
            let tick = i + 1;
            let expected = if (400..=600).contains(&tick) {
                30.0
            } else {
                50.0
            };
            assert_eq!(x, expected, "tick {tick}");
        }
    }

    #[test]
    fn inject_out_of_range() {
        let s = VmSeries::new("vm", vec![50.0; 10]);
        assert!(matches!(
            inject_anomaly(&s, TickInterval::new(5, 11), 1.0),
            Err(Error::IntervalOutOfRange { .. })
        ));
    }

    fn pool(n: usize, len: usize) -> Vec<VmSeries> {
        (0..n)
            .map(|i| VmSeries::new(format!("trace-{i}"), vec![i as f64; len]))
            .collect()
    }

    #[test]
    fn grouping_drops_leftovers() {
        let groups = group_traces(pool(26, 20), 10, 1, LengthPolicy::Strict).unwrap();
        assert_eq!(groups.len(), 2);
        assert!(groups.iter().all(|g| g.num_vms() == 10));
        let mut ids: Vec<_> = groups
            .iter()
            .flat_map(|g| g.series.iter().map(|s| s.vm_id.clone()))
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 20);
    }

    #[test]
    fn grouping_singletons() {
        let groups = group_traces(pool(5, 3), 1, 1, LengthPolicy::Strict).unwrap();
        assert_eq!(groups.len(), 5);
        assert!(groups.iter().all(|g| g.num_vms() == 1));
    }

    #[test]
    fn grouping_deterministic() {
        let a = group_traces(pool(30, 5), 4, 11, LengthPolicy::Strict).unwrap();
        let b = group_traces(pool(30, 5), 4, 11, LengthPolicy::Strict).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grouping_errors_and_truncation() {
        assert!(matches!(
            group_traces(pool(3, 5), 4, 0, LengthPolicy::Strict),
            Err(Error::PoolTooSmall {
                available: 3,
                required: 4
            })
        ));
        let mut p = pool(4, 10);
        p[2].values.truncate(7);
        assert!(matches!(
            group_traces(p.clone(), 2, 0, LengthPolicy::Strict),
            Err(Error::LengthMismatch { .. })
        ));
        let groups = group_traces(p, 2, 0, LengthPolicy::TruncateToShortest).unwrap();
        assert!(groups.iter().all(|g| g.num_ticks() == 7));
    }

    #[test]
    fn trace_groups_take_injected_faults() {
        let mut groups = group_traces(pool(40, 100), 10, 5, LengthPolicy::Strict).unwrap();
        let plan = FaultPlan {
            percent_anomalous_vmms: 50.0,
            percent_vms_with_fault: 100.0,
            fault_shift: 10.0,
            random_fault_sign: false,
            fault_interval: None,
        };
        let labels = inject_faults(&mut groups, &plan, 5).unwrap();
        assert_eq!(labels.iter().filter(|l| l.anomalous).count(), 2);
        for (g, l) in groups.iter().zip(&labels) {
            if l.anomalous {
                assert_eq!(l.fault_interval, Some(TickInterval::new(40, 60)));
                let s = &g.series[0];
                let base: f64 = s.values[0];
                assert_eq!(s.values[49], base + 10.0);
            }
        }
    }

    #[test]
    fn extend_repeats_with_noise() {
        let g = VmmGroup::new("vmm", vec![VmSeries::new("vm", vec![50.0; 100])]);
        let long = extend_with_noise(&g, 350, 1.0, 9).unwrap();
        let v = &long.series[0].values;
        assert_eq!(v.len(), 350);
        assert!(v[..100].iter().all(|&x| x == 50.0));
        assert!(v[100..].iter().any(|&x| x != 50.0));
        let mean = v[100..].iter().sum::<f64>() / 250.0;
        assert!((mean - 50.0).abs() < 0.5);
        assert_eq!(long, extend_with_noise(&g, 350, 1.0, 9).unwrap());
    }
}
