use std::collections::BTreeSet;

use iad_core::{
    detect_many, detect_offline_with_gap, DetectorConfig, DetectorKind, VmSeries, VmmEngineState,
    VmmGroup, VmmVerdict,
};
use proptest::prelude::*;

/// Random VMM: each VM has its own level plus noise, and may shift level
/// part-way through so that votes actually happen.
fn group_strategy() -> impl Strategy<Value = VmmGroup> {
    (1usize..7, 20usize..160).prop_flat_map(|(d, n)| {
        let vm = (
            5.0f64..90.0,
            0.0f64..6.0,
            proptest::option::of((0usize..n, -30.0f64..30.0)),
            prop::collection::vec(-1.0f64..1.0, n),
        );
        prop::collection::vec(vm, d).prop_map(move |vms| {
            let series = vms
                .into_iter()
                .enumerate()
                .map(|(j, (level, noise, step, unit))| {
                    let values = unit
                        .iter()
                        .enumerate()
                        .map(|(t, u)| {
                            let shift = match step {
                                Some((at, by)) if t >= at => by,
                                _ => 0.0,
                            };
                            level + shift + noise * u
                        })
                        .collect();
                    VmSeries::new(format!("vm{j}"), values)
                })
                .collect();
            VmmGroup::new("vmm", series)
        })
    })
}

fn config_strategy() -> impl Strategy<Value = DetectorConfig> {
    (2usize..12, 0usize..15, 1.0f64..=100.0, any::<bool>()).prop_map(|(w, warmup, f, mean)| {
        DetectorConfig {
            window: w,
            warmup_ticks: Some(warmup),
            min_percent_vms_fault: f,
            detector_kind: if mean {
                DetectorKind::MeanBased
            } else {
                DetectorKind::ZScoreBased
            },
            ..Default::default()
        }
    })
}

fn stream(group: &VmmGroup, cfg: &DetectorConfig, ticks: usize) -> Vec<(usize, VmmVerdict)> {
    let mut engine = VmmEngineState::new(
        group.vmm_id.as_str(),
        group.series.iter().map(|s| s.vm_id.as_str()),
        cfg.clone(),
    )
    .unwrap();
    let mut out = Vec::new();
    for t in 0..ticks {
        let row: Vec<f64> = group.series.iter().map(|s| s.values[t]).collect();
        if let Some(v) = engine.step(&row).unwrap() {
            out.push((t + 1, v));
        }
    }
    out
}

fn anomalous_ticks(verdicts: &[VmmVerdict]) -> BTreeSet<usize> {
    verdicts
        .iter()
        .filter(|v| v.anomalous)
        .map(|v| v.tick)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn batch_equals_streaming(group in group_strategy(), cfg in config_strategy(), gap in 0usize..4) {
        let batch = detect_offline_with_gap(&group, &cfg, gap).unwrap();
        let streamed: Vec<VmmVerdict> = stream(&group, &cfg, group.num_ticks())
            .into_iter()
            .map(|(_, v)| v)
            .collect();
        prop_assert_eq!(&batch.verdicts, &streamed);
        prop_assert_eq!(batch.events, iad_core::merge_events(&streamed, gap));
    }

    #[test]
    fn verdict_emitted_exactly_at_t_plus_w(group in group_strategy(), cfg in config_strategy()) {
        let n = group.num_ticks();
        let full = stream(&group, &cfg, n);
        for (ingested, v) in &full {
            prop_assert_eq!(*ingested, v.tick + cfg.window);
        }
        // Truncating right after tick t + w gives the same verdict for t.
        for (ingested, v) in full.iter().step_by(7) {
            let truncated = stream(&group, &cfg, *ingested);
            let (last_ingested, last) = truncated.last().unwrap();
            prop_assert_eq!(last_ingested, ingested);
            prop_assert_eq!(last, v);
        }
        let expected = n.saturating_sub(cfg.window + cfg.warmup().max(cfg.min_history()) - 1);
        prop_assert_eq!(full.len(), expected);
    }

    #[test]
    fn vm_order_does_not_matter(group in group_strategy(), cfg in config_strategy(), rot in 0usize..7) {
        let mut permuted = group.clone();
        let d = permuted.series.len();
        permuted.series.rotate_left(rot % d);
        permuted.series.swap(0, d - 1);
        let a = detect_offline_with_gap(&group, &cfg, 2).unwrap();
        let b = detect_offline_with_gap(&permuted, &cfg, 2).unwrap();
        prop_assert_eq!(a.verdicts.len(), b.verdicts.len());
        for (va, vb) in a.verdicts.iter().zip(&b.verdicts) {
            prop_assert_eq!(va.tick, vb.tick);
            prop_assert_eq!(va.anomalous, vb.anomalous);
            prop_assert_eq!(va.changed_set(), vb.changed_set());
        }
        prop_assert_eq!(a.events, b.events);
    }

    #[test]
    fn lowering_threshold_never_drops_alarms(group in group_strategy(), cfg in config_strategy(), lower in 1.0f64..=100.0) {
        let lo = lower.min(cfg.min_percent_vms_fault);
        let high = detect_offline_with_gap(&group, &cfg, 2).unwrap();
        let low_cfg = DetectorConfig { min_percent_vms_fault: lo, ..cfg };
        let low = detect_offline_with_gap(&group, &low_cfg, 2).unwrap();
        prop_assert!(anomalous_ticks(&high.verdicts).is_subset(&anomalous_ticks(&low.verdicts)));
    }

    #[test]
    fn vmms_are_independent(groups in prop::collection::vec(group_strategy(), 1..5), cfg in config_strategy()) {
        let groups: Vec<VmmGroup> = groups
            .into_iter()
            .enumerate()
            .map(|(i, mut g)| {
                g.vmm_id = format!("vmm{i}");
                g
            })
            .collect();
        let serial = detect_many(&groups, &cfg, 2, 1).unwrap();
        let parallel = detect_many(&groups, &cfg, 2, 3).unwrap();
        prop_assert_eq!(&serial, &parallel);
        for (g, d) in groups.iter().zip(&serial) {
            prop_assert_eq!(&detect_offline_with_gap(g, &cfg, 2).unwrap(), d);
        }
    }
}
