//! VMM-level precision, recall and F1 against ground-truth labels.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::engine::AnomalyEvent;
use crate::error::{Error, Result};
use crate::model::{GroundTruth, TickInterval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    FalseNegative,
    TrueNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmmClassification {
    pub vmm_id: String,
    pub actual: bool,
    pub predicted: bool,
    pub outcome: Outcome,
}

/// Event-level score: an event is correct when it overlaps the labelled
/// fault interval, widened by `lead` ticks on the left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub lead: usize,
    pub total_events: usize,
    pub matched_events: usize,
    pub labelled_faults: usize,
    pub detected_faults: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_vmm: Vec<VmmClassification>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overlap: Option<OverlapReport>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn harmonic_f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Scores VMM-level predictions (positive = anomalous). Every labelled VMM
/// needs a prediction and every prediction a label.
pub fn f1_score(predicted: &BTreeMap<String, bool>, truth: &[GroundTruth]) -> Result<EvalReport> {
    let labelled: HashSet<&str> = truth.iter().map(|t| t.vmm_id.as_str()).collect();
    if let Some(extra) = predicted.keys().find(|k| !labelled.contains(k.as_str())) {
        return Err(Error::MissingLabel(extra.clone()));
    }
    let mut per_vmm = Vec::with_capacity(truth.len());
    let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
    for t in truth {
        let &p = predicted
            .get(&t.vmm_id)
            .ok_or_else(|| Error::MissingPrediction(t.vmm_id.clone()))?;
        let outcome = match (t.anomalous, p) {
            (true, true) => {
                tp += 1;
                Outcome::TruePositive
            }
            (false, true) => {
                fp += 1;
                Outcome::FalsePositive
            }
            (true, false) => {
                fneg += 1;
                Outcome::FalseNegative
            }
            (false, false) => {
                tn += 1;
                Outcome::TrueNegative
            }
        };
        per_vmm.push(VmmClassification {
            vmm_id: t.vmm_id.clone(),
            actual: t.anomalous,
            predicted: p,
            outcome,
        });
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    Ok(EvalReport {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        true_negatives: tn,
        precision,
        recall,
        f1: harmonic_f1(precision, recall),
        per_vmm,
        overlap: None,
    })
}

/// Event-level precision/recall. `lead` is usually the detector window: a
/// fault starting at tick `s` is first visible in the verdict for `s - w`.
pub fn overlap_score(
    events: &BTreeMap<String, Vec<AnomalyEvent>>,
    truth: &[GroundTruth],
    lead: usize,
) -> OverlapReport {
    let mut total_events = 0;
    let mut matched_events = 0;
    let mut labelled_faults = 0;
    let mut detected_faults = 0;
    let no_events = Vec::new();
    for t in truth {
        let evs = events.get(&t.vmm_id).unwrap_or(&no_events);
        total_events += evs.len();
        let Some(iv) = t.fault_interval.filter(|_| t.anomalous) else {
            continue;
        };
        labelled_faults += 1;
        let target = TickInterval::new(iv.start.saturating_sub(lead).max(1), iv.end);
        let hits = evs
            .iter()
            .filter(|e| target.overlaps(&TickInterval::new(e.start_tick, e.end_tick)))
            .count();
        matched_events += hits;
        if hits > 0 {
            detected_faults += 1;
        }
    }
    let precision = ratio(matched_events, total_events);
    let recall = ratio(detected_faults, labelled_faults);
    OverlapReport {
        lead,
        total_events,
        matched_events,
        labelled_faults,
        detected_faults,
        precision,
        recall,
        f1: harmonic_f1(precision, recall),
    }
}
