//! Indirect detection of anomalous hypervisors (VMMs) from the utilization
//! series of the VMs they host.
//!
//! Each VM stream runs an online change-point detector ([`detect`]); a VMM is
//! flagged at tick `t` when enough of its VMs change at `t` ([`engine`]).
//! [`datagen`], [`io`], [`eval`] and [`bench`] provide datasets, file
//! formats, F1 scoring and timing.

pub mod bench;
pub mod datagen;
pub mod detect;
pub mod engine;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod report;
pub mod stats;

pub use detect::{mean_detector, zscore_detector, ChangePointVerdict, VmDetectorState};
pub use engine::{
    classify_vmm, detect_many, detect_offline, detect_offline_with_gap, merge_events, AnomalyEvent,
    Detection, VmmEngineState,
};
pub use error::{Error, Result};
pub use model::{
    validate_group, DetectorConfig, DetectorKind, GroundTruth, TickInterval, VmSeries, VmmGroup,
    VmmVerdict,
};
pub use stats::{windowed_mean, RunningStats};
