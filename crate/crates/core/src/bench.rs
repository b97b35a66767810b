//! Detection-time scaling over VM count and series length.
//!
//! Each grid point builds one VMM from a [`SyntheticSpec`] and stretches it
//! to the requested length by repeating the series with added Gaussian
//! noise. Only [`detect_offline`] is timed.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{extend_with_noise, generate_synthetic, SyntheticSpec};
use crate::engine::detect_offline;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::DetectorConfig;

pub const DEFAULT_REPETITIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub num_vms: usize,
    pub num_ticks: usize,
    /// Median over `samples`.
    pub seconds: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEnvironment {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    /// Threads used by the timed detection loop.
    pub parallelism: usize,
    pub repetitions: usize,
    pub crate_version: String,
}

impl BenchEnvironment {
    fn current(repetitions: usize) -> Self {
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            parallelism: 1,
            repetitions,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub detector: DetectorConfig,
    pub base_spec: SyntheticSpec,
    pub environment: BenchEnvironment,
    pub points: Vec<BenchPoint>,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Times detection on every `(vms, ticks)` combination, `repetitions` times
/// each, single-threaded.
pub fn bench_scaling(
    vm_counts: &[usize],
    tick_counts: &[usize],
    base_spec: &SyntheticSpec,
    cfg: &DetectorConfig,
    repetitions: usize,
) -> Result<BenchReport> {
    if vm_counts.is_empty() || tick_counts.is_empty() {
        return Err(Error::InvalidSpec {
            field: "grid",
            message: "VM and tick lists must be non-empty".into(),
        });
    }
    if repetitions == 0 {
        return Err(Error::InvalidSpec {
            field: "repetitions",
            message: "must be positive".into(),
        });
    }
    cfg.validate()?;
    let mut points = Vec::with_capacity(vm_counts.len() * tick_counts.len());
    for &num_vms in vm_counts {
        let spec = SyntheticSpec {
            num_vmms: 1,
            vms_per_vmm: num_vms,
            ..base_spec.clone()
        };
        let (mut groups, _) = generate_synthetic(&spec)?;
        let base = groups.pop().expect("one VMM");
        for &num_ticks in tick_counts {
            if num_ticks == 0 {
                return Err(Error::InvalidSpec {
                    field: "ticks",
                    message: "tick counts must be positive".into(),
                });
            }
            let group = extend_with_noise(&base, num_ticks, spec.baseline_std, spec.seed)?;
            let mut samples = Vec::with_capacity(repetitions);
            for _ in 0..repetitions {
                let start = Instant::now();
                let detection = detect_offline(&group, cfg)?;
                let elapsed = start.elapsed().as_secs_f64();
                std::hint::black_box(&detection);
                // Timer resolution floor; timings must be positive.
                samples.push(elapsed.max(1e-9));
            }
            let seconds = median(&mut samples.clone());
            log::info!("bench vms={num_vms} ticks={num_ticks} median={seconds:.6}s");
            points.push(BenchPoint {
                num_vms,
                num_ticks,
                seconds,
                samples,
            });
        }
    }
    Ok(BenchReport {
        detector: cfg.clone(),
        base_spec: base_spec.clone(),
        environment: BenchEnvironment::current(repetitions),
        points,
    })
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("num_vms,num_ticks,seconds\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.num_vms, p.num_ticks, p.seconds));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let body = self.to_csv();
        write_atomic(path, |w| {
            w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
        })
    }

    pub fn point(&self, num_vms: usize, num_ticks: usize) -> Option<&BenchPoint> {
        self.points
            .iter()
            .find(|p| p.num_vms == num_vms && p.num_ticks == num_ticks)
    }
}
