//! Long-format CSV for traces and labels, plus atomic file output.
//!
//! Traces: header `tick,vmm_id,vm_id,value`, one row per sample, ticks
//! 1-based. Labels: header `vmm_id,anomalous,start_tick,end_tick`, the last
//! two columns empty for VMMs without a fault interval. Paths ending in `.gz`
//! are transparently (de)compressed.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::model::{GroundTruth, TickInterval, VmSeries, VmmGroup};

pub const TRACES_HEADER: &str = "tick,vmm_id,vm_id,value";
pub const LABELS_HEADER: &str = "vmm_id,anomalous,start_tick,end_tick";

fn is_gzip(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

pub fn open_reader(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    Ok(if is_gzip(path) {
        Box::new(MultiGzDecoder::new(reader))
    } else {
        Box::new(reader)
    })
}

/// Writes `path` through a temporary file in the same directory and renames
/// it into place, so a failed write never leaves a partial file behind.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut buf = BufWriter::new(tmp.as_file());
        if is_gzip(path) {
            let mut gz = GzEncoder::new(&mut buf, Compression::default());
            write(&mut gz)?;
            gz.finish().map_err(|e| Error::io(path, e))?;
        } else {
            write(&mut buf)?;
        }
        buf.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open_reader(path)?)?)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::MalformedRow {
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn check_header(
    reader: &mut csv::Reader<Box<dyn Read>>,
    path: &Path,
    expected: &'static str,
) -> Result<()> {
    let header = reader.headers().map_err(|e| csv_error(path, e))?;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != expected.split(',').collect::<Vec<_>>() {
        return Err(Error::MissingHeader { expected });
    }
    Ok(())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<Box<dyn Read>>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open_reader(path)?))
}

/// Parses traces in long format. VMMs and VMs keep the order of their first
/// appearance; rows may come in any tick order.
pub fn read_traces_csv(path: &Path) -> Result<Vec<VmmGroup>> {
    let mut reader = csv_reader(path)?;
    check_header(&mut reader, path, TRACES_HEADER)?;

    struct Vm {
        id: String,
        values: Vec<Option<f64>>,
    }
    let mut vmms: Vec<(String, Vec<Vm>)> = Vec::new();
    let mut index: HashMap<(String, String), (usize, usize)> = HashMap::new();
    let mut vmm_index: HashMap<String, usize> = HashMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |message: String| Error::MalformedRow { line, message };
        if record.len() != 4 {
            return Err(malformed(format!(
                "expected 4 fields, got {}",
                record.len()
            )));
        }
        let tick: usize = record[0]
            .parse()
            .map_err(|_| malformed(format!("invalid tick `{}`", &record[0])))?;
        if tick == 0 {
            return Err(malformed("ticks start at 1".into()));
        }
        let (vmm, vm) = (&record[1], &record[2]);
        if vmm.is_empty() || vm.is_empty() {
            return Err(malformed("empty vmm_id or vm_id".into()));
        }
        let value: f64 = record[3]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| malformed(format!("invalid value `{}`", &record[3])))?;

        let key = (vmm.to_string(), vm.to_string());
        let (gi, vi) = match index.get(&key) {
            Some(&pos) => pos,
            None => {
                let gi = *vmm_index.entry(key.0.clone()).or_insert_with(|| {
                    vmms.push((key.0.clone(), Vec::new()));
                    vmms.len() - 1
                });
                vmms[gi].1.push(Vm {
                    id: key.1.clone(),
                    values: Vec::new(),
                });
                let pos = (gi, vmms[gi].1.len() - 1);
                index.insert(key, pos);
                pos
            }
        };
        let slots = &mut vmms[gi].1[vi].values;
        if slots.len() < tick {
            slots.resize(tick, None);
        }
        if slots[tick - 1].replace(value).is_some() {
            return Err(malformed(format!("duplicate tick {tick} for `{vmm}/{vm}`")));
        }
    }

    vmms.into_iter()
        .map(|(vmm_id, vms)| {
            let series = vms
                .into_iter()
                .map(|vm| {
                    let values = vm
                        .values
                        .iter()
                        .enumerate()
                        .map(|(i, v)| {
                            v.ok_or_else(|| Error::NonRectangular {
                                vmm_id: vmm_id.clone(),
                                vm_id: vm.id.clone(),
                                missing_tick: i + 1,
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    Ok(VmSeries::new(vm.id, values))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(VmmGroup::new(vmm_id, series))
        })
        .collect()
}

pub fn write_traces_csv(groups: &[VmmGroup], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TRACES_HEADER.split(','))
            .map_err(|e| csv_error(path, e))?;
        let mut tick_buf = String::new();
        let mut value_buf = String::new();
        for g in groups {
            for t in 0..g.num_ticks() {
                for s in &g.series {
                    let Some(v) = s.values.get(t) else { continue };
                    tick_buf.clear();
                    value_buf.clear();
                    use std::fmt::Write as _;
                    let _ = write!(tick_buf, "{}", t + 1);
                    let _ = write!(value_buf, "{v}");
                    out.write_record([&tick_buf, &g.vmm_id, &s.vm_id, &value_buf])
                        .map_err(|e| csv_error(path, e))?;
                }
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    })
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<GroundTruth>> {
    let mut reader = csv_reader(path)?;
    check_header(&mut reader, path, LABELS_HEADER)?;
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |message: String| Error::MalformedRow { line, message };
        if record.len() != 4 {
            return Err(malformed(format!(
                "expected 4 fields, got {}",
                record.len()
            )));
        }
        let anomalous = match record[1].to_ascii_lowercase().as_str() {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(malformed(format!("invalid anomalous flag `{other}`"))),
        };
        let tick = |s: &str| -> Result<Option<usize>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|_| malformed(format!("invalid tick `{s}`")))
        };
        let fault_interval = match (tick(&record[2])?, tick(&record[3])?) {
            (None, None) => None,
            (Some(start), Some(end)) if start >= 1 && start <= end => {
                Some(TickInterval::new(start, end))
            }
            _ => return Err(malformed("invalid fault interval".into())),
        };
        labels.push(GroundTruth {
            vmm_id: record[0].to_string(),
            anomalous,
            fault_interval,
        });
    }
    Ok(labels)
}

pub fn write_labels_csv(labels: &[GroundTruth], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(LABELS_HEADER.split(','))
            .map_err(|e| csv_error(path, e))?;
        for l in labels {
            let (start, end) = l
                .fault_interval
                .map_or((String::new(), String::new()), |iv| {
                    (iv.start.to_string(), iv.end.to_string())
                });
            out.write_record([
                l.vmm_id.as_str(),
                if l.anomalous { "true" } else { "false" },
                &start,
                &end,
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    })
}
