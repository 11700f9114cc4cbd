//! Trace interchange (a fixed 7-column CSV modelled on a profiler's GPU
//! kernel summary) and the black-box projection an attacker works from.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perfsim::{KernelRecord, Trace};

pub const CSV_HEADER: &str =
    "index,kernel_name,duration_ns,l2_read_bytes,l2_write_bytes,input_bytes,output_bytes";

pub fn export_trace_csv(t: &Trace) -> Vec<u8> {
    let mut out = String::with_capacity(64 * (t.records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &t.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.index,
            r.kernel_name,
            r.duration_ns,
            r.l2_read_bytes,
            r.l2_write_bytes,
            r.input_bytes,
            r.output_bytes
        )
        .expect("writing to a String");
    }
    out.into_bytes()
}

/// Parses the CSV produced by [`export_trace_csv`]. The format carries no
/// trace metadata, so model, device, sigma and seed come back blank.
pub fn parse_trace_csv(bytes: &[u8]) -> Result<Trace> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Trace {
        line: 1,
        msg: format!("not UTF-8: {e}"),
    })?;
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        Some((n, h)) => {
            return Err(Error::Trace {
                line: n,
                msg: format!("unexpected header `{h}`"),
            })
        }
        None => unreachable!("split yields at least one item"),
    }

    let mut records = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(Error::Trace {
                line: n,
                msg: format!("expected 7 columns, found {}", cols.len()),
            });
        }
        let int = |i: usize, name: &str| -> Result<u64> {
            cols[i].parse::<u64>().map_err(|_| Error::Trace {
                line: n,
                msg: format!("{name} `{}` is not a non-negative integer", cols[i]),
            })
        };
        let index = int(0, "index")?;
        if index != records.len() as u64 {
            return Err(Error::Trace {
                line: n,
                msg: format!(
                    "index {index} breaks contiguity, expected {}",
                    records.len()
                ),
            });
        }
        records.push(KernelRecord {
            index,
            kernel_name: cols[1].to_string(),
            duration_ns: int(2, "duration_ns")?,
            l2_read_bytes: int(3, "l2_read_bytes")?,
            l2_write_bytes: int(4, "l2_write_bytes")?,
            input_bytes: int(5, "input_bytes")?,
            output_bytes: int(6, "output_bytes")?,
        });
    }
    Ok(Trace::from_records(records))
}

/// Metrics of one kernel launch as seen by the attacker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub index: u64,
    pub duration_ns: u64,
    pub l2_read_bytes: u64,
    pub l2_write_bytes: u64,
    pub input_bytes: u64,
    pub output_bytes: u64,
}

/// Ordered kernel metrics with every identity stripped. There is no field in
/// which an operator label or kernel name could be carried.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackerView {
    pub device: String,
    pub records: Vec<ViewRecord>,
}

impl AttackerView {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn attacker_view(t: &Trace) -> AttackerView {
    AttackerView {
        device: t.device.clone(),
        records: t
            .records
            .iter()
            .map(|r| ViewRecord {
                index: r.index,
                duration_ns: r.duration_ns,
                l2_read_bytes: r.l2_read_bytes,
                l2_write_bytes: r.l2_write_bytes,
                input_bytes: r.input_bytes,
                output_bytes: r.output_bytes,
            })
            .collect(),
    }
}
