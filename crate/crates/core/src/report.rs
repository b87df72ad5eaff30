//! Writing solve reports and experiment tables.
//!
//! The allocation CSV is in long format with header [`ALLOCATION_HEADER`]:
//! one row per entry of every variable family (`p a l s g d u1 u2 u3 u4 r`)
//! plus the derived `battery` level. `peer` is only set for `r` rows (the
//! receiving node). Values are written with the shortest representation
//! that parses back to the same `f64`.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::admm::SolveReport;
use crate::error::{Error, Result};
use crate::model::{self, PrimalState, Scenario};
use crate::tensor::Grid;

pub const ALLOCATION_HEADER: &str = "family,node,peer,slot,value";
pub const TRACE_HEADER: &str = "iter,psi";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidParams(format!("unknown format `{other}` (expected csv or json)"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AllocationRow {
    family: String,
    node: usize,
    peer: Option<usize>,
    slot: usize,
    value: f64,
}

fn grid_families(x: &PrimalState) -> [(&'static str, &Grid); 10] {
    [
        ("p", &x.p),
        ("a", &x.a),
        ("l", &x.l),
        ("s", &x.s),
        ("g", &x.g),
        ("d", &x.d),
        ("u1", &x.u1),
        ("u2", &x.u2),
        ("u3", &x.u3),
        ("u4", &x.u4),
    ]
}

/// Writes the allocation of `x` (and its battery levels under `sc`).
pub fn write_allocation_csv<W: Write>(sc: &Scenario, x: &PrimalState, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut put = |family: &str, node, peer, slot, value| {
        w.serialize(AllocationRow {
            family: family.to_owned(),
            node,
            peer,
            slot,
            value,
        })
    };
    for (name, grid) in grid_families(x) {
        for n in 0..grid.rows() {
            for k in 0..grid.cols() {
                put(name, n, None, k, grid[(n, k)])?;
            }
        }
    }
    for m in 0..x.nodes() {
        for n in (0..x.nodes()).filter(|&n| n != m) {
            for k in 0..x.slots() {
                put("r", m, Some(n), k, x.r[(m, n, k)])?;
            }
        }
    }
    let battery = model::battery_trajectory(sc, x);
    for n in 0..battery.rows() {
        for k in 0..battery.cols() {
            put("battery", n, None, k, battery[(n, k)])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Reads an allocation CSV back into a [`PrimalState`] with the given
/// dimensions; `battery` rows are ignored.
pub fn read_allocation_csv<R: io::Read>(input: R, n_users: usize, n_slots: usize) -> Result<PrimalState> {
    let mut x = PrimalState::zeros(n_users, n_slots);
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != ALLOCATION_HEADER {
        return Err(Error::Schema {
            path: "header".into(),
            message: format!("expected `{ALLOCATION_HEADER}`, found `{header}`"),
        });
    }
    for row in rdr.deserialize() {
        let row: AllocationRow = row?;
        if row.node >= n_users || row.slot >= n_slots || row.peer.is_some_and(|p| p >= n_users) {
            return Err(Error::Dimension {
                what: "allocation row",
                expected: format!("{n_users} nodes x {n_slots} slots"),
                found: format!("node {} peer {:?} slot {}", row.node, row.peer, row.slot),
            });
        }
        let (n, k) = (row.node, row.slot);
        let target = match row.family.as_str() {
            "p" => &mut x.p,
            "a" => &mut x.a,
            "l" => &mut x.l,
            "s" => &mut x.s,
            "g" => &mut x.g,
            "d" => &mut x.d,
            "u1" => &mut x.u1,
            "u2" => &mut x.u2,
            "u3" => &mut x.u3,
            "u4" => &mut x.u4,
            "battery" => continue,
            "r" => {
                let peer = row.peer.ok_or_else(|| Error::Schema {
                    path: "peer".into(),
                    message: "donation row without a receiving node".into(),
                })?;
                x.r[(n, peer, k)] = row.value;
                continue;
            }
            other => {
                return Err(Error::Schema {
                    path: "family".into(),
                    message: format!("unknown family `{other}`"),
                })
            }
        };
        target[(n, k)] = row.value;
    }
    Ok(x)
}

/// Writes `(iter, psi)` rows; nothing is written for an empty trace.
pub fn write_trace_csv<W: Write>(trace: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER.split(','))?;
    for (i, psi) in trace.iter().enumerate() {
        w.write_record([i.to_string(), psi.to_string()])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes `report` to `path`: the allocation CSV, or the whole report as
/// JSON.
pub fn emit_report(sc: &Scenario, report: &SolveReport, format: Format, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = create(path)?;
    match format {
        Format::Csv => write_allocation_csv(sc, &report.primal, file),
        Format::Json => {
            let mut file = io::BufWriter::new(file);
            serde_json::to_writer_pretty(&mut file, report)?;
            file.flush().map_err(|e| Error::io(path, e))
        }
    }
}

/// Writes the augmented-Lagrangian trace to `path`. Returns `false`, without
/// creating the file, when the trace is empty.
pub fn emit_trace(report: &SolveReport, path: impl AsRef<Path>) -> Result<bool> {
    if report.psi_trace.is_empty() {
        return Ok(false);
    }
    write_trace_csv(&report.psi_trace, create(path.as_ref())?)?;
    Ok(true)
}

pub fn load_report_json(path: impl AsRef<Path>) -> Result<SolveReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Serializes `rows` as CSV with a header taken from the field names.
pub fn write_rows_csv<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_parses() {
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
        assert_eq!("json".parse::<Format>().unwrap(), Format::Json);
        assert!("xml".parse::<Format>().is_err());
    }

    #[test]
    fn header_is_stable() {
        let sc = Scenario::uniform(2, 1);
        let mut buf = Vec::new();
        write_allocation_csv(&sc, &PrimalState::for_scenario(&sc), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some(ALLOCATION_HEADER));
        assert!(text.lines().any(|l| l.starts_with("r,0,1,0,")));
        assert!(!text.lines().any(|l| l.starts_with("r,0,0,")));
        assert!(text.lines().any(|l| l.starts_with("p,1,,0,")));
    }

    #[test]
    fn allocation_round_trip_is_exact() {
        let sc = Scenario::uniform(2, 2);
        let mut x = PrimalState::for_scenario(&sc);
        x.p[(1, 1)] = 0.1 + 0.2;
        x.a[(0, 0)] = 1.0 / 3.0;
        x.r[(1, 0, 1)] = std::f64::consts::PI;
        x.u4[(0, 1)] = 1e-300;
        let mut buf = Vec::new();
        write_allocation_csv(&sc, &x, &mut buf).unwrap();
        assert_eq!(read_allocation_csv(buf.as_slice(), 2, 2).unwrap(), x);
    }

    #[test]
    fn trace_rows() {
        let mut buf = Vec::new();
        write_trace_csv(&[1.5, -2.0], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iter,psi\n0,1.5\n1,-2\n");
    }
}
