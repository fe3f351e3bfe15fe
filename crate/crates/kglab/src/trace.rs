//! Trace and checkpoint files.
//!
//! Traces are CSV with one header row naming every TraceRecord field in fixed
//! order; floats carry 17 significant digits so a written value reads back
//! bit-exactly. Comment lines start with `#`; a blow-up leaves a
//! `# blowup_t = ...` footer. Checkpoints store `(x, phi1, phi2)` samples with
//! the grid geometry in header comments.

use crate::diagnostics::TraceRecord;
use crate::dynamics::FieldState;
use crate::grid::{Grid1D, GridFn, Parity};
use crate::{Error, Result};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

/// Fixed column order of a trace CSV.
pub const TRACE_COLUMNS: [&str; 32] = [
    "t",
    "a1",
    "a2",
    "z1",
    "z2",
    "bplus",
    "bminus",
    "alpha",
    "beta",
    "norm_rho_u1",
    "norm_sigma_u1",
    "norm_sigma_dxu1",
    "norm_sigma_u2",
    "norm_rho_seps_u1",
    "norm_rho_dx_seps_u1",
    "func_i",
    "func_h",
    "func_j",
    "func_z",
    "func_b",
    "func_k",
    "monitor",
    "energy",
    "n0",
    "n2",
    "i_rhs",
    "jz_rhs",
    "k_rhs",
    "local_e_2",
    "local_e_5",
    "local_e_10",
    "reaim",
];

fn fmt(v: f64) -> String {
    // 17 significant digits: exact f64 round trip.
    format!("{v:.16e}")
}

fn record_row(r: &TraceRecord) -> String {
    let fields = [
        r.t,
        r.a1,
        r.a2,
        r.z1,
        r.z2,
        r.bplus,
        r.bminus,
        r.alpha,
        r.beta,
        r.norm_rho_u1,
        r.norm_sigma_u1,
        r.norm_sigma_dxu1,
        r.norm_sigma_u2,
        r.norm_rho_seps_u1,
        r.norm_rho_dx_seps_u1,
        r.func_i,
        r.func_h,
        r.func_j,
        r.func_z,
        r.func_b,
        r.func_k,
        r.monitor,
        r.energy,
        r.n0,
        r.n2,
        r.i_rhs,
        r.jz_rhs,
        r.k_rhs,
        r.local_e[0],
        r.local_e[1],
        r.local_e[2],
    ];
    let mut row: Vec<String> = fields.iter().map(|&v| fmt(v)).collect();
    row.push(if r.reaim { "1".into() } else { "0".into() });
    row.join(",")
}

/// Write a trace CSV; `footer` lines are appended as `# key = value` comments.
pub fn write_trace(
    path: &Path,
    records: &[TraceRecord],
    footer: &[(String, String)],
) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", TRACE_COLUMNS.join(","))?;
    for r in records {
        writeln!(w, "{}", record_row(r))?;
    }
    for (k, v) in footer {
        writeln!(w, "# {k} = {v}")?;
    }
    Ok(())
}

/// Read a trace CSV, verifying the schema. Returns the records and any footer
/// metadata.
pub fn read_trace(path: &Path) -> Result<(Vec<TraceRecord>, Vec<(String, String)>)> {
    let f = std::fs::File::open(path)?;
    let mut lines = BufReader::new(f).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("trace file is empty".into()))??;
    if header.trim() != TRACE_COLUMNS.join(",") {
        return Err(Error::Config("trace schema mismatch in header row".into()));
    }
    let mut records = Vec::new();
    let mut footer = Vec::new();
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                footer.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != TRACE_COLUMNS.len() {
            return Err(Error::Config(format!(
                "trace row has {} cells, expected {}",
                cells.len(),
                TRACE_COLUMNS.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            cells[i]
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad float in trace column {i}: {e}")))
        };
        records.push(TraceRecord {
            t: num(0)?,
            a1: num(1)?,
            a2: num(2)?,
            z1: num(3)?,
            z2: num(4)?,
            bplus: num(5)?,
            bminus: num(6)?,
            alpha: num(7)?,
            beta: num(8)?,
            norm_rho_u1: num(9)?,
            norm_sigma_u1: num(10)?,
            norm_sigma_dxu1: num(11)?,
            norm_sigma_u2: num(12)?,
            norm_rho_seps_u1: num(13)?,
            norm_rho_dx_seps_u1: num(14)?,
            func_i: num(15)?,
            func_h: num(16)?,
            func_j: num(17)?,
            func_z: num(18)?,
            func_b: num(19)?,
            func_k: num(20)?,
            monitor: num(21)?,
            energy: num(22)?,
            n0: num(23)?,
            n2: num(24)?,
            i_rhs: num(25)?,
            jz_rhs: num(26)?,
            k_rhs: num(27)?,
            local_e: [num(28)?, num(29)?, num(30)?],
            reaim: cells[31].trim() == "1",
        });
    }
    if records.is_empty() {
        return Err(Error::Config("trace contains no data rows".into()));
    }
    Ok((records, footer))
}

/// Write a field checkpoint: grid geometry in header comments, then
/// `x,phi1,phi2` rows at 17 significant digits.
pub fn write_checkpoint(path: &Path, state: &FieldState) -> Result<()> {
    let grid = state.grid();
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# kglab checkpoint v1")?;
    writeln!(w, "# t = {}", fmt(state.time))?;
    writeln!(w, "# half_width = {}", fmt(grid.half_width()))?;
    writeln!(w, "# n_points = {}", grid.len())?;
    writeln!(w, "# sponge_width = {}", fmt(grid.sponge_width()))?;
    writeln!(w, "x,phi1,phi2")?;
    for (j, &x) in grid.nodes().iter().enumerate() {
        writeln!(
            w,
            "{},{},{}",
            fmt(x),
            fmt(state.phi1.values()[j]),
            fmt(state.phi2.values()[j])
        )?;
    }
    Ok(())
}

/// Read a checkpoint back; rebuilds the grid from the header metadata. The
/// parity tag is set to even only when the samples actually are mirror
/// symmetric at the `1e-12` level.
pub fn read_checkpoint(path: &Path) -> Result<FieldState> {
    let f = std::fs::File::open(path)?;
    let mut meta = std::collections::HashMap::new();
    let mut phi1 = Vec::new();
    let mut phi2 = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line == "x,phi1,phi2" {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 {
            return Err(Error::Config("checkpoint row must be x,phi1,phi2".into()));
        }
        phi1.push(
            cells[1].parse::<f64>().map_err(|e| Error::Config(format!("bad phi1: {e}")))?,
        );
        phi2.push(
            cells[2].parse::<f64>().map_err(|e| Error::Config(format!("bad phi2: {e}")))?,
        );
    }
    let get = |k: &str| -> Result<f64> {
        meta.get(k)
            .ok_or_else(|| Error::Config(format!("checkpoint missing '{k}'")))?
            .parse::<f64>()
            .map_err(|e| Error::Config(format!("bad checkpoint '{k}': {e}")))
    };
    let n = get("n_points")? as usize;
    if phi1.len() != n {
        return Err(Error::Config(format!(
            "checkpoint has {} rows but declares n_points = {n}",
            phi1.len()
        )));
    }
    let grid = Grid1D::new(get("half_width")?, n, get("sponge_width")?)?;
    let tag = |v: Vec<f64>| -> Result<GridFn> {
        let f = GridFn::from_values(Arc::clone(&grid), v, Parity::Even)?;
        if f.asymmetry() <= 1e-12 * f.max_abs().max(1e-300) {
            Ok(f)
        } else {
            Ok(f.with_parity(Parity::None))
        }
    };
    FieldState::new(tag(phi1)?, tag(phi2)?, get("t")?)
}
