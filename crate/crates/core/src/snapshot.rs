//! Plain-text field snapshots: a `key=value` header, then one CSV row per grid
//! point holding all components.
//!
//! ```text
//! # kasnerlab field snapshot
//! dim=38
//! active=1
//! points=16
//! scheme=spectral
//! valence=0,2
//! t=1.0000000000000000e0
//! 1.0000000000000000e0,0.0000000000000000e0,...
//! ```
//!
//! `active` lists 1-based coordinate directions; it is empty for homogeneous grids.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::diagnostics::fmt_real;
use crate::error::{Error, Result};
use crate::field::TensorField;
use crate::grid::{GridSpec, Scheme};

const MAGIC: &str = "# kasnerlab field snapshot";

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn write_snapshot_to(out: &mut impl Write, field: &TensorField, t: f64) -> std::io::Result<()> {
    let grid = field.grid();
    let active: Vec<usize> = grid.active().iter().map(|a| a + 1).collect();
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "dim={}", grid.dim())?;
    writeln!(out, "active={}", join(&active))?;
    writeln!(out, "points={}", join(grid.points()))?;
    writeln!(out, "scheme={}", grid.scheme())?;
    let (l, m) = field.valence();
    writeln!(out, "valence={l},{m}")?;
    writeln!(out, "t={}", fmt_real(t))?;
    for p in 0..field.npts() {
        let row: Vec<String> = field.at(p).iter().map(|&v| fmt_real(v)).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_snapshot(path: &Path, field: &TensorField, t: f64) -> Result<()> {
    let io = |e: std::io::Error| Error::Io { path: path.display().to_string(), message: e.to_string() };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    write_snapshot_to(&mut f, field, t).map_err(io)?;
    f.flush().map_err(io)
}

fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}"))).collect()
}

/// Read a snapshot back; returns the field and its time.
pub fn read_snapshot(path: &Path) -> Result<(TensorField, f64)> {
    let io = |e: std::io::Error| Error::Io { path: path.display().to_string(), message: e.to_string() };
    let bad = |m: String| Error::Io { path: path.display().to_string(), message: m };
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut lines = reader.lines();
    let mut next = || -> Result<String> {
        lines.next().ok_or_else(|| bad("unexpected end of file".into()))?.map_err(io)
    };
    if next()? != MAGIC {
        return Err(bad("missing snapshot header".into()));
    }
    let mut header = std::collections::HashMap::new();
    for key in ["dim", "active", "points", "scheme", "valence", "t"] {
        let line = next()?;
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed header line `{line}`")))?;
        if k != key {
            return Err(bad(format!("expected header key `{key}`, found `{k}`")));
        }
        header.insert(key, v.to_string());
    }
    let dim: usize = header["dim"].parse().map_err(|e| bad(format!("dim: {e}")))?;
    let active: Vec<usize> = parse_list(&header["active"]).map_err(bad)?;
    let points = parse_list(&header["points"]).map_err(bad)?;
    let scheme: Scheme = header["scheme"].parse().map_err(|e: Error| bad(e.to_string()))?;
    let val = parse_list(&header["valence"]).map_err(bad)?;
    if val.len() != 2 {
        return Err(bad("valence needs two entries".into()));
    }
    let t: f64 = header["t"].parse().map_err(|e| bad(format!("t: {e}")))?;
    let grid = if active.is_empty() {
        GridSpec::homogeneous(dim)
    } else {
        if active.contains(&0) {
            return Err(bad("active directions are 1-based".into()));
        }
        GridSpec::new(dim, active.iter().map(|a| a - 1).collect(), points, scheme)?
    };
    let mut data = Vec::new();
    for p in 0..grid.npts() {
        let line = next()?;
        for v in line.split(',') {
            data.push(v.trim().parse::<f64>().map_err(|e| bad(format!("row {p}: {e}")))?);
        }
    }
    let field = TensorField::from_data(&grid, (val[0], val[1]), data)?;
    Ok((field, t))
}
