//! Field snapshots: CSV (`x[,y],value`) and raw little-endian f64 with a short text header.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

pub fn snapshot_csv(grid: &Grid, field: &[f64]) -> String {
    let mut s = String::with_capacity(field.len() * 24);
    if grid.ny == 1 {
        s.push_str("x,value\n");
    } else {
        s.push_str("x,y,value\n");
    }
    for (site, v) in field.iter().enumerate() {
        let p = grid.position(site);
        if grid.ny == 1 {
            s.push_str(&format!("{},{}\n", p[0], v));
        } else {
            s.push_str(&format!("{},{},{}\n", p[0], p[1], v));
        }
    }
    s
}

pub fn write_snapshot_csv(path: &Path, grid: &Grid, field: &[f64]) -> Result<()> {
    fs::write(path, snapshot_csv(grid, field))?;
    Ok(())
}

/// Header line `nx ny dx time\n`, then `nx * ny` little-endian f64 values in row-major order.
pub fn write_snapshot_raw(path: &Path, grid: &Grid, field: &[f64], time: f64) -> Result<()> {
    if field.len() != grid.len() {
        return Err(Error::Dimension(format!("field has {} values, grid {}", field.len(), grid.len())));
    }
    let mut out = fs::File::create(path)?;
    writeln!(out, "gpmrt-raw nx={} ny={} dx={} time={}", grid.nx, grid.ny, grid.dx, time)?;
    let mut buf = Vec::with_capacity(field.len() * 8);
    for v in field {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSnapshot {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub time: f64,
    pub data: Vec<f64>,
}

pub fn read_snapshot_raw(path: &Path) -> Result<RawSnapshot> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let field = |key: &str| -> Result<&str> {
        header
            .split_whitespace()
            .find_map(|t| t.strip_prefix(key).and_then(|t| t.strip_prefix('=')))
            .ok_or_else(|| Error::Parse(format!("raw snapshot header lacks {key}")))
    };
    let num = |key: &str| -> Result<f64> {
        field(key)?.parse::<f64>().map_err(|e| Error::Parse(format!("{key}: {e}")))
    };
    if !header.starts_with("gpmrt-raw") {
        return Err(Error::Parse("not a raw snapshot".into()));
    }
    let nx = num("nx")? as usize;
    let ny = num("ny")? as usize;
    let (dx, time) = (num("dx")?, num("time")?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != nx * ny * 8 {
        return Err(Error::Parse(format!("expected {} bytes of data, found {}", nx * ny * 8, bytes.len())));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(RawSnapshot { nx, ny, dx, time, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_round_trip() {
        let g = Grid::periodic_2d(3, 2, 0.25, [0.0, 0.0]).unwrap();
        let f: Vec<f64> = (0..6).map(|i| i as f64 * 0.1 - 0.2).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.raw");
        write_snapshot_raw(&p, &g, &f, 1.5).unwrap();
        let s = read_snapshot_raw(&p).unwrap();
        assert_eq!((s.nx, s.ny, s.dx, s.time), (3, 2, 0.25, 1.5));
        assert_eq!(s.data, f);
    }

    #[test]
    fn csv_columns() {
        let g = Grid::periodic_1d(4, 0.5, -1.0).unwrap();
        let s = snapshot_csv(&g, &[1.0, 2.0, 3.0, 4.0]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "x,value");
        assert_eq!(lines.len(), 5);
    }
}
