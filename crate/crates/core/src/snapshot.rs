//! Field snapshots: a little-endian binary layout and a CSV listing.
//!
//! Binary layout: magic `CHMF`, `u32` version, `u64` nx, `u64` ny, `f64` h,
//! `f64 × 2` origin, `u8` geometry tag (0 rectangle, 1 disk), `f64 × 3`
//! geometry parameters (`lx, ly, 0` or `R, cx, cy`), then the `nx · ny` box
//! values row-major as `f64` with `NaN` outside the domain.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::{Field, Geometry, Grid};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"CHMF";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotHeader {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: [f64; 2],
    pub geometry: Geometry<f64>,
}

fn io(e: std::io::Error) -> Error {
    Error::Snapshot(e.to_string())
}

pub fn header_of<T: Scalar>(grid: &Grid<T>) -> SnapshotHeader {
    let f = |x: T| x.to_f64_lossy();
    let geometry = match grid.geometry() {
        Geometry::Rectangle { lx, ly } => Geometry::Rectangle { lx: f(lx), ly: f(ly) },
        Geometry::Disk { radius, center } => Geometry::Disk { radius: f(radius), center: [f(center[0]), f(center[1])] },
    };
    let o = grid.origin();
    SnapshotHeader { nx: grid.nx(), ny: grid.ny(), h: f(grid.h()), origin: [f(o[0]), f(o[1])], geometry }
}

pub fn write_binary<T: Scalar, W: Write>(mut w: W, grid: &Grid<T>, field: &Field<T>) -> Result<()> {
    grid.check(field)?;
    let hd = header_of(grid);
    let mut buf = Vec::with_capacity(64 + 8 * hd.nx * hd.ny);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(hd.nx as u64).to_le_bytes());
    buf.extend_from_slice(&(hd.ny as u64).to_le_bytes());
    for x in [hd.h, hd.origin[0], hd.origin[1]] {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let (tag, params) = match hd.geometry {
        Geometry::Rectangle { lx, ly } => (0u8, [lx, ly, 0.0]),
        Geometry::Disk { radius, center } => (1u8, [radius, center[0], center[1]]),
    };
    buf.push(tag);
    for x in params {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    for j in 0..hd.ny {
        for i in 0..hd.nx {
            let x = grid.index_of(i, j).map_or(f64::NAN, |k| field.values()[k].to_f64_lossy());
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.0.len() < N {
            return Err(Error::Snapshot("truncated snapshot".into()));
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
}

/// Reads a binary snapshot: header and the full row-major box.
pub fn read_binary<R: Read>(mut r: R) -> Result<(SnapshotHeader, Vec<f64>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io)?;
    let mut c = Cursor(&bytes);
    if &c.take::<4>()? != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let version = u32::from_le_bytes(c.take()?);
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let nx = c.u64()? as usize;
    let ny = c.u64()? as usize;
    let h = c.f64()?;
    let origin = [c.f64()?, c.f64()?];
    let tag = c.take::<1>()?[0];
    let p = [c.f64()?, c.f64()?, c.f64()?];
    let geometry = match tag {
        0 => Geometry::Rectangle { lx: p[0], ly: p[1] },
        1 => Geometry::Disk { radius: p[0], center: [p[1], p[2]] },
        t => return Err(Error::Snapshot(format!("unknown geometry tag {t}"))),
    };
    let count = nx.checked_mul(ny).ok_or_else(|| Error::Snapshot("box size overflows".into()))?;
    if c.0.len() != 8 * count {
        return Err(Error::Snapshot(format!("expected {} value bytes, found {}", 8 * count, c.0.len())));
    }
    let values = (0..count).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    Ok((SnapshotHeader { nx, ny, h, origin, geometry }, values))
}

/// Interior field of `grid` from a snapshot taken on a matching grid.
pub fn field_from_snapshot<T: Scalar>(grid: &Grid<T>, header: &SnapshotHeader, values: &[f64]) -> Result<Field<T>> {
    let expected = header_of(grid);
    if expected.nx != header.nx || expected.ny != header.ny || (expected.h - header.h).abs() > 1e-12 * expected.h {
        return Err(Error::Snapshot(format!(
            "snapshot grid {}x{} (h = {}) does not match {}x{} (h = {})",
            header.nx, header.ny, header.h, expected.nx, expected.ny, expected.h
        )));
    }
    let out: Vec<T> = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.cell(k);
            values[j * header.nx + i]
        })
        .map(T::lit)
        .collect();
    let field = Field::new(out);
    if !field.is_finite() {
        return Err(Error::Snapshot("snapshot has non-finite values inside the domain".into()));
    }
    Ok(field)
}

/// CSV with columns `i,j,x,y,value`, one row per interior cell.
pub fn write_csv<T: Scalar, W: Write>(mut w: W, grid: &Grid<T>, field: &Field<T>) -> Result<()> {
    grid.check(field)?;
    let mut out = String::from("i,j,x,y,value\n");
    for k in 0..grid.len() {
        let (i, j) = grid.cell(k);
        let [x, y] = grid.coords(k);
        out.push_str(&format!(
            "{i},{j},{},{},{}\n",
            x.to_f64_lossy(),
            y.to_f64_lossy(),
            field.values()[k].to_f64_lossy()
        ));
    }
    w.write_all(out.as_bytes()).map_err(io)
}
