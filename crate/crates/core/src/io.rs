//! Binary file formats: coefficient-field files and grid-field snapshots.
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::field::{CoefficientField, Law};
use crate::grid::{CubeGrid, GridField, Layout};
use crate::linalg::SymMat;

const FIELD_MAGIC: &[u8; 8] = b"HOMFLD01";
const GRID_MAGIC: &[u8; 8] = b"HOMGRD01";
const VERSION: u32 = 1;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Serializes a field: header plus row-major per-unit-cell matrices over the
/// support box.
pub fn write_field(field: &CoefficientField, w: &mut impl Write) -> Result<()> {
    let cells = field.materialize_cells()?;
    let dim = field.dim();
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&field.band().lambda_max().to_le_bytes())?;
    w.write_all(&field.law().tag().to_le_bytes())?;
    w.write_all(&field.seed().to_le_bytes())?;
    for k in 0..dim {
        w.write_all(&field.support_lo()[k].to_le_bytes())?;
        w.write_all(&field.support_extent()[k].to_le_bytes())?;
    }
    for v in &cells {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field(r: &mut impl Read) -> Result<CoefficientField> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(8)? != FIELD_MAGIC {
        return Err(Error::Format("bad field magic".into()));
    }
    if c.u32()? != VERSION {
        return Err(Error::Format("unsupported field version".into()));
    }
    let dim = c.u32()? as usize;
    if !(2..=3).contains(&dim) {
        return Err(Error::Format("bad dimension".into()));
    }
    let lambda = c.f64()?;
    let tag = c.u32()?;
    let seed = c.u64()?;
    let mut lo = Vec::with_capacity(dim);
    let mut extent = Vec::with_capacity(dim);
    for _ in 0..dim {
        lo.push(c.i64()?);
        extent.push(c.i64()?);
    }
    let count: i64 = extent.iter().product();
    if count < 1 || count > (1i64 << 32) {
        return Err(Error::Format("implausible support box".into()));
    }
    let mut cells = Vec::with_capacity(count as usize * dim * dim);
    for _ in 0..count as usize * dim * dim {
        cells.push(c.f64()?);
    }
    // The original law is recorded by tag only; loaded fields serve their
    // cells from storage, so a placeholder law with the right tag suffices.
    let law = match tag {
        1 => Law::Checkerboard { volume_fraction: 0.5 },
        2 => Law::Laminate {
            axis: 0,
            a1: SymMat::identity(dim),
            a2: SymMat::identity(dim),
            period: 2.0,
        },
        3 => Law::Constant(SymMat::identity(dim)),
        4 => Law::DiagUniform,
        _ => return Err(Error::Format(format!("unknown law tag {tag}"))),
    };
    CoefficientField::from_stored(dim, lambda, law, seed, lo, extent, cells)
}

pub fn write_field_file(field: &CoefficientField, path: &std::path::Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_field(field, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn read_field_file(path: &std::path::Path) -> Result<CoefficientField> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_field(&mut f)
}

/// Grid-field snapshot: same envelope as the field format with a rank and
/// layout tag, then the raw values.
pub fn write_gridfield(gf: &GridField, w: &mut impl Write) -> Result<()> {
    let dim = gf.grid.dim();
    w.write_all(GRID_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(gf.rank as u32).to_le_bytes())?;
    let layout: u32 = match gf.layout {
        Layout::Nodal => 0,
        Layout::PerCell => 1,
    };
    w.write_all(&layout.to_le_bytes())?;
    for k in 0..dim {
        w.write_all(&gf.grid.lo()[k].to_le_bytes())?;
    }
    w.write_all(&gf.grid.side().to_le_bytes())?;
    w.write_all(&gf.grid.rho().to_le_bytes())?;
    for v in &gf.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_gridfield(r: &mut impl Read) -> Result<GridField> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(8)? != GRID_MAGIC {
        return Err(Error::Format("bad snapshot magic".into()));
    }
    if c.u32()? != VERSION {
        return Err(Error::Format("unsupported snapshot version".into()));
    }
    let dim = c.u32()? as usize;
    let rank = c.u32()? as usize;
    let layout = match c.u32()? {
        0 => Layout::Nodal,
        1 => Layout::PerCell,
        _ => return Err(Error::Format("unknown layout tag".into())),
    };
    let mut lo = [0i64; 3];
    for slot in lo.iter_mut().take(dim) {
        *slot = c.i64()?;
    }
    let side = c.i64()?;
    let rho = c.u32()?;
    let grid = CubeGrid::new(dim, &lo[..dim], side, rho)
        .map_err(|e| Error::Format(format!("bad snapshot grid: {e}")))?;
    let entities = match layout {
        Layout::Nodal => grid.num_nodes(),
        Layout::PerCell => grid.num_cells(),
    };
    let mut data = Vec::with_capacity(entities * rank);
    for _ in 0..entities * rank {
        data.push(c.f64()?);
    }
    Ok(GridField { grid, rank, layout, data })
}

pub fn write_gridfield_file(gf: &GridField, path: &std::path::Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_gridfield(gf, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn read_gridfield_file(path: &std::path::Path) -> Result<GridField> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_gridfield(&mut f)
}
