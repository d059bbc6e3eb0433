//! Matrix containers: a little-endian binary format and a CSV format, both
//! led by an explicit `(rows, cols)` header.
//!
//! Binary layout: `b"SDMX"`, `u32` version, `u64` rows, `u64` cols, then
//! `rows * cols` `f64` values in row-major order.

use std::io::{BufRead, Read, Write};

use super::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"SDMX";
const VERSION: u32 = 1;

pub fn write_binary<T: Real, W: Write>(m: &DenseMatrix<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for &x in m.as_slice() {
        w.write_all(&x.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<T: Real, R: Read>(mut r: R) -> Result<DenseMatrix<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad matrix magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported matrix version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        r.read_exact(&mut b8)?;
        data.push(T::lit(f64::from_le_bytes(b8)));
    }
    DenseMatrix::from_vec(rows, cols, data)
}

/// First line `shape,<rows>,<cols>`, then one comma-separated line per row.
pub fn write_csv<T: Real, W: Write>(m: &DenseMatrix<T>, mut w: W) -> Result<()> {
    writeln!(w, "shape,{},{}", m.rows(), m.cols())?;
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|x| format!("{}", x.to_f64_lossy())).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_csv<T: Real, R: BufRead>(r: R) -> Result<DenseMatrix<T>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Format("missing shape header".into()))??;
    let parts: Vec<&str> = header.trim().split(',').collect();
    let (rows, cols) = match parts.as_slice() {
        ["shape", r, c] => (
            r.parse::<usize>().map_err(|e| Error::Format(e.to_string()))?,
            c.parse::<usize>().map_err(|e| Error::Format(e.to_string()))?,
        ),
        _ => return Err(Error::Format(format!("bad shape header {header:?}"))),
    };
    let mut data = Vec::with_capacity(rows * cols);
    for line in lines.take(rows) {
        let line = line?;
        for tok in line.trim().split(',') {
            let x: f64 = tok.parse().map_err(|_| Error::Format(format!("bad number {tok:?}")))?;
            data.push(T::lit(x));
        }
    }
    DenseMatrix::from_vec(rows, cols, data)
}
