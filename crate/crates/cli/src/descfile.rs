//! Binary matrix container for patch descriptors and anomaly maps.
//!
//! Layout: magic `MHPC`, u32 version, u32 rows, u32 cols, u8 dtype tag
//! (0 = little-endian f32, 1 = little-endian f64), then raw row-major
//! data. Trivially writable from any feature-extraction pipeline.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;

const MAGIC: &[u8; 4] = b"MHPC";
const VERSION: u32 = 1;

pub const DTYPE_F32: u8 = 0;
pub const DTYPE_F64: u8 = 1;

pub fn write_matrix<W: Write>(mut dst: W, matrix: &Array2<f64>, dtype: u8) -> Result<()> {
    if dtype != DTYPE_F32 && dtype != DTYPE_F64 {
        bail!("unknown dtype tag {dtype}");
    }
    dst.write_all(MAGIC)?;
    dst.write_all(&VERSION.to_le_bytes())?;
    dst.write_all(&(matrix.nrows() as u32).to_le_bytes())?;
    dst.write_all(&(matrix.ncols() as u32).to_le_bytes())?;
    dst.write_all(&[dtype])?;
    match dtype {
        DTYPE_F32 => {
            for v in matrix.iter() {
                dst.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        _ => {
            for v in matrix.iter() {
                dst.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn write_matrix_file<P: AsRef<Path>>(path: P, matrix: &Array2<f64>, dtype: u8) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path)
        .with_context(|| format!("cannot create descriptor file '{}'", path.display()))?;
    let mut buf = std::io::BufWriter::new(file);
    write_matrix(&mut buf, matrix, dtype)?;
    buf.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut src: R) -> Result<Array2<f64>> {
    let mut head = [0u8; 17];
    src.read_exact(&mut head).context("truncated header")?;
    if &head[0..4] != MAGIC {
        bail!("bad magic: not a descriptor file");
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        bail!("unsupported descriptor version {version}");
    }
    let rows = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    let dtype = head[16];
    let n = rows
        .checked_mul(cols)
        .context("descriptor shape overflow")?;
    let mut data = Vec::with_capacity(n);
    match dtype {
        DTYPE_F32 => {
            let mut raw = vec![0u8; n * 4];
            src.read_exact(&mut raw).context("truncated payload")?;
            for c in raw.chunks_exact(4) {
                data.push(f32::from_le_bytes(c.try_into().unwrap()) as f64);
            }
        }
        DTYPE_F64 => {
            let mut raw = vec![0u8; n * 8];
            src.read_exact(&mut raw).context("truncated payload")?;
            for c in raw.chunks_exact(8) {
                data.push(f64::from_le_bytes(c.try_into().unwrap()));
            }
        }
        other => bail!("unknown dtype tag {other}"),
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("declared shape"))
}

pub fn read_matrix_file<P: AsRef<Path>>(path: P) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .with_context(|| format!("missing descriptor file '{}'", path.display()))?;
    read_matrix(std::io::BufReader::new(file))
        .with_context(|| format!("while reading '{}'", path.display()))
}
