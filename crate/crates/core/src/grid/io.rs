//! `RLT1` / `RLC1` latent files.
//!
//! Layout (little-endian throughout): 4-byte magic, `u32` C, `u32` H, `u32` W,
//! then `C·H·W` `f64` values row-major. Complex planes use magic `RLC1` with
//! C = 2: the real plane followed by the imaginary plane.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use super::{ComplexGrid, LatentGrid};
use crate::error::{Error, Result};

pub const LATENT_MAGIC: &[u8; 4] = b"RLT1";
pub const COMPLEX_MAGIC: &[u8; 4] = b"RLC1";

fn write_raw<W: Write>(w: &mut W, magic: &[u8; 4], dims: [usize; 3], data: &[f64]) -> Result<()> {
    w.write_all(magic)?;
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::invalid("dimension exceeds u32"))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_raw<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<([usize; 3], Vec<f64>)> {
    let mut head = [0u8; 4];
    r.read_exact(&mut head)?;
    if &head != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&head),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {}",
            bytes.len(),
            n * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((dims, data))
}

pub fn write_latent_to<W: Write>(w: &mut W, grid: &LatentGrid) -> Result<()> {
    let (c, h, wd) = grid.shape();
    write_raw(w, LATENT_MAGIC, [c, h, wd], grid.data())
}

pub fn read_latent_from<R: Read>(r: &mut R) -> Result<LatentGrid> {
    let ([c, h, w], data) = read_raw(r, LATENT_MAGIC)?;
    LatentGrid::from_vec(c, h, w, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_complex_to<W: Write>(w: &mut W, grid: &ComplexGrid) -> Result<()> {
    let mut data = grid.real_part();
    data.extend(grid.imag_part());
    write_raw(w, COMPLEX_MAGIC, [2, grid.height(), grid.width()], &data)
}

pub fn read_complex_from<R: Read>(r: &mut R) -> Result<ComplexGrid> {
    let ([c, h, w], data) = read_raw(r, COMPLEX_MAGIC)?;
    if c != 2 {
        return Err(Error::Format(format!("complex file must have 2 planes, found {c}")));
    }
    let (re, im) = data.split_at(h * w);
    let values = re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect();
    ComplexGrid::from_vec(h, w, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_latent(path: impl AsRef<Path>, grid: &LatentGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_latent_to(&mut w, grid)?;
    w.flush()?;
    Ok(())
}

pub fn read_latent(path: impl AsRef<Path>) -> Result<LatentGrid> {
    read_latent_from(&mut BufReader::new(File::open(path)?))
}

pub fn write_complex(path: impl AsRef<Path>, grid: &ComplexGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_complex_to(&mut w, grid)?;
    w.flush()?;
    Ok(())
}

pub fn read_complex(path: impl AsRef<Path>) -> Result<ComplexGrid> {
    read_complex_from(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let g = LatentGrid::from_vec(1, 1, 2, vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_latent_to(&mut buf, &g).unwrap();
        let mut want = b"RLT1".to_vec();
        for d in [1u32, 1, 2] {
            want.extend(d.to_le_bytes());
        }
        want.extend(1.0f64.to_le_bytes());
        want.extend((-2.5f64).to_le_bytes());
        assert_eq!(buf, want);
        assert_eq!(read_latent_from(&mut buf.as_slice()).unwrap(), g);
    }

    #[test]
    fn complex_layout_is_re_then_im() {
        let g = ComplexGrid::from_vec(1, 2, vec![Complex64::new(1.0, 2.0), Complex64::new(3.0, 4.0)])
            .unwrap();
        let mut buf = Vec::new();
        write_complex_to(&mut buf, &g).unwrap();
        assert_eq!(&buf[..4], b"RLC1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        let vals: Vec<f64> = buf[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(vals, vec![1.0, 3.0, 2.0, 4.0]);
        assert_eq!(read_complex_from(&mut buf.as_slice()).unwrap(), g);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let g = LatentGrid::zeros(1, 2, 2).unwrap();
        let mut buf = Vec::new();
        write_latent_to(&mut buf, &g).unwrap();
        assert!(read_complex_from(&mut buf.as_slice()).is_err());
        buf.pop();
        assert!(matches!(read_latent_from(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
