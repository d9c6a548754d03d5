//! Binary dataset files.
//!
//! Little-endian layout: the 7-byte magic `RLRMS1\0`, `u32 d`, `u32 r`
//! (0 when unknown), `u64 n`, `f64 sigma`, then `n` records of `d*d` `f64`
//! entries of `A` in row-major order followed by `f64 y`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::HarnessError;
use crate::sensing::SensingSample;

pub const MAGIC: &[u8; 7] = b"RLRMS1\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d: usize,
    pub r: Option<usize>,
    pub sigma: f64,
    pub samples: Vec<SensingSample>,
}

impl Dataset {
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidInput, msg.to_string());
        let d = u32::try_from(self.d).map_err(|_| bad("d does not fit in u32"))?;
        let r = u32::try_from(self.r.unwrap_or(0)).map_err(|_| bad("r does not fit in u32"))?;
        w.write_all(MAGIC)?;
        w.write_all(&d.to_le_bytes())?;
        w.write_all(&r.to_le_bytes())?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        w.write_all(&self.sigma.to_le_bytes())?;
        for (i, s) in self.samples.iter().enumerate() {
            if s.a.nrows() != self.d || s.a.ncols() != self.d {
                return Err(bad(&format!("sample {i} is not {0}x{0}", self.d)));
            }
            for row in 0..self.d {
                for col in 0..self.d {
                    w.write_all(&s.a[(row, col)].to_le_bytes())?;
                }
            }
            w.write_all(&s.y.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut rd: R) -> io::Result<Self> {
        let invalid = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut magic = [0u8; 7];
        rd.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(invalid("not a dataset file (bad magic)".into()));
        }
        let d = read_u32(&mut rd)? as usize;
        let r = read_u32(&mut rd)? as usize;
        let n = read_u64(&mut rd)?;
        let sigma = read_f64(&mut rd)?;
        if d == 0 && n > 0 {
            return Err(invalid("d = 0 with a nonzero sample count".into()));
        }
        let n = usize::try_from(n).map_err(|_| invalid(format!("sample count {n} too large")))?;
        let mut samples = Vec::with_capacity(n.min(1 << 20));
        let mut buf = vec![0u8; 8 * (d * d + 1)];
        for _ in 0..n {
            rd.read_exact(&mut buf)?;
            let vals: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let a = DMatrix::from_row_slice(d, d, &vals[..d * d]);
            samples.push(SensingSample { a, y: vals[d * d] });
        }
        let mut trailing = [0u8; 1];
        if rd.read(&mut trailing)? != 0 {
            return Err(invalid("trailing bytes after the last record".into()));
        }
        Ok(Self {
            d,
            r: (r > 0).then_some(r),
            sigma,
            samples,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let io_err = |source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        self.write_to(BufWriter::new(file)).map_err(io_err)
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let io_err = |source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::open(path).map_err(io_err)?;
        Self::read_from(BufReader::new(file)).map_err(io_err)
    }
}

fn read_u32<R: Read>(rd: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    rd.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(rd: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    rd.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(rd: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    rd.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let ds = Dataset {
            d: 2,
            r: Some(1),
            sigma: 0.5,
            samples: vec![SensingSample {
                a: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
                y: -1.0,
            }],
        };
        let mut bytes = Vec::new();
        ds.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 7 + 4 + 4 + 8 + 8 + 5 * 8);
        assert_eq!(&bytes[..7], b"RLRMS1\0");
        assert_eq!(&bytes[7..11], &2u32.to_le_bytes());
        assert_eq!(&bytes[11..15], &1u32.to_le_bytes());
        assert_eq!(&bytes[15..23], &1u64.to_le_bytes());
        assert_eq!(&bytes[23..31], &0.5f64.to_le_bytes());
        // Row-major: A[0][1] = 2 comes second.
        assert_eq!(&bytes[39..47], &2.0f64.to_le_bytes());
        assert_eq!(&bytes[63..71], &(-1.0f64).to_le_bytes());
        assert_eq!(Dataset::read_from(&bytes[..]).unwrap(), ds);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(Dataset::read_from(&b"RLRMS2\0"[..]).is_err());
        let ds = Dataset {
            d: 1,
            r: None,
            sigma: 0.0,
            samples: vec![SensingSample { a: DMatrix::from_element(1, 1, 1.0), y: 1.0 }],
        };
        let mut bytes = Vec::new();
        ds.write_to(&mut bytes).unwrap();
        assert!(Dataset::read_from(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(Dataset::read_from(&bytes[..]).is_err());
    }
}
