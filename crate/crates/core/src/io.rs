//! On-disk formats: the `SGPM` binary matrix, CSV tables and atomic writes.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SGPM"
//! 4       2     version (u16, currently 1)
//! 6       1     scalar kind (u8: 0 = f32, 1 = f64)
//! 7       9     reserved, zero
//! 16      8     rows (u64)
//! 24      8     cols (u64)
//! 32      ...   row-major payload
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SGPM";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    F32,
    F64,
}

impl ScalarKind {
    pub fn bytes(self) -> u64 {
        match self {
            ScalarKind::F32 => 4,
            ScalarKind::F64 => 8,
        }
    }

    fn code(self) -> u8 {
        match self {
            ScalarKind::F32 => 0,
            ScalarKind::F64 => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixHeader {
    pub kind: ScalarKind,
    pub rows: u64,
    pub cols: u64,
}

impl MatrixHeader {
    pub fn encode(&self) -> [u8; 32] {
        let mut h = [0u8; 32];
        h[0..4].copy_from_slice(MAGIC);
        h[4..6].copy_from_slice(&VERSION.to_le_bytes());
        h[6] = self.kind.code();
        h[16..24].copy_from_slice(&self.rows.to_le_bytes());
        h[24..32].copy_from_slice(&self.cols.to_le_bytes());
        h
    }

    pub fn decode(bytes: &[u8; 32], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if &bytes[0..4] != MAGIC {
            return Err(bad("missing SGPM magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let kind = match bytes[6] {
            0 => ScalarKind::F32,
            1 => ScalarKind::F64,
            k => return Err(bad(&format!("unknown scalar kind {k}"))),
        };
        let rows = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
        Ok(MatrixHeader { kind, rows, cols })
    }

    pub fn payload_bytes(&self) -> u64 {
        self.rows * self.cols * self.kind.bytes()
    }
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write_with(path, |w| w.write_all(bytes))
}

pub fn atomic_write_with<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = temp_sibling(path);
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        fill(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, kind: ScalarKind) -> Result<()> {
    let header = MatrixHeader {
        kind,
        rows: m.nrows() as u64,
        cols: m.ncols() as u64,
    };
    atomic_write_with(path, |w| {
        w.write_all(&header.encode())?;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                match kind {
                    ScalarKind::F64 => w.write_all(&m[(i, j)].to_le_bytes())?,
                    ScalarKind::F32 => w.write_all(&(m[(i, j)] as f32).to_le_bytes())?,
                }
            }
        }
        Ok(())
    })
}

pub fn read_header(path: &Path) -> Result<MatrixHeader> {
    let mut f = File::open(path)?;
    read_header_from(&mut f, path)
}

fn read_header_from(f: &mut File, path: &Path) -> Result<MatrixHeader> {
    let mut buf = [0u8; 32];
    f.read_exact(&mut buf).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        reason: "truncated header".into(),
    })?;
    let header = MatrixHeader::decode(&buf, path)?;
    let len = f.metadata()?.len();
    if len != HEADER_LEN + header.payload_bytes() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "payload is {} bytes, header implies {}",
                len.saturating_sub(HEADER_LEN),
                header.payload_bytes()
            ),
        });
    }
    Ok(header)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let header = read_header(path)?;
    read_rows(path, 0, header.rows as usize)
}

/// Reads `count` rows starting at `start` without loading the rest.
pub fn read_rows(path: &Path, start: usize, count: usize) -> Result<DMatrix<f64>> {
    let mut f = File::open(path)?;
    let header = read_header_from(&mut f, path)?;
    if (start + count) as u64 > header.rows {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("row range {start}..{} beyond {} rows", start + count, header.rows),
        });
    }
    let cols = header.cols as usize;
    let width = header.kind.bytes();
    f.seek(SeekFrom::Start(HEADER_LEN + start as u64 * header.cols * width))?;
    let mut reader = BufReader::new(f);
    let mut out = DMatrix::zeros(count, cols);
    let mut b8 = [0u8; 8];
    let mut b4 = [0u8; 4];
    for i in 0..count {
        for j in 0..cols {
            out[(i, j)] = match header.kind {
                ScalarKind::F64 => {
                    reader.read_exact(&mut b8)?;
                    f64::from_le_bytes(b8)
                }
                ScalarKind::F32 => {
                    reader.read_exact(&mut b4)?;
                    f32::from_le_bytes(b4) as f64
                }
            };
        }
    }
    Ok(out)
}

/// Round-trip formatting for floats in CSV output (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV table with a header row; every cell is pre-formatted.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    atomic_write_with(path, |w| {
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })
}

/// `index,value` CSV of a field over the grid.
pub fn write_field_csv(path: &Path, name: &str, values: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = values
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i.to_string(), fmt_f64(*v)])
        .collect();
    write_csv(path, &["index", name], &rows)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let h = MatrixHeader {
            kind: ScalarKind::F64,
            rows: 3,
            cols: 258,
        };
        let b = h.encode();
        assert_eq!(&b[..4], b"SGPM");
        assert_eq!(b[4..6], [1, 0]);
        assert_eq!(b[6], 1);
        assert!(b[7..16].iter().all(|x| *x == 0));
        assert_eq!(b[16..24], [3, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(b[24..32], [2, 1, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn matrix_round_trip_and_row_ranges() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let m = DMatrix::from_fn(5, 3, |i, j| (i as f64 + 0.1) * (j as f64 - 1.3) / 7.0);
        write_matrix(&p, &m, ScalarKind::F64).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 32 + 5 * 3 * 8);
        assert_eq!(read_matrix(&p).unwrap(), m);
        assert_eq!(read_rows(&p, 2, 2).unwrap(), m.rows(2, 2).into_owned());
        assert!(read_rows(&p, 4, 2).is_err());

        write_matrix(&p, &m, ScalarKind::F32).unwrap();
        let back = read_matrix(&p).unwrap();
        assert!((back - &m).amax() < 1e-6);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        fs::write(&p, b"NOPE").unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Format { .. })));
        let m = DMatrix::from_element(2, 2, 1.0);
        write_matrix(&p, &m, ScalarKind::F64).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn csv_precision() {
        let v = 0.1 + 0.2;
        assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }
}
