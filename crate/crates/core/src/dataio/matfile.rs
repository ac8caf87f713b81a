//! Dense matrix and label files.
//!
//! Binary layout: the 8 bytes `NTKMAT01`, `rows` and `cols` as u64 LE, then
//! `rows * cols` f64 LE values in row-major order. CSV stores one row per line
//! with 17 significant digits so values round-trip exactly.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::linalg::Mat;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NTKMAT01";
const HEADER: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatFormat {
    #[default]
    Binary,
    Csv,
}

impl MatFormat {
    /// `.csv` means CSV, everything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => MatFormat::Csv,
            _ => MatFormat::Binary,
        }
    }
}

impl FromStr for MatFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bin" | "binary" | "ntkmat" => Ok(MatFormat::Binary),
            "csv" => Ok(MatFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown matrix format `{other}`"))),
        }
    }
}

pub fn encode_binary(m: &Mat) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            out.extend_from_slice(&m.get(i, j).to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<Mat> {
    if bytes.len() < HEADER {
        return Err(Error::TruncatedFile {
            expected: HEADER,
            found: bytes.len(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic(String::from_utf8_lossy(&bytes[..8]).into_owned()));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let overflow = Error::ShapeOverflow { rows, cols };
    if rows == 0 || cols == 0 {
        return Err(overflow);
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .and_then(|b| b.checked_add(HEADER as u64))
        .and_then(|b| usize::try_from(b).ok())
        .ok_or(overflow)?;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingData(bytes.len() - expected));
    }
    let values: Vec<f64> = bytes[HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Mat::from_row_major(rows as usize, cols as usize, &values)
}

pub fn encode_csv(m: &Mat) -> String {
    let mut out = String::with_capacity(24 * m.len());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:.16e}", m.get(i, j)));
        }
        out.push('\n');
    }
    out
}

pub fn decode_csv(text: &str) -> Result<Mat> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let before = values.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("line {}: bad number `{}`", lineno + 1, field.trim())))?;
            values.push(v);
        }
        let width = values.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::shape(format!("line {} has {width} fields, expected {c}", lineno + 1)));
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Mat::from_row_major(rows, cols, &values)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Mat, format: MatFormat) -> Result<()> {
    let path = path.as_ref();
    let result = match format {
        MatFormat::Binary => fs::write(path, encode_binary(m)),
        MatFormat::Csv => fs::write(path, encode_csv(m)),
    };
    result.map_err(|e| Error::io(path, e))
}

/// Reads either format, recognising binary files by their magic bytes.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Mat> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = if bytes.starts_with(MAGIC) {
        decode_binary(&bytes)
    } else {
        std::str::from_utf8(&bytes)
            .map_err(|_| Error::BadMagic(String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned()))
            .and_then(decode_csv)
    };
    parsed.map_err(|e| match e {
        Error::InvalidConfig(msg) => Error::Parse {
            path: path.to_path_buf(),
            msg,
        },
        other => other,
    })
}

/// One label per line; accepts `0`/`1` or `-1`/`+1`.
pub fn parse_labels(text: &str) -> Result<Vec<u8>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            let v: f64 = t.parse().map_err(|_| Error::InvalidConfig(format!("bad label `{t}`")))?;
            if v == 0.0 || v == -1.0 {
                Ok(0)
            } else if v == 1.0 {
                Ok(1)
            } else {
                Err(Error::InvalidLabel(v))
            }
        })
        .collect()
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text).map_err(|e| match e {
        Error::InvalidConfig(msg) => Error::Parse {
            path: path.to_path_buf(),
            msg,
        },
        other => other,
    })
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::with_capacity(2 * labels.len());
    for y in labels {
        text.push_str(&y.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Mat {
        Mat::from_rows(&[[1.0, -2.5e-300, std::f64::consts::PI], [0.1, 7.0, -0.0]]).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let m = sample();
        let back = decode_binary(&encode_binary(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = sample();
        let back = decode_csv(&encode_csv(&m)).unwrap();
        for (a, b) in m.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn binary_header_errors() {
        let bytes = encode_binary(&sample());
        assert!(matches!(decode_binary(&bytes[..10]), Err(Error::TruncatedFile { .. })));
        assert!(matches!(decode_binary(&bytes[..bytes.len() - 1]), Err(Error::TruncatedFile { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_binary(&extra), Err(Error::TrailingData(1))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_binary(&bad), Err(Error::BadMagic(_))));
        let mut zero = bytes.clone();
        zero[8..16].copy_from_slice(&0u64.to_le_bytes());
        assert!(matches!(decode_binary(&zero), Err(Error::ShapeOverflow { .. })));
        let mut huge = bytes;
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_binary(&huge), Err(Error::ShapeOverflow { .. })));
    }

    #[test]
    fn ragged_csv_rejected() {
        assert!(matches!(decode_csv("1,2\n3\n"), Err(Error::ShapeMismatch(_))));
        assert!(decode_csv("1,x\n").is_err());
        assert!(decode_csv("").is_err());
    }

    #[test]
    fn file_round_trip_and_autodetect() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample();
        for (name, fmt) in [("k.ntkmat", MatFormat::Binary), ("k.csv", MatFormat::Csv)] {
            let p = dir.path().join(name);
            write_matrix(&p, &m, fmt).unwrap();
            assert_eq!(MatFormat::from_path(&p), fmt);
            assert_eq!(read_matrix(&p).unwrap(), m);
        }
        assert!(matches!(read_matrix(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn labels() {
        assert_eq!(parse_labels("0\n1\n-1\n+1\n").unwrap(), vec![0, 1, 0, 1]);
        assert!(matches!(parse_labels("2"), Err(Error::InvalidLabel(_))));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("y.txt");
        write_labels(&p, &[1, 0, 0]).unwrap();
        assert_eq!(read_labels(&p).unwrap(), vec![1, 0, 0]);
    }

    proptest! {
        #[test]
        fn any_matrix_round_trips(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut rng = crate::rng::SeededRng::new(seed);
            let m = Mat::from_fn(rows, cols, |_, _| f64::from_bits(rng.next_u64()) );
            let m = m.map(|v| if v.is_finite() { v } else { 0.0 });
            let bin = decode_binary(&encode_binary(&m)).unwrap();
            let csv = decode_csv(&encode_csv(&m)).unwrap();
            for ((a, b), c) in m.data().iter().zip(bin.data()).zip(csv.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
                prop_assert_eq!(a.to_bits(), c.to_bits());
            }
        }
    }
}
