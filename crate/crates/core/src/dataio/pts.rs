//! Point-cloud files.
//!
//! Binary `PTS1` layout, all little-endian:
//!
//! ```text
//! magic "PTS1" | u32 n | u32 c_in | u32 has_labels
//! n records of: f32 x, y, z | c_in x f32 feature | [u32 label]
//! ```
//!
//! Anything without the magic is read as whitespace-separated text, one
//! point per line (`x y z f_1 .. f_c [label]`); blank lines and lines
//! starting with `#` are skipped.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::spatial::PointCloud;

pub const PTS_MAGIC: [u8; 4] = *b"PTS1";
const HEADER: usize = 16;

/// Column layout of a text point file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AsciiLayout {
    /// Feature columns after `x y z`; `None` takes every remaining column
    /// (minus the label column).
    pub features: Option<usize>,
    /// Whether the last column is an integer label.
    pub labels: bool,
}

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.len();
    let c = cloud.channels();
    let has_labels = cloud.labels.is_some();
    let mut out = Vec::with_capacity(HEADER + n * (4 * (3 + c) + 4 * usize::from(has_labels)));
    out.extend_from_slice(&PTS_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.extend_from_slice(&u32::from(has_labels).to_le_bytes());
    for i in 0..n {
        for v in cloud.positions[i] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for ch in 0..c {
            out.extend_from_slice(&(cloud.features[[i, ch]] as f32).to_le_bytes());
        }
        if let Some(labels) = &cloud.labels {
            out.extend_from_slice(&labels[i].to_le_bytes());
        }
    }
    out
}

/// Write `cloud` in the binary format. Values are stored as `f32`.
pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_cloud(cloud)).map_err(Error::file(path))?;
    Ok(())
}

/// Read a binary or text point file. Text files take every column after
/// `x y z` as a feature.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    read_cloud_with(path, AsciiLayout::default())
}

pub fn read_cloud_with(path: impl AsRef<Path>, layout: AsciiLayout) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(Error::file(path))?;
    if bytes.starts_with(&PTS_MAGIC) {
        return decode_binary(&bytes, path);
    }
    match std::str::from_utf8(&bytes) {
        Ok(text) => parse_ascii(text, layout, path),
        Err(_) => {
            let mut found = [0u8; 4];
            let k = bytes.len().min(4);
            found[..k].copy_from_slice(&bytes[..k]);
            Err(Error::BadMagic {
                path: path.to_path_buf(),
                found,
                expected: PTS_MAGIC,
            })
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, expected_total: u64) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                offset: self.pos as u64,
                expected: expected_total,
                available: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, total: u64) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, total)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self, total: u64) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, total)?.try_into().expect("4 bytes")))
    }
}

fn decode_binary(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let mut r = Reader { bytes, pos: 4, path };
    let header = HEADER as u64;
    let n = r.u32(header)? as usize;
    let c = r.u32(header)? as usize;
    let has_labels = r.u32(header)? != 0;
    let record = 4 * (3 + c) + if has_labels { 4 } else { 0 };
    let total = (HEADER + n * record) as u64;
    if (bytes.len() as u64) < total {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            expected: total,
            available: bytes.len() as u64,
        });
    }
    let mut positions = Vec::with_capacity(n);
    let mut features = Array2::zeros((n, c));
    let mut labels = has_labels.then(|| Vec::with_capacity(n));
    for i in 0..n {
        let mut p = [0.0; 3];
        for v in &mut p {
            *v = f64::from(r.f32(total)?);
        }
        positions.push(p);
        for ch in 0..c {
            features[[i, ch]] = f64::from(r.f32(total)?);
        }
        if let Some(l) = labels.as_mut() {
            l.push(r.u32(total)?);
        }
    }
    PointCloud::new(positions, features, labels)
}

fn parse_ascii(text: &str, layout: AsciiLayout, path: &Path) -> Result<PointCloud> {
    let mut rows: Vec<(usize, Vec<&str>)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        rows.push((n + 1, line.split_whitespace().collect()));
    }
    let label_cols = usize::from(layout.labels);
    let width = match (layout.features, rows.first()) {
        (Some(f), _) => 3 + f + label_cols,
        (None, Some((_, first))) => first.len().max(3 + label_cols),
        (None, None) => 3 + label_cols,
    };
    let c = width - 3 - label_cols;
    let mut positions = Vec::with_capacity(rows.len());
    let mut features = Array2::zeros((rows.len(), c));
    let mut labels = layout.labels.then(|| Vec::with_capacity(rows.len()));
    for (i, (line, cols)) in rows.iter().enumerate() {
        if cols.len() != width {
            return Err(Error::RowWidth {
                path: path.to_path_buf(),
                line: *line,
                expected: width,
                found: cols.len(),
            });
        }
        let num = |tok: &str| -> Result<f64> {
            tok.parse().map_err(|_| Error::ParseValue {
                path: path.to_path_buf(),
                line: *line,
                token: tok.to_string(),
            })
        };
        positions.push([num(cols[0])?, num(cols[1])?, num(cols[2])?]);
        for ch in 0..c {
            features[[i, ch]] = num(cols[3 + ch])?;
        }
        if let Some(l) = labels.as_mut() {
            let tok = cols[width - 1];
            l.push(tok.parse().map_err(|_| Error::ParseValue {
                path: path.to_path_buf(),
                line: *line,
                token: tok.to_string(),
            })?);
        }
    }
    PointCloud::new(positions, features, labels)
}
