//! Synthetic dataset generation and the on-disk dataset formats.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size   field
//! 0       4      magic "HHDS"
//! 4       4      version (u32) = 1
//! 8       8      n (u64)
//! 16      8      d (u64)
//! 24      4      flags (u32), bit 0 = has labels
//! 28      4      reserved (u32) = 0
//! 32      8n     labels (i64), present only when bit 0 is set
//! ...     8nd    features (f64), row-major
//! ```
//!
//! CSV layout: a header row, then one row per point. The header is either
//! `label,x0,...,x{d-1}` (labelled) or `x0,...,x{d-1}`. Error locations
//! use 0-based data-row and column indices.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};
use crate::geometry::{dot, norm, Dataset};
use crate::rng::{gaussian_vec, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `classes` isotropic unit-variance clusters; means drawn from
    /// `N(0, BLOB_SPREAD² I)`, labels drawn uniformly.
    GaussianBlobs,
    /// Standard Gaussian directions scaled to unit norm; unlabelled.
    UnitSphere,
    /// Standard Gaussian points labelled by a random hyperplane `aᵀx + b`
    /// (`‖a‖ = 1`, `b = SEPARABLE_OFFSET`); points with `|aᵀx + b| <
    /// SEPARABLE_GAP` are redrawn.
    TwoClassSeparable,
}

pub const BLOB_SPREAD: f64 = 2.0;
pub const SEPARABLE_OFFSET: f64 = 0.25;
pub const SEPARABLE_GAP: f64 = 0.05;

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticKind::GaussianBlobs => "gaussian_blobs",
            SyntheticKind::UnitSphere => "unit_sphere",
            SyntheticKind::TwoClassSeparable => "two_class_separable",
        })
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "gaussian_blobs" => Ok(SyntheticKind::GaussianBlobs),
            "unit_sphere" => Ok(SyntheticKind::UnitSphere),
            "two_class_separable" => Ok(SyntheticKind::TwoClassSeparable),
            _ => Err(invalid_input(format!("unknown dataset kind `{s}`"))),
        }
    }
}

pub fn gen_synthetic(
    kind: SyntheticKind,
    n: usize,
    d: usize,
    classes: usize,
    seed: u64,
    normalize: bool,
) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid_input("n must be at least 1"));
    }
    if d < 2 {
        return Err(invalid_input("d must be at least 2"));
    }
    let mut rng = rng_from_seed(seed);
    let mut ds = match kind {
        SyntheticKind::GaussianBlobs => {
            if classes == 0 {
                return Err(invalid_input("gaussian_blobs needs at least one class"));
            }
            let means: Vec<Vec<f64>> = (0..classes)
                .map(|_| gaussian_vec(&mut rng, d).into_iter().map(|v| v * BLOB_SPREAD).collect())
                .collect();
            let mut values = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let c = rng.random_range(0..classes);
                let noise = gaussian_vec(&mut rng, d);
                values.extend(means[c].iter().zip(noise).map(|(m, e)| m + e));
                labels.push(c as i64);
            }
            Dataset::new(d, values, Some(labels))?
        }
        SyntheticKind::UnitSphere => {
            let mut values = Vec::with_capacity(n * d);
            while values.len() < n * d {
                let g = gaussian_vec(&mut rng, d);
                let nrm = norm(&g);
                if nrm > 1e-12 {
                    values.extend(g.iter().map(|v| v / nrm));
                }
            }
            Dataset::new(d, values, None)?
        }
        SyntheticKind::TwoClassSeparable => {
            if classes != 2 {
                return Err(invalid_input("two_class_separable needs classes = 2"));
            }
            let a = gaussian_vec(&mut rng, d);
            let na = norm(&a);
            let a: Vec<f64> = a.iter().map(|v| v / na).collect();
            let mut values = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            while labels.len() < n {
                let x = gaussian_vec(&mut rng, d);
                let s = dot(&a, &x) + SEPARABLE_OFFSET;
                if s.abs() < SEPARABLE_GAP {
                    continue;
                }
                labels.push(i64::from(s > 0.0));
                values.extend(x);
            }
            Dataset::new(d, values, Some(labels))?
        }
    };
    if normalize {
        ds.normalize();
    }
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv,
    Binary,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "binary" | "bin" => Ok(DataFormat::Binary),
            _ => Err(invalid_input(format!("unknown data format `{s}`"))),
        }
    }
}

impl DataFormat {
    /// `.csv` → CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => DataFormat::Csv,
            _ => DataFormat::Binary,
        }
    }
}

const MAGIC: &[u8; 4] = b"HHDS";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

pub fn to_binary(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + ds.values().len() * 8 + ds.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.dim() as u64).to_le_bytes());
    let flags: u32 = ds.labels().is_some() as u32;
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    if let Some(labels) = ds.labels() {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    for v in ds.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_binary(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let bad = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing HHDS header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(bad("unsupported version"));
    }
    let n = u64_at(8) as usize;
    let d = u64_at(16) as usize;
    let flags = u32_at(24);
    if flags & !1 != 0 {
        return Err(bad("unknown flag bits"));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if d == 0 {
        return Err(bad("zero dimension"));
    }
    let has_labels = flags & 1 == 1;
    let label_bytes = if has_labels { n.checked_mul(8) } else { Some(0) };
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(8))
        .zip(label_bytes)
        .and_then(|(a, b)| a.checked_add(b))
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or_else(|| bad("size overflow"))?;
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut off = HEADER_LEN;
    let labels = has_labels.then(|| {
        let l: Vec<i64> = bytes[off..off + 8 * n]
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += 8 * n;
        l
    });
    let values: Vec<f64> = bytes[off..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Dataset::new(d, values, labels)
}

pub fn write_csv<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = Vec::with_capacity(ds.dim() + 1);
    if ds.labels().is_some() {
        header.push("label".into());
    }
    header.extend((0..ds.dim()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (i, p) in ds.points().enumerate() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(l) = ds.label(i) {
            rec.push(l.to_string());
        }
        // `{}` on f64 prints the shortest representation that round-trips.
        rec.extend(p.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(Error::EmptyDataset),
        Some(h) => h?,
    };
    let has_labels = header.get(0).is_some_and(|h| h.eq_ignore_ascii_case("label"));
    let d = header.len() - usize::from(has_labels);
    if d == 0 {
        return Err(Error::Malformed {
            row: 0,
            col: 0,
            msg: "header names no feature columns".into(),
        });
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in records.enumerate() {
        let rec = rec?;
        let width = d + usize::from(has_labels);
        if rec.len() != width {
            return Err(Error::DimensionMismatch {
                row,
                expected: d,
                found: rec.len().saturating_sub(usize::from(has_labels)),
            });
        }
        let mut cells = rec.iter().enumerate();
        if has_labels {
            let (col, cell) = cells.next().unwrap();
            let l = cell.parse::<i64>().map_err(|e| Error::Malformed {
                row,
                col,
                msg: format!("label `{cell}`: {e}"),
            })?;
            labels.push(l);
        }
        for (col, cell) in cells {
            let v = cell.parse::<f64>().map_err(|e| Error::Malformed {
                row,
                col,
                msg: format!("`{cell}`: {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(d, values, has_labels.then_some(labels))
}

pub fn ingest(path: &Path, format: DataFormat) -> Result<Dataset> {
    match format {
        DataFormat::Csv => read_csv(std::fs::File::open(path)?),
        DataFormat::Binary => from_binary(&std::fs::read(path)?, path),
    }
}

pub fn write_dataset(ds: &Dataset, path: &Path, format: DataFormat) -> Result<()> {
    let bytes = match format {
        DataFormat::Binary => to_binary(ds),
        DataFormat::Csv => {
            let mut buf = Vec::new();
            write_csv(ds, &mut buf)?;
            buf
        }
    };
    crate::io::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic_per_seed() {
        let a = gen_synthetic(SyntheticKind::GaussianBlobs, 200, 5, 3, 9, false).unwrap();
        let b = gen_synthetic(SyntheticKind::GaussianBlobs, 200, 5, 3, 9, false).unwrap();
        assert_eq!(to_binary(&a), to_binary(&b));
        let c = gen_synthetic(SyntheticKind::GaussianBlobs, 200, 5, 3, 10, false).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.classes(), vec![0, 1, 2]);
    }

    #[test]
    fn unit_sphere_rows_are_unit() {
        let ds = gen_synthetic(SyntheticKind::UnitSphere, 500, 7, 1, 1, false).unwrap();
        for p in ds.points() {
            assert!((norm(p) - 1.0).abs() < 1e-9);
        }
        assert!(ds.labels().is_none());
    }

    #[test]
    fn separable_has_gap() {
        let ds = gen_synthetic(SyntheticKind::TwoClassSeparable, 300, 4, 2, 3, false).unwrap();
        assert_eq!(ds.classes(), vec![0, 1]);
        assert!(gen_synthetic(SyntheticKind::TwoClassSeparable, 10, 4, 3, 3, false).is_err());
    }

    #[test]
    fn normalize_flag() {
        let ds = gen_synthetic(SyntheticKind::GaussianBlobs, 50, 3, 2, 1, true).unwrap();
        assert!(ds.points().all(|p| (norm(p) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn invalid_params() {
        assert!(gen_synthetic(SyntheticKind::UnitSphere, 0, 3, 1, 1, false).is_err());
        assert!(gen_synthetic(SyntheticKind::UnitSphere, 5, 1, 1, 1, false).is_err());
        assert!(gen_synthetic(SyntheticKind::GaussianBlobs, 5, 3, 0, 1, false).is_err());
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(read_csv("".as_bytes()), Err(Error::EmptyDataset)));
        assert!(matches!(read_csv("label,x0\n".as_bytes()), Err(Error::EmptyDataset)));
        assert!(matches!(from_binary(&[], Path::new("e")), Err(Error::EmptyDataset)));
    }

    #[test]
    fn csv_bad_cell_location() {
        let text = "label,x0,x1,x2\n0,1.0,2.0,3.0\n1,4.0,oops,6.0\n";
        match read_csv(text.as_bytes()) {
            Err(Error::Malformed { row, col, .. }) => assert_eq!((row, col), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
        let text = "x0,x1\n1.0,2.0\n3.0\n";
        assert!(matches!(
            read_csv(text.as_bytes()),
            Err(Error::DimensionMismatch { row: 1, expected: 2, found: 1 })
        ));
        let text = "x0,x1\n1.0,inf\n";
        assert!(matches!(read_csv(text.as_bytes()), Err(Error::NonFinite { row: 0, col: 1 })));
        let text = "label,x0\nbad,1.0\n";
        assert!(matches!(read_csv(text.as_bytes()), Err(Error::Malformed { row: 0, col: 0, .. })));
    }

    #[test]
    fn binary_rejects_truncation() {
        let ds = gen_synthetic(SyntheticKind::UnitSphere, 4, 3, 1, 1, false).unwrap();
        let bytes = to_binary(&ds);
        assert!(from_binary(&bytes[..bytes.len() - 1], Path::new("t")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_binary(&bad, Path::new("t")).is_err());
    }

    #[test]
    fn binary_header_layout() {
        let ds = Dataset::from_rows(vec![vec![1.5, -2.0]], Some(vec![7])).unwrap();
        let b = to_binary(&ds);
        assert_eq!(&b[..4], b"HHDS");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[24..28].try_into().unwrap()), 1);
        assert_eq!(i64::from_le_bytes(b[32..40].try_into().unwrap()), 7);
        assert_eq!(f64::from_le_bytes(b[40..48].try_into().unwrap()), 1.5);
        assert_eq!(b.len(), 56);
    }

    proptest! {
        #[test]
        fn binary_and_csv_roundtrip(
            rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..20),
            labelled in any::<bool>(),
        ) {
            let labels = labelled.then(|| (0..rows.len() as i64).map(|i| i * 3 - 5).collect());
            let ds = Dataset::from_rows(rows, labels).unwrap();
            prop_assert_eq!(&from_binary(&to_binary(&ds), Path::new("p")).unwrap(), &ds);
            let mut buf = vec![];
            write_csv(&ds, &mut buf).unwrap();
            prop_assert_eq!(&read_csv(&buf[..]).unwrap(), &ds);
        }
    }
}
