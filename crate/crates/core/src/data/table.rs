//! Feature tables: per-sample feature vectors computed by an external
//! backbone, exchanged as MEDF binary files or CSV.
//!
//! MEDF layout (little-endian, no padding):
//!
//! ```text
//! magic   "MEDF"          4 bytes
//! version u32 = 1
//! n_samples u32
//! dim       u32
//! n_classes u32
//! then per sample:
//!   id_len  u16
//!   id      id_len bytes of UTF-8
//!   label   u32
//!   features dim x f32
//! ```
//!
//! The CSV alternative is `id,label,f0..f{dim-1}` with a mandatory header
//! row and must parse to an identical table.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const MEDF_MAGIC: &[u8; 4] = b"MEDF";
pub const MEDF_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub backbone_id: String,
    pub dim: usize,
    pub num_classes: u32,
    ids: Vec<String>,
    rows: BTreeMap<String, Vec<f32>>,
    labels: BTreeMap<String, u32>,
}

impl FeatureTable {
    pub fn new(backbone_id: impl Into<String>, dim: usize, num_classes: u32) -> Self {
        FeatureTable {
            backbone_id: backbone_id.into(),
            dim,
            num_classes,
            ids: Vec::new(),
            rows: BTreeMap::new(),
            labels: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, label: u32, features: Vec<f32>) -> Result<()> {
        let id = id.into();
        if features.len() != self.dim {
            return Err(Error::Data(format!(
                "row '{id}' has {} features, table dim is {}",
                features.len(),
                self.dim
            )));
        }
        if label >= self.num_classes {
            return Err(Error::Data(format!(
                "row '{id}' label {label} exceeds declared class count {}",
                self.num_classes
            )));
        }
        if self.rows.contains_key(&id) {
            return Err(Error::Data(format!("duplicate sample id '{id}'")));
        }
        self.ids.push(id.clone());
        self.rows.insert(id.clone(), features);
        self.labels.insert(id, label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Sample ids in insertion (= file) order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, id: &str) -> Option<&[f32]> {
        self.rows.get(id).map(|v| v.as_slice())
    }

    pub fn label(&self, id: &str) -> Option<u32> {
        self.labels.get(id).copied()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::format(
                self.offset as u64,
                format!(
                    "truncated while reading {what} ({n} bytes needed, {} left)",
                    self.bytes.len() - self.offset
                ),
            ));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parse MEDF bytes. `backbone_id` names the producing backbone (the format
/// itself does not carry it).
pub fn parse_medf(bytes: &[u8], backbone_id: &str) -> Result<FeatureTable> {
    let mut cur = Cursor { bytes, offset: 0 };

    let magic_at = cur.offset as u64;
    let magic = cur.take(4, "magic")?;
    if magic != MEDF_MAGIC {
        return Err(Error::format(magic_at, format!("bad magic {magic:02x?}")));
    }
    let version_at = cur.offset as u64;
    let version = cur.u32("version")?;
    if version != MEDF_VERSION {
        return Err(Error::format(
            version_at,
            format!("unsupported version {version}"),
        ));
    }
    let n_samples = cur.u32("sample count")? as usize;
    let dim = cur.u32("feature dim")? as usize;
    let n_classes = cur.u32("class count")?;

    // Cheapest possible size for one sample bounds n_samples, so a hostile
    // header can't force a huge allocation.
    let min_sample = 2 + 4 + 4 * dim;
    let remaining = bytes.len() - cur.offset;
    if n_samples
        .checked_mul(min_sample)
        .is_none_or(|need| need > remaining)
    {
        return Err(Error::format(
            cur.offset as u64,
            format!("{n_samples} samples of dim {dim} cannot fit in {remaining} remaining bytes"),
        ));
    }

    let mut table = FeatureTable::new(backbone_id, dim, n_classes);
    for s in 0..n_samples {
        let id_len = cur.u16("id length")? as usize;
        let id_at = cur.offset as u64;
        let id_bytes = cur.take(id_len, "sample id")?;
        let id = std::str::from_utf8(id_bytes)
            .map_err(|_| Error::format(id_at, format!("sample {s} id is not UTF-8")))?
            .to_string();
        let label_at = cur.offset as u64;
        let label = cur.u32("label")?;
        let mut features = Vec::with_capacity(dim);
        for _ in 0..dim {
            features.push(cur.f32("feature value")?);
        }
        if label >= n_classes {
            return Err(Error::format(
                label_at,
                format!("sample '{id}' label {label} >= class count {n_classes}"),
            ));
        }
        if table.rows.contains_key(&id) {
            return Err(Error::format(id_at, format!("duplicate sample id '{id}'")));
        }
        table.ids.push(id.clone());
        table.rows.insert(id.clone(), features);
        table.labels.insert(id, label);
    }
    if cur.offset != bytes.len() {
        return Err(Error::format(
            cur.offset as u64,
            format!(
                "{} trailing bytes after last sample",
                bytes.len() - cur.offset
            ),
        ));
    }
    Ok(table)
}

pub fn encode_medf(table: &FeatureTable) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MEDF_MAGIC);
    out.extend_from_slice(&MEDF_VERSION.to_le_bytes());
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    out.extend_from_slice(&(table.dim as u32).to_le_bytes());
    out.extend_from_slice(&table.num_classes.to_le_bytes());
    for id in &table.ids {
        let id_bytes = id.as_bytes();
        if id_bytes.len() > u16::MAX as usize {
            return Err(Error::Data(format!("sample id '{id}' exceeds 65535 bytes")));
        }
        out.extend_from_slice(&(id_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(id_bytes);
        out.extend_from_slice(&table.labels[id].to_le_bytes());
        for v in &table.rows[id] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_feature_table(path: &Path, backbone_id: &str) -> Result<FeatureTable> {
    let bytes = std::fs::read(path)?;
    parse_medf(&bytes, backbone_id)
}

pub fn write_feature_table(table: &FeatureTable, path: &Path) -> Result<()> {
    std::fs::write(path, encode_medf(table)?)?;
    Ok(())
}

/// Parse the CSV alternative: header `id,label,f0..f{dim-1}` then one row
/// per sample. Class count is the largest label plus one.
pub fn parse_feature_csv(text: &str, backbone_id: &str) -> Result<FeatureTable> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Data("empty CSV: header row is required".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "id" || cols[1] != "label" {
        return Err(Error::Data(format!(
            "CSV header must start with 'id,label', got '{header}'"
        )));
    }
    let dim = cols.len() - 2;
    for (i, col) in cols[2..].iter().enumerate() {
        let expected = format!("f{i}");
        if *col != expected {
            return Err(Error::Data(format!(
                "CSV header column {} is '{col}', expected '{expected}'",
                i + 2
            )));
        }
    }

    let mut parsed: Vec<(String, u32, Vec<f32>)> = Vec::new();
    let mut max_label = 0u32;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 2 {
            return Err(Error::Data(format!(
                "CSV line {}: expected {} fields, got {}",
                line_no + 1,
                dim + 2,
                fields.len()
            )));
        }
        let label: u32 = fields[1].parse().map_err(|_| {
            Error::Data(format!(
                "CSV line {}: bad label '{}'",
                line_no + 1,
                fields[1]
            ))
        })?;
        let features = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f32>().map_err(|_| {
                    Error::Data(format!("CSV line {}: bad feature '{f}'", line_no + 1))
                })
            })
            .collect::<Result<Vec<f32>>>()?;
        max_label = max_label.max(label);
        parsed.push((fields[0].to_string(), label, features));
    }

    let mut table = FeatureTable::new(backbone_id, dim, max_label + 1);
    for (id, label, features) in parsed {
        table.insert(id, label, features)?;
    }
    Ok(table)
}

pub fn read_feature_table_csv(path: &Path, backbone_id: &str) -> Result<FeatureTable> {
    let text = std::fs::read_to_string(path)?;
    parse_feature_csv(&text, backbone_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_table() -> FeatureTable {
        let mut t = FeatureTable::new("bb0", 4, 2);
        t.insert("a", 0, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        t.insert("b", 1, vec![-1.0, 0.5, 0.25, 8.0]).unwrap();
        t.insert("c", 0, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        t
    }

    #[test]
    fn empty_table_round_trips() {
        let t = FeatureTable::new("bb", 7, 3);
        let bytes = encode_medf(&t).unwrap();
        let back = parse_medf(&bytes, "bb").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn hand_encoded_fixture_parses_to_exact_values() {
        // 3 samples, dim 4, hand-assembled bytes.
        let mut bytes: Vec<u8> = Vec::new();
        bytes.extend_from_slice(b"MEDF");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for (id, label, feats) in [
            ("a", 0u32, [1.0f32, 2.0, 3.0, 4.0]),
            ("b", 1, [-1.0, 0.5, 0.25, 8.0]),
            ("c", 0, [0.0, 0.0, 0.0, 0.0]),
        ] {
            bytes.extend_from_slice(&(id.len() as u16).to_le_bytes());
            bytes.extend_from_slice(id.as_bytes());
            bytes.extend_from_slice(&label.to_le_bytes());
            for f in feats {
                bytes.extend_from_slice(&f.to_le_bytes());
            }
        }
        let table = parse_medf(&bytes, "bb0").unwrap();
        assert_eq!(table, sample_table());
        assert_eq!(table.row("b").unwrap(), &[-1.0, 0.5, 0.25, 8.0]);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let t = sample_table();
        let bytes = encode_medf(&t).unwrap();
        let back = parse_medf(&bytes, "bb0").unwrap();
        assert_eq!(back, t);
        assert_eq!(encode_medf(&back).unwrap(), bytes);
    }

    #[test]
    fn bad_magic_and_version_report_offsets() {
        let mut bytes = encode_medf(&sample_table()).unwrap();
        bytes[0] = b'X';
        match parse_medf(&bytes, "bb") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        let mut bytes = encode_medf(&sample_table()).unwrap();
        bytes[4] = 9;
        match parse_medf(&bytes, "bb") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_medf(&sample_table()).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        match parse_medf(cut, "bb") {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dim_mismatch_in_header_is_rejected() {
        // Claim dim 5 while rows carry 4 floats: runs out of bytes.
        let mut bytes = encode_medf(&sample_table()).unwrap();
        bytes[12..16].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(
            parse_medf(&bytes, "bb"),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn oversized_sample_count_is_rejected_early() {
        let mut bytes = encode_medf(&FeatureTable::new("bb", 3, 1)).unwrap();
        bytes[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        match parse_medf(&bytes, "bb") {
            Err(Error::Format { message, .. }) => assert!(message.contains("cannot fit")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_parses_to_identical_table() {
        let csv = "id,label,f0,f1,f2,f3\n\
                   a,0,1,2,3,4\n\
                   b,1,-1,0.5,0.25,8\n\
                   c,0,0,0,0,0\n";
        let table = parse_feature_csv(csv, "bb0").unwrap();
        assert_eq!(table, sample_table());
    }

    #[test]
    fn csv_requires_header() {
        let csv = "a,0,1,2,3,4\n";
        assert!(parse_feature_csv(csv, "bb").is_err());
        let csv = "id,label,f0,fX\na,0,1,2\n";
        assert!(parse_feature_csv(csv, "bb").is_err());
    }

    #[test]
    fn insert_validates_dim_and_duplicates() {
        let mut t = FeatureTable::new("bb", 2, 2);
        assert!(t.insert("a", 0, vec![1.0]).is_err());
        t.insert("a", 0, vec![1.0, 2.0]).unwrap();
        assert!(t.insert("a", 1, vec![3.0, 4.0]).is_err());
        assert!(t.insert("b", 5, vec![3.0, 4.0]).is_err());
    }
}
