//! Feature files: the `.krdm` binary format and CSV.
//!
//! `.krdm` layout, all little-endian:
//!
//! ```text
//! "KRDM" | version u32 | n u64 | d u64 | n*d f64 row-major
//! concept tag u8 (0 categorical, 1 continuous, 2 vector)
//!   0: n x u64 | 1: n x f64 | 2: m u64, n*m f64 row-major
//! task tag u8 (0 none, 1 categorical, 2 continuous) + payload as above
//! provenance: u64 byte length + UTF-8 JSON
//! ```
//!
//! CSV files carry a header row. Feature columns are `f0..f{d-1}`; the
//! concept is `concept` (continuous), `concept_class` (categorical) or
//! `concept0..concept{m-1}` (vector); optional `task` / `task_class`.

use std::path::Path;

use nalgebra::DMatrix;

use crate::datagen::{Dataset, Provenance, TaskLabels};
use crate::error::{Error, Result};
use crate::kernel::ConceptLabels;

const MAGIC: &[u8; 4] = b"KRDM";
const VERSION: u32 = 1;

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, len: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format!(
                "truncated: expected {} bytes, found {}",
                self.pos.saturating_add(len),
                self.bytes.len()
            )
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, count: usize) -> std::result::Result<Vec<f64>, String> {
        let len = count.checked_mul(8).ok_or("length overflow")?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn push_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for row in m.row_iter() {
        for v in row.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_krdm(ds: &Dataset) -> Result<Vec<u8>> {
    let (n, d) = ds.features.shape();
    let mut out = Vec::with_capacity(32 + 8 * n * (d + 2));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    push_matrix(&mut out, &ds.features);
    match &ds.concept {
        ConceptLabels::Categorical(v) => {
            out.push(0);
            v.iter().for_each(|&c| out.extend_from_slice(&(c as u64).to_le_bytes()));
        }
        ConceptLabels::Continuous(v) => {
            out.push(1);
            v.iter().for_each(|a| out.extend_from_slice(&a.to_le_bytes()));
        }
        ConceptLabels::Vector(m) => {
            out.push(2);
            out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
            push_matrix(&mut out, m);
        }
    }
    match &ds.task {
        None => out.push(0),
        Some(TaskLabels::Categorical(v)) => {
            out.push(1);
            v.iter().for_each(|&c| out.extend_from_slice(&(c as u64).to_le_bytes()));
        }
        Some(TaskLabels::Continuous(v)) => {
            out.push(2);
            v.iter().for_each(|a| out.extend_from_slice(&a.to_le_bytes()));
        }
    }
    let json = serde_json::to_vec(&ds.provenance)?;
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

pub fn decode_krdm(bytes: &[u8]) -> std::result::Result<Dataset, String> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err("bad magic (expected KRDM)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let n = usize::try_from(r.u64()?).map_err(|e| e.to_string())?;
    let d = usize::try_from(r.u64()?).map_err(|e| e.to_string())?;
    let count = n.checked_mul(d).ok_or("dimension overflow")?;
    let features = DMatrix::from_row_slice(n, d, &r.f64s(count)?);
    let read_classes = |r: &mut ByteReader| -> std::result::Result<Vec<usize>, String> {
        (0..n).map(|_| r.u64().map(|v| v as usize)).collect()
    };
    let concept = match r.u8()? {
        0 => ConceptLabels::Categorical(read_classes(&mut r)?),
        1 => ConceptLabels::Continuous(r.f64s(n)?),
        2 => {
            let m = r.u64()? as usize;
            let count = n.checked_mul(m).ok_or("dimension overflow")?;
            ConceptLabels::Vector(DMatrix::from_row_slice(n, m, &r.f64s(count)?))
        }
        t => return Err(format!("unknown concept tag {t}")),
    };
    let task = match r.u8()? {
        0 => None,
        1 => Some(TaskLabels::Categorical(read_classes(&mut r)?)),
        2 => Some(TaskLabels::Continuous(r.f64s(n)?)),
        t => return Err(format!("unknown task tag {t}")),
    };
    let len = r.u64()? as usize;
    let provenance: Provenance = serde_json::from_slice(r.take(len)?).map_err(|e| format!("provenance: {e}"))?;
    if !r.is_empty() {
        return Err(format!("{} trailing bytes", r.remaining()));
    }
    Dataset::new(features, concept, task, provenance).map_err(|e| e.to_string())
}

fn csv_header(ds: &Dataset) -> Vec<String> {
    let mut cols: Vec<String> = (0..ds.d()).map(|j| format!("f{j}")).collect();
    match &ds.concept {
        ConceptLabels::Categorical(_) => cols.push("concept_class".into()),
        ConceptLabels::Continuous(_) => cols.push("concept".into()),
        ConceptLabels::Vector(m) => cols.extend((0..m.ncols()).map(|j| format!("concept{j}"))),
    }
    match &ds.task {
        Some(TaskLabels::Categorical(_)) => cols.push("task_class".into()),
        Some(TaskLabels::Continuous(_)) => cols.push("task".into()),
        None => {}
    }
    cols
}

/// CSV text; floats use the shortest representation that round-trips.
pub fn encode_csv(ds: &Dataset) -> String {
    let mut out = csv_header(ds).join(",");
    out.push('\n');
    for i in 0..ds.n() {
        let mut cells: Vec<String> = ds.features.row(i).iter().map(|v| v.to_string()).collect();
        match &ds.concept {
            ConceptLabels::Categorical(v) => cells.push(v[i].to_string()),
            ConceptLabels::Continuous(v) => cells.push(v[i].to_string()),
            ConceptLabels::Vector(m) => cells.extend(m.row(i).iter().map(|v| v.to_string())),
        }
        match &ds.task {
            Some(TaskLabels::Categorical(v)) => cells.push(v[i].to_string()),
            Some(TaskLabels::Continuous(v)) => cells.push(v[i].to_string()),
            None => {}
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Column {
    Feature,
    Concept,
    ConceptClass,
    ConceptVector,
    Task,
    TaskClass,
}

fn classify(name: &str, position: usize) -> std::result::Result<Column, String> {
    let indexed = |prefix: &str| name.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok());
    match name {
        "concept" => Ok(Column::Concept),
        "concept_class" => Ok(Column::ConceptClass),
        "task" => Ok(Column::Task),
        "task_class" => Ok(Column::TaskClass),
        _ if indexed("f").is_some() => Ok(Column::Feature),
        _ if indexed("concept").is_some() => Ok(Column::ConceptVector),
        _ => Err(format!("column {}: unrecognized header '{name}'", position + 1)),
    }
}

pub fn decode_csv(text: &str, source: &str) -> std::result::Result<Dataset, String> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or("empty file: missing header row")?;
    let kinds: Vec<Column> = header
        .split(',')
        .enumerate()
        .map(|(j, h)| classify(h.trim(), j))
        .collect::<std::result::Result<_, _>>()?;
    let count = |c: Column| kinds.iter().filter(|&&k| k == c).count();
    let d = count(Column::Feature);
    if d == 0 {
        return Err("header has no feature columns (f0, f1, ...)".into());
    }
    let concept_cols = [Column::Concept, Column::ConceptClass, Column::ConceptVector]
        .iter()
        .filter(|&&c| count(c) > 0)
        .count();
    if concept_cols != 1 || count(Column::Concept) > 1 || count(Column::ConceptClass) > 1 {
        return Err("header must contain exactly one concept block".into());
    }
    if count(Column::Task) + count(Column::TaskClass) > 1 {
        return Err("header has more than one task column".into());
    }
    let mut features = Vec::new();
    let mut concept = Vec::new();
    let mut task = Vec::new();
    let mut n = 0;
    for (line_no, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != kinds.len() {
            return Err(format!(
                "row {}: expected {} cells, found {}",
                line_no + 1,
                kinds.len(),
                cells.len()
            ));
        }
        for (j, (cell, kind)) in cells.iter().zip(&kinds).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| format!("row {}, column {}: non-numeric cell '{}'", line_no + 1, j + 1, cell))?;
            let is_class = matches!(kind, Column::ConceptClass | Column::TaskClass);
            if is_class && (v < 0.0 || v.fract() != 0.0) {
                return Err(format!("row {}, column {}: class id must be a non-negative integer", line_no + 1, j + 1));
            }
            match kind {
                Column::Feature => features.push(v),
                Column::Concept | Column::ConceptClass | Column::ConceptVector => concept.push(v),
                Column::Task | Column::TaskClass => task.push(v),
            }
        }
        n += 1;
    }
    let concept = if count(Column::ConceptClass) == 1 {
        ConceptLabels::Categorical(concept.iter().map(|&v| v as usize).collect())
    } else if count(Column::Concept) == 1 {
        ConceptLabels::Continuous(concept)
    } else {
        ConceptLabels::Vector(DMatrix::from_row_slice(n, count(Column::ConceptVector), &concept))
    };
    let task = if count(Column::TaskClass) == 1 {
        Some(TaskLabels::Categorical(task.iter().map(|&v| v as usize).collect()))
    } else if count(Column::Task) == 1 {
        Some(TaskLabels::Continuous(task))
    } else {
        None
    };
    let provenance = Provenance::new("csv-file", None).with("source", source);
    Dataset::new(DMatrix::from_row_slice(n, d, &features), concept, task, provenance).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Krdm,
    Csv,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("krdm") => Ok(FileFormat::Krdm),
            Some("csv") => Ok(FileFormat::Csv),
            _ => Err(Error::InvalidArgument(format!(
                "{}: cannot infer format (use .krdm or .csv)",
                path.display()
            ))),
        }
    }
}

pub fn load_features(path: &Path, format: FileFormat) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        FileFormat::Krdm => decode_krdm(&bytes).map_err(|m| Error::format(path, m)),
        FileFormat::Csv => {
            let text = String::from_utf8(bytes).map_err(|e| Error::format(path, e.to_string()))?;
            decode_csv(&text, &path.display().to_string()).map_err(|m| Error::format(path, m))
        }
    }
}

pub fn save_features(path: &Path, ds: &Dataset, format: FileFormat) -> Result<()> {
    let bytes = match format {
        FileFormat::Krdm => encode_krdm(ds)?,
        FileFormat::Csv => encode_csv(ds).into_bytes(),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a file, choosing the format from its extension.
pub fn load(path: &Path) -> Result<Dataset> {
    load_features(path, FileFormat::from_path(path)?)
}

pub fn save(path: &Path, ds: &Dataset) -> Result<()> {
    save_features(path, ds, FileFormat::from_path(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_two_gaussians;
    use proptest::prelude::*;

    #[test]
    fn csv_fixture_parses_as_continuous() {
        let text = "f0,f1,f2,concept\n0.5,1,-2,0.25\n1e-3,2,3,0.75\n";
        let ds = decode_csv(text, "fixture").unwrap();
        assert_eq!(ds.d(), 3);
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.concept, ConceptLabels::Continuous(vec![0.25, 0.75]));
        assert_eq!(ds.features[(1, 0)], 1e-3);
        assert_eq!(ds.provenance.generator, "csv-file");
    }

    #[test]
    fn csv_errors_carry_positions() {
        let err = decode_csv("f0,concept\n1,2\nx,3\n", "t").unwrap_err();
        assert!(err.contains("row 3, column 1"), "{err}");
        let err = decode_csv("f0,concept\n1,2,3\n", "t").unwrap_err();
        assert!(err.contains("row 2"), "{err}");
        assert!(decode_csv("f0,weird\n1,2\n", "t").unwrap_err().contains("unrecognized"));
    }

    #[test]
    fn truncated_krdm_reports_byte_counts() {
        let ds = gen_two_gaussians(10, 1).unwrap();
        let bytes = encode_krdm(&ds).unwrap();
        let err = decode_krdm(&bytes[..40]).unwrap_err();
        assert!(err.contains("expected") && err.contains("found 40"), "{err}");
    }

    #[test]
    fn csv_round_trip_with_task() {
        let ds = gen_two_gaussians(20, 3).unwrap();
        let back = decode_csv(&encode_csv(&ds), "mem").unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.concept, ds.concept);
        assert_eq!(back.task, ds.task);
    }

    proptest! {
        #[test]
        fn krdm_round_trip_is_bit_exact(vals in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 6..60), seed in 0u64..100) {
            let n = vals.len() / 3;
            let features = DMatrix::from_row_slice(n, 3, &vals[..n * 3]);
            let concept = ConceptLabels::Vector(DMatrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64 * 0.1));
            let prov = Provenance::new("prop", Some(seed)).with("n", n);
            let ds = Dataset::new(features, concept, Some(TaskLabels::Categorical((0..n).map(|i| i % 3).collect())), prov).unwrap();
            let back = decode_krdm(&encode_krdm(&ds).unwrap()).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
