use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, FeatureRecord};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PGF1";

/// On-disk feature encodings.
///
/// * `Binary`: `PGF1`, u32 record count, u32 dimension, then per record a u32
///   label followed by `dimension` f32 values, all little-endian.
/// * `Csv`: header `label,f0,f1,...` then one record per line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Binary,
    Csv,
}

impl FeatureFormat {
    /// `.csv` selects CSV; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

impl std::str::FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(FeatureFormat::Csv),
            "bin" | "binary" | "pgf" => Ok(FeatureFormat::Binary),
            other => Err(Error::config(format!("unknown feature format '{other}'"))),
        }
    }
}

pub fn load_features(path: &Path, format: FeatureFormat) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        FeatureFormat::Binary => read_binary(reader),
        FeatureFormat::Csv => read_csv(reader),
    }
}

pub fn save_features(path: &Path, dataset: &Dataset, format: FeatureFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        FeatureFormat::Binary => write_binary(&mut w, dataset),
        FeatureFormat::Csv => write_csv(&mut w, dataset),
    }
    .and_then(|()| w.flush().map_err(|e| Error::io(path, e)))
}

fn binary_err(message: impl Into<String>) -> Error {
    Error::Format {
        what: "binary feature file",
        message: message.into(),
    }
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Dataset> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| binary_err("truncated header"))?;
    if &head[..4] != MAGIC {
        return Err(binary_err(format!("bad magic {:?}", &head[..4])));
    }
    let count = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(binary_err("dimension 0"));
    }
    let mut records = Vec::with_capacity(count.min(1 << 20));
    let mut buf = vec![0u8; 4 + 4 * dim];
    for row in 1..=count {
        r.read_exact(&mut buf).map_err(|_| Error::Ingestion {
            row,
            message: format!("file ends inside record {row} of {count}"),
        })?;
        let label = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
        let mut features = Vec::with_capacity(dim);
        for (j, chunk) in buf[4..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Ingestion {
                    row,
                    message: format!("non-finite value in feature {j}"),
                });
            }
            features.push(f64::from(v));
        }
        records.push(FeatureRecord::new(label, features));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| binary_err(e.to_string()))? != 0 {
        return Err(binary_err(format!("trailing bytes after {count} records")));
    }
    Dataset::new(dim, records)
}

pub fn write_binary<W: Write>(w: &mut W, ds: &Dataset) -> Result<()> {
    let wr = |e: std::io::Error| binary_err(e.to_string());
    let count = u32::try_from(ds.len()).map_err(|_| binary_err("too many records"))?;
    w.write_all(MAGIC).map_err(wr)?;
    w.write_all(&count.to_le_bytes()).map_err(wr)?;
    w.write_all(&(ds.dim() as u32).to_le_bytes()).map_err(wr)?;
    for r in ds.records() {
        let label = u32::try_from(ds.label_map()[r.label])
            .map_err(|_| binary_err(format!("label {} exceeds u32", ds.label_map()[r.label])))?;
        w.write_all(&label.to_le_bytes()).map_err(wr)?;
        for &v in &r.features {
            w.write_all(&(v as f32).to_le_bytes()).map_err(wr)?;
        }
    }
    Ok(())
}

fn csv_err(row: usize, message: impl Into<String>) -> Error {
    Error::Ingestion {
        row,
        message: message.into(),
    }
}

pub fn read_csv<R: Read>(r: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(r);
    let header = rdr
        .headers()
        .map_err(|e| Error::Format {
            what: "CSV header",
            message: e.to_string(),
        })?
        .clone();
    let bad_header = |msg: String| Error::Format {
        what: "CSV header",
        message: msg,
    };
    if header.get(0).map(str::trim) != Some("label") {
        return Err(bad_header("first column must be 'label'".into()));
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(bad_header("no feature columns".into()));
    }
    for (j, name) in header.iter().skip(1).enumerate() {
        if name.trim() != format!("f{j}") {
            return Err(bad_header(format!("column {} is '{name}', expected 'f{j}'", j + 1)));
        }
    }

    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_err(row, e.to_string()))?;
        if rec.len() != dim + 1 {
            return Err(csv_err(row, format!("{} fields, expected {}", rec.len(), dim + 1)));
        }
        let label: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| csv_err(row, format!("bad label '{}'", &rec[0])))?;
        let label = usize::try_from(label).map_err(|_| csv_err(row, "label too large"))?;
        let mut features = Vec::with_capacity(dim);
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| csv_err(row, format!("bad value '{field}' in f{j}")))?;
            if !v.is_finite() {
                return Err(csv_err(row, format!("non-finite value in f{j}")));
            }
            features.push(v);
        }
        records.push(FeatureRecord::new(label, features));
    }
    Dataset::new(dim, records)
}

pub fn write_csv<W: Write>(w: &mut W, ds: &Dataset) -> Result<()> {
    let wr = |e: csv::Error| Error::Format {
        what: "CSV output",
        message: e.to_string(),
    };
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["label".to_string()];
    header.extend((0..ds.dim()).map(|j| format!("f{j}")));
    out.write_record(&header).map_err(wr)?;
    for r in ds.records() {
        let mut row = Vec::with_capacity(ds.dim() + 1);
        row.push(ds.label_map()[r.label].to_string());
        // `{}` on f64 prints the shortest string that parses back exactly.
        row.extend(r.features.iter().map(|v| format!("{v}")));
        out.write_record(&row).map_err(wr)?;
    }
    out.flush().map_err(|e| Error::Format {
        what: "CSV output",
        message: e.to_string(),
    })
}
