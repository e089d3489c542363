//! On-disk formats: the NDM1 binary feature matrix, a small CSV dialect,
//! and the NDW1 weight checkpoint with a JSON metadata sidecar.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndopt_core::linear::{FeatureMatrix, LinearClassifier};
use ndopt_core::Mat;
use serde::{Deserialize, Serialize};

const FEATURE_MAGIC: &[u8; 4] = b"NDM1";
const WEIGHT_MAGIC: &[u8; 4] = b"NDW1";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("ragged row at line {0}")]
    RaggedRow(usize),
    #[error("non-finite entry at line {0}")]
    NonFinite(usize),
    #[error("label out of range at line {0}")]
    LabelOutOfRange(usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

/// Writes a feature matrix as NDM1: magic, u32 rows, u32 cols, u8
/// has_labels, row-major little-endian f32 features, then u32 labels.
pub fn write_features(path: &Path, fm: &FeatureMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(fm.n() as u32).to_le_bytes())?;
    w.write_all(&(fm.dim() as u32).to_le_bytes())?;
    w.write_all(&[fm.labels().is_some() as u8])?;
    for &v in fm.features().data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    if let Some(labels) = fm.labels() {
        for &y in labels {
            w.write_all(&(y as u32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let mut has_labels = [0u8; 1];
    r.read_exact(&mut has_labels)?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 4];
    for i in 0..rows * cols {
        r.read_exact(&mut buf)?;
        let v = f32::from_le_bytes(buf) as f64;
        if !v.is_finite() {
            return Err(FormatError::NonFinite(i / cols + 1));
        }
        data.push(v);
    }
    let labels = if has_labels[0] != 0 {
        let mut labels = Vec::with_capacity(rows);
        for _ in 0..rows {
            r.read_exact(&mut buf)?;
            labels.push(u32::from_le_bytes(buf) as usize);
        }
        Some(labels)
    } else {
        None
    };
    let x = Mat::from_vec(rows, cols, data).map_err(|e| FormatError::Invalid(e.to_string()))?;
    FeatureMatrix::new(x, labels).map_err(|e| FormatError::Invalid(e.to_string()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Reads the CSV dialect: comma-separated values, '.' decimal, optional
/// first line `# d=<cols>[,labeled]`. With the `labeled` flag the last
/// column is a class index.
pub fn read_csv(path: &Path, k: usize) -> Result<FeatureMatrix> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let mut d: Option<usize> = None;
    let mut labeled = false;
    let mut first_data: Option<(usize, String)> = None;
    if let Some(first) = lines.next() {
        let first = first?;
        if let Some(rest) = first.trim().strip_prefix('#') {
            let rest = rest.trim();
            let mut parts = rest.split(',').map(str::trim);
            match parts.next() {
                Some(spec) if spec.starts_with("d=") => {
                    d = Some(spec[2..].parse().map_err(|_| FormatError::Parse {
                        line: 1,
                        msg: "bad d= value".into(),
                    })?);
                }
                _ => return Err(FormatError::Parse { line: 1, msg: "expected d=<cols>".into() }),
            }
            match parts.next() {
                None => {}
                Some("labeled") => labeled = true,
                Some(other) => {
                    return Err(FormatError::Parse { line: 1, msg: format!("unknown flag {other}") })
                }
            }
        } else {
            first_data = Some((1, first));
        }
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut nrows = 0;
    let mut parse_row = |line_no: usize, line: &str| -> Result<()> {
        let line = line.trim();
        if line.is_empty() {
            return Ok(());
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let ncols = fields.len() - labeled as usize;
        let expect = *d.get_or_insert(ncols);
        if ncols != expect {
            return Err(FormatError::RaggedRow(line_no));
        }
        for f in &fields[..ncols] {
            let v: f64 = f
                .parse()
                .map_err(|_| FormatError::Parse { line: line_no, msg: format!("bad number {f}") })?;
            if !v.is_finite() {
                return Err(FormatError::NonFinite(line_no));
            }
            data.push(v);
        }
        if labeled {
            let y: usize = fields[ncols].parse().map_err(|_| FormatError::Parse {
                line: line_no,
                msg: "bad label".into(),
            })?;
            if y >= k {
                return Err(FormatError::LabelOutOfRange(line_no));
            }
            labels.push(y);
        }
        nrows += 1;
        Ok(())
    };
    if let Some((line_no, line)) = first_data {
        parse_row(line_no, &line)?;
    }
    for (i, line) in lines.enumerate() {
        parse_row(i + 2, &line?)?;
    }
    let cols = d.ok_or_else(|| FormatError::Invalid("empty csv".into()))?;
    let x = Mat::from_vec(nrows, cols, data).map_err(|e| FormatError::Invalid(e.to_string()))?;
    FeatureMatrix::new(x, labeled.then_some(labels)).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn write_csv(path: &Path, fm: &FeatureMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let labeled = fm.labels().is_some();
    writeln!(w, "# d={}{}", fm.dim(), if labeled { ",labeled" } else { "" })?;
    for i in 0..fm.n() {
        let row: Vec<String> = fm.row(i).iter().map(|v| format!("{v}")).collect();
        write!(w, "{}", row.join(","))?;
        if let Some(labels) = fm.labels() {
            write!(w, ",{}", labels[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Metadata written next to a weight checkpoint as `<path>.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub d: usize,
    pub k: usize,
    pub command: String,
    pub objective: String,
    pub seed: u64,
}

/// Writes NDW1: magic, u32 d, u32 K, then d*K little-endian f64 weights in
/// column-major order, plus the JSON sidecar.
pub fn write_checkpoint(path: &Path, m: &LinearClassifier, meta: &CheckpointMeta) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(WEIGHT_MAGIC)?;
    w.write_all(&(m.dim() as u32).to_le_bytes())?;
    w.write_all(&(m.k() as u32).to_le_bytes())?;
    for col in 0..m.k() {
        for row in 0..m.dim() {
            w.write_all(&m.weights()[(row, col)].to_le_bytes())?;
        }
    }
    let sidecar = path.with_extension(sidecar_extension(path));
    serde_json::to_writer_pretty(BufWriter::new(File::create(sidecar)?), meta)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(LinearClassifier, CheckpointMeta)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHT_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let d = read_u32(&mut r)? as usize;
    let k = read_u32(&mut r)? as usize;
    let mut w = Mat::zeros(d, k);
    let mut buf = [0u8; 8];
    for col in 0..k {
        for row in 0..d {
            r.read_exact(&mut buf)?;
            w[(row, col)] = f64::from_le_bytes(buf);
        }
    }
    let model = LinearClassifier::new(w).map_err(|e| FormatError::Invalid(e.to_string()))?;
    let sidecar = path.with_extension(sidecar_extension(path));
    let meta: CheckpointMeta = serde_json::from_reader(BufReader::new(File::open(sidecar)?))?;
    Ok((model, meta))
}

fn sidecar_extension(path: &Path) -> String {
    match path.extension() {
        Some(ext) => format!("{}.json", ext.to_string_lossy()),
        None => "json".into(),
    }
}
