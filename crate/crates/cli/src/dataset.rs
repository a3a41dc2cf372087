//! Readers for libsvm, CSV and IDX files. Each returns the whole feature set
//! as a single block; the experiment repartitions it across parties.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use revelight::models::{DenseDataset, PartitionedDataset};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Libsvm,
    Csv,
    Idx,
}

impl FromStr for DataFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "libsvm" | "svmlight" => Ok(DataFormat::Libsvm),
            "csv" => Ok(DataFormat::Csv),
            "idx" => Ok(DataFormat::Idx),
            other => Err(format!("unknown data format `{other}` (libsvm, csv or idx)")),
        }
    }
}

impl DataFormat {
    pub fn guess(path: &str) -> Option<Self> {
        let lower = path.to_ascii_lowercase();
        if lower.ends_with(".csv") {
            Some(DataFormat::Csv)
        } else if lower.contains("idx") || lower.ends_with("-ubyte") {
            Some(DataFormat::Idx)
        } else if lower.ends_with(".libsvm") || lower.ends_with(".svm") || lower.ends_with(".txt") {
            Some(DataFormat::Libsvm)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadOptions {
    /// Declared feature count; libsvm indices beyond it are errors.
    pub dim: Option<usize>,
    /// IDX label file; derived from the image file name when absent.
    pub labels: Option<PathBuf>,
}

pub fn load_dataset(path: &Path, format: DataFormat, opts: &LoadOptions) -> CliResult<PartitionedDataset> {
    let dense = match format {
        DataFormat::Libsvm => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_libsvm(&text, opts.dim, &path.display().to_string())?
        }
        DataFormat::Csv => {
            let text = fs::read(path).map_err(|e| CliError::io(path, e))?;
            parse_csv(&text, &path.display().to_string())?
        }
        DataFormat::Idx => {
            let images = fs::read(path).map_err(|e| CliError::io(path, e))?;
            let label_path = match &opts.labels {
                Some(p) => p.clone(),
                None => idx_label_path(path).ok_or_else(|| CliError::Format {
                    path: path.display().to_string(),
                    reason: "cannot derive the label file name; set `labels`".into(),
                })?,
            };
            let labels = fs::read(&label_path).map_err(|e| CliError::io(&label_path, e))?;
            parse_idx(&images, &labels, &path.display().to_string())?
        }
    };
    Ok(dense.partition(1)?)
}

fn label_of(tok: &str, path: &str, line: usize) -> CliResult<i32> {
    let v: f64 = tok
        .parse()
        .map_err(|_| CliError::Parse { path: path.into(), line, reason: format!("label `{tok}` is not a number") })?;
    if v.fract() != 0.0 || v.abs() > i32::MAX as f64 {
        return Err(CliError::Parse { path: path.into(), line, reason: format!("label `{tok}` is not an integer") });
    }
    Ok(v as i32)
}

/// `label idx:val ...` with 1-based indices. Without a declared `dim` the
/// largest index seen sets it.
pub fn parse_libsvm(text: &str, dim: Option<usize>, path: &str) -> CliResult<DenseDataset> {
    let mut rows: Vec<(i32, Vec<(usize, f64)>)> = Vec::new();
    let mut widest = 0;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        let label = label_of(toks.next().unwrap_or(""), path, line)?;
        let mut entries = Vec::new();
        for tok in toks {
            let bad = |reason: String| CliError::Parse { path: path.into(), line, reason };
            let (i, v) = tok.split_once(':').ok_or_else(|| bad(format!("expected `index:value`, got `{tok}`")))?;
            let i: usize = i.parse().map_err(|_| bad(format!("bad feature index `{i}`")))?;
            let v: f64 = v.parse().map_err(|_| bad(format!("bad feature value `{v}`")))?;
            if i == 0 {
                return Err(bad("feature indices start at 1".into()));
            }
            if let Some(d) = dim {
                if i > d {
                    return Err(bad(format!("feature index {i} exceeds the declared dimension {d}")));
                }
            }
            widest = widest.max(i);
            entries.push((i - 1, v));
        }
        rows.push((label, entries));
    }
    let d = dim.unwrap_or(widest);
    if rows.is_empty() || d == 0 {
        return Err(CliError::Format { path: path.into(), reason: "no samples or no features".into() });
    }
    let mut features = vec![0.0; rows.len() * d];
    let mut labels = Vec::with_capacity(rows.len());
    for (r, (label, entries)) in rows.into_iter().enumerate() {
        for (j, v) in entries {
            features[r * d + j] = v;
        }
        labels.push(label);
    }
    Ok(DenseDataset::new(d, features, labels)?)
}

/// Numeric rows, label in the last column. A first row that does not parse
/// as numbers is taken as a header.
pub fn parse_csv(bytes: &[u8], path: &str) -> CliResult<DenseDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(bytes);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Parse { path: path.into(), line: k + 1, reason: e.to_string() })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(k + 1);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let bad = |reason: String| CliError::Parse { path: path.into(), line, reason };
        let values: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if k == 0 => continue,
            Err(_) => return Err(bad("non-numeric field".into())),
        };
        if values.len() < 2 {
            return Err(bad("need at least one feature and a label".into()));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => return Err(bad(format!("{} columns, expected {w}", values.len()))),
            _ => {}
        }
        let (label, x) = values.split_last().unwrap();
        labels.push(label_of(&label.to_string(), path, line)?);
        features.extend_from_slice(x);
    }
    let Some(w) = width else {
        return Err(CliError::Format { path: path.into(), reason: "no data rows".into() });
    };
    Ok(DenseDataset::new(w - 1, features, labels)?)
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// `train-images-idx3-ubyte` pairs with `train-labels-idx1-ubyte`.
pub fn idx_label_path(images: &Path) -> Option<PathBuf> {
    let name = images.file_name()?.to_str()?;
    if !name.contains("images-idx3") {
        return None;
    }
    Some(images.with_file_name(name.replace("images-idx3", "labels-idx1")))
}

/// Big-endian IDX image and label files, pixels scaled to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8], path: &str) -> CliResult<DenseDataset> {
    let fmt = |reason: String| CliError::Format { path: path.into(), reason };
    let magic = be_u32(images, 0).ok_or_else(|| fmt("file too short for an IDX header".into()))?;
    if magic != IDX_IMAGES {
        return Err(fmt(format!("IDX image magic {magic:#010x}, expected {IDX_IMAGES:#010x}")));
    }
    let lmagic = be_u32(labels, 0).ok_or_else(|| fmt("label file too short for an IDX header".into()))?;
    if lmagic != IDX_LABELS {
        return Err(fmt(format!("IDX label magic {lmagic:#010x}, expected {IDX_LABELS:#010x}")));
    }
    let header = |b: &[u8], at: usize| be_u32(b, at).map(|v| v as usize).ok_or_else(|| fmt("truncated IDX header".into()));
    let (n, rows, cols) = (header(images, 4)?, header(images, 8)?, header(images, 12)?);
    let ln = header(labels, 4)?;
    if ln != n {
        return Err(fmt(format!("{n} images but {ln} labels")));
    }
    let d = rows * cols;
    let pixels = images.get(16..16 + n * d).ok_or_else(|| fmt("image data shorter than its header declares".into()))?;
    let ys = labels.get(8..8 + n).ok_or_else(|| fmt("label data shorter than its header declares".into()))?;
    let features = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Ok(DenseDataset::new(d, features, ys.iter().map(|&y| y as i32).collect())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn libsvm_line() {
        let d = parse_libsvm("+1 1:0.5 3:2\n-1 2:1\n", Some(3), "t").unwrap();
        assert_eq!(d.row(0), &[0.5, 0.0, 2.0]);
        assert_eq!(d.labels(), &[1, -1]);
        let d = parse_libsvm("0 4:1\n", None, "t").unwrap();
        assert_eq!(d.dim(), 4);
    }

    #[test]
    fn libsvm_errors_name_the_line() {
        let err = parse_libsvm("1 1:1\n1 5:1\n", Some(3), "f.svm").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("line 2"));
        assert!(matches!(parse_libsvm("1 0:1\n", None, "f"), Err(CliError::Parse { line: 1, .. })));
        assert!(matches!(parse_libsvm("\nx 1:1\n", None, "f"), Err(CliError::Parse { line: 2, .. })));
        assert!(matches!(parse_libsvm("1 1-1\n", None, "f"), Err(CliError::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_label_last_and_header() {
        let d = parse_csv(b"a,b,y\n1,2,1\n3,4,-1\n", "t").unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.row(1), &[3.0, 4.0]);
        assert_eq!(d.labels(), &[1, -1]);
        let err = parse_csv(b"1,2,1\n3,1\n", "t").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 2, .. }), "{err}");
        assert!(matches!(parse_csv(b"1,2,1\n3,x,1\n", "t"), Err(CliError::Parse { line: 2, .. })));
    }

    fn idx_pair(n: usize) -> (Vec<u8>, Vec<u8>) {
        let mut img = IDX_IMAGES.to_be_bytes().to_vec();
        for v in [n as u32, 2, 2] {
            img.extend(v.to_be_bytes());
        }
        img.extend((0..n * 4).map(|k| (k * 17 % 256) as u8));
        let mut lab = IDX_LABELS.to_be_bytes().to_vec();
        lab.extend((n as u32).to_be_bytes());
        lab.extend((0..n).map(|k| k as u8));
        (img, lab)
    }

    #[test]
    fn idx_pair_loads() {
        let (img, lab) = idx_pair(3);
        let d = parse_idx(&img, &lab, "t").unwrap();
        assert_eq!((d.n(), d.dim()), (3, 4));
        assert_eq!(d.row(0)[1], 17.0 / 255.0);
        assert_eq!(d.labels(), &[0, 1, 2]);
    }

    #[test]
    fn idx_magic_and_length_checks() {
        let (mut img, lab) = idx_pair(2);
        img[3] = 0x01;
        assert!(matches!(parse_idx(&img, &lab, "t"), Err(CliError::Format { .. })));
        let (img, lab) = idx_pair(2);
        assert!(parse_idx(&img[..20], &lab, "t").is_err());
        assert!(parse_idx(&img, &lab[..4], "t").is_err());
        assert_eq!(
            idx_label_path(Path::new("/d/train-images-idx3-ubyte")).unwrap(),
            PathBuf::from("/d/train-labels-idx1-ubyte")
        );
    }

    #[test]
    fn formats() {
        assert_eq!("csv".parse::<DataFormat>().unwrap(), DataFormat::Csv);
        assert!("parquet".parse::<DataFormat>().is_err());
        assert_eq!(DataFormat::guess("x/a9a.txt"), Some(DataFormat::Libsvm));
        assert_eq!(DataFormat::guess("t10k-images-idx3-ubyte"), Some(DataFormat::Idx));
    }
}
