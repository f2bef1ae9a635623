//! Dataset file formats.
//!
//! Matrix files are either the binary container (magic `ACMX`, version u32,
//! rows u64, cols u64, little-endian f32 payload) or a CSV fallback whose
//! first line is a `rows,cols` header. Labels are CSV lines
//! `instance_index,class_id`; the split is a JSON object of class sets and
//! index lists. Readers sniff the magic bytes, so either matrix form loads
//! through the same entry point.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ndcore::Matrix;

pub const MATRIX_MAGIC: [u8; 4] = *b"ACMX";
pub const MATRIX_VERSION: u32 = 1;

/// Writes a matrix in the binary container, values narrowed to f32.
pub fn write_matrix_acmx(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MATRIX_MAGIC)?;
    w.write_all(&MATRIX_VERSION.to_le_bytes())?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for &v in m.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the CSV fallback: a `rows,cols` header line, then one line per row.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{},{}", m.rows(), m.cols())?;
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a matrix file, sniffing the magic bytes to pick the format.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let mut f = File::open(&path)?;
    let mut magic = [0u8; 4];
    let n = f.read(&mut magic)?;
    if n == 4 && magic == MATRIX_MAGIC {
        load_matrix_acmx_body(f)
    } else {
        drop(f);
        load_matrix_csv(path)
    }
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    f.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(f: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    f.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn load_matrix_acmx_body(mut f: File) -> Result<Matrix> {
    let version = read_u32(&mut f)?;
    if version != MATRIX_VERSION {
        return Err(CoreError::UnsupportedVersion {
            found: version,
            supported: MATRIX_VERSION,
        });
    }
    let rows = read_u64(&mut f)? as usize;
    let cols = read_u64(&mut f)? as usize;
    let count = rows.checked_mul(cols).ok_or_else(|| CoreError::HeaderMismatch {
        detail: format!("{rows}x{cols} overflows"),
    })?;
    let mut bytes = vec![0u8; count * 4];
    f.read_exact(&mut bytes).map_err(|_| CoreError::HeaderMismatch {
        detail: format!("payload shorter than declared {rows}x{cols}"),
    })?;
    let mut trailing = [0u8; 1];
    if f.read(&mut trailing)? != 0 {
        return Err(CoreError::HeaderMismatch {
            detail: format!("payload longer than declared {rows}x{cols}"),
        });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| CoreError::Parse {
        line: 1,
        detail: "empty matrix file".into(),
    })??;
    let dims: Vec<&str> = header.trim().split(',').collect();
    if dims.len() != 2 {
        return Err(CoreError::Parse {
            line: 1,
            detail: format!("expected 'rows,cols' header, got '{header}'"),
        });
    }
    let parse_dim = |s: &str| {
        s.trim().parse::<usize>().map_err(|_| CoreError::Parse {
            line: 1,
            detail: format!("bad dimension '{s}'"),
        })
    };
    let rows = parse_dim(dims[0])?;
    let cols = parse_dim(dims[1])?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen_rows = 0usize;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        seen_rows += 1;
        let mut row_len = 0usize;
        for field in line.trim().split(',') {
            let v: f64 = field.trim().parse().map_err(|_| CoreError::Parse {
                line: i + 2,
                detail: format!("bad value '{field}'"),
            })?;
            data.push(v);
            row_len += 1;
        }
        if row_len != cols {
            return Err(CoreError::HeaderMismatch {
                detail: format!("row {} has {} values, header says {}", i + 2, row_len, cols),
            });
        }
    }
    if seen_rows != rows {
        return Err(CoreError::HeaderMismatch {
            detail: format!("{seen_rows} data rows, header says {rows}"),
        });
    }
    Matrix::from_vec(rows, cols, data)
}

/// Writes one `instance_index,class_id` line per instance.
pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (i, &c) in labels.iter().enumerate() {
        writeln!(w, "{i},{c}")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads labels, requiring every instance index in `[0, n)` exactly once.
pub fn load_labels(path: impl AsRef<Path>, num_instances: usize) -> Result<Vec<usize>> {
    let reader = BufReader::new(File::open(path)?);
    let mut labels = vec![usize::MAX; num_instances];
    let mut count = 0usize;
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parts: Vec<&str> = trimmed.split(',').collect();
        if parts.len() != 2 {
            return Err(CoreError::Parse {
                line: ln + 1,
                detail: format!("expected 'instance_index,class_id', got '{trimmed}'"),
            });
        }
        let idx: usize = parts[0].trim().parse().map_err(|_| CoreError::Parse {
            line: ln + 1,
            detail: format!("bad instance index '{}'", parts[0]),
        })?;
        let class: usize = parts[1].trim().parse().map_err(|_| CoreError::Parse {
            line: ln + 1,
            detail: format!("bad class id '{}'", parts[1]),
        })?;
        if idx >= num_instances {
            return Err(CoreError::HeaderMismatch {
                detail: format!("label for instance {idx}, but feature file has {num_instances} rows"),
            });
        }
        if labels[idx] != usize::MAX {
            return Err(CoreError::HeaderMismatch {
                detail: format!("duplicate label for instance {idx}"),
            });
        }
        labels[idx] = class;
        count += 1;
    }
    if count != num_instances {
        return Err(CoreError::HeaderMismatch {
            detail: format!("{count} labels for {num_instances} instances"),
        });
    }
    Ok(labels)
}

/// Seen/unseen class sets and evaluation index lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub seen_classes: Vec<usize>,
    pub unseen_classes: Vec<usize>,
    pub train_idx: Vec<usize>,
    pub test_seen_idx: Vec<usize>,
    pub test_unseen_idx: Vec<usize>,
}

pub fn write_split(path: impl AsRef<Path>, split: &SplitFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let json = serde_json::to_string_pretty(split).map_err(|e| CoreError::Parse {
        line: 0,
        detail: e.to_string(),
    })?;
    w.write_all(json.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_split(path: impl AsRef<Path>) -> Result<SplitFile> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CoreError::Parse {
        line: e.line(),
        detail: e.to_string(),
    })
}
