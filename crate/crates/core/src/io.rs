//! Matrix CSV format, edge lists and atomic file output.
//!
//! Matrix CSV: optional `#` comment lines, then `rows,cols`, then one
//! comma-separated row per line. Values are written with 17 significant
//! digits so they parse back bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Formats a value with 17 significant digits (round-trip exact for f64).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes a matrix; `header` lines are emitted as `# ...` comments.
pub fn matrix_to_csv(m: &DenseMatrix, header: &[String]) -> String {
    let mut out = String::new();
    for line in header {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "{},{}", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<DenseMatrix> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (_, dims) = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let (rows, cols) = parse_dims(dims)?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (lineno, line) in lines {
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!("line {}: cannot parse '{}' as a number", lineno + 1, field.trim()))
            })?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::Parse(format!(
                "line {}: expected {cols} values, found {}",
                lineno + 1,
                data.len() - before
            )));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Parse(format!("expected {rows} rows, found {seen}")));
    }
    DenseMatrix::from_vec(rows, cols, data)
}

fn parse_dims(line: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = line.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::Parse(format!("expected 'rows,cols' header, found '{line}'")));
    }
    let r = parts[0].parse().map_err(|_| Error::Parse(format!("bad row count '{}'", parts[0])))?;
    let c = parts[1].parse().map_err(|_| Error::Parse(format!("bad column count '{}'", parts[1])))?;
    Ok((r, c))
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    matrix_from_csv(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_matrix(path: &Path, m: &DenseMatrix, header: &[String]) -> Result<()> {
    write_atomic(path, matrix_to_csv(m, header).as_bytes())
}

/// Parses `i,j,w` lines (0-indexed) into a symmetric weight matrix.
///
/// `n` defaults to one past the largest index seen. Repeated pairs keep the
/// last weight; self-loops are rejected.
pub fn edge_list_from_csv(text: &str, n: Option<usize>) -> Result<DenseMatrix> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(Error::Parse(format!("line {}: expected 'i,j,w'", lineno + 1)));
        }
        let bad = |what: &str| Error::Parse(format!("line {}: bad {what}", lineno + 1));
        let i: usize = f[0].parse().map_err(|_| bad("source index"))?;
        let j: usize = f[1].parse().map_err(|_| bad("target index"))?;
        let w: f64 = f[2].parse().map_err(|_| bad("weight"))?;
        if i == j {
            return Err(Error::Model(format!("line {}: self-loop on node {i}", lineno + 1)));
        }
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Model(format!("line {}: weight must be finite and >= 0", lineno + 1)));
        }
        edges.push((i, j, w));
    }
    let max_idx = edges.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0);
    let n = n.unwrap_or(max_idx);
    if max_idx > n {
        return Err(Error::Model(format!("edge index {} out of range for n = {n}", max_idx - 1)));
    }
    let mut w = DenseMatrix::zeros(n, n);
    for (i, j, v) in edges {
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    Ok(w)
}

/// Writes via a sibling temporary file and rename, so readers never see a
/// partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Model(format!("output path '{}' has no file name", path.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}
