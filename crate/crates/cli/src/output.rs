//! Output plumbing: optional provenance line, matrix CSVs, and all-or-nothing file writes.

use std::fmt::Write as _;
use std::path::Path;

/// First line of every output file unless `--no-meta` is given. Contains a timestamp, so
/// reruns differ only in this line.
pub fn meta_line(command: &str, seed: Option<u64>) -> String {
    let mut s = format!("nvpol {} {command}", env!("CARGO_PKG_VERSION"));
    if let Some(seed) = seed {
        let _ = write!(s, " seed={seed}");
    }
    let _ = write!(
        s,
        " generated={}",
        chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ")
    );
    s
}

/// Writes `bytes` to `path` only after the whole payload exists, so a failed command
/// leaves no partial file behind.
pub fn write_file(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)
}

/// One named matrix over a (row, column) grid.
pub struct Matrix<'a> {
    pub quantity: &'a str,
    pub values: Vec<Vec<Option<f64>>>,
}

/// Matrix CSV: header `quantity,<row>\<column>,c_1,...,c_m`, then one line per row value
/// and quantity. Missing cells are empty.
pub fn matrix_csv(
    meta: Option<&str>,
    row_label: &str,
    row_values: &[f64],
    column_label: &str,
    column_values: &[f64],
    matrices: &[Matrix],
) -> String {
    let mut out = String::new();
    if let Some(m) = meta {
        let _ = writeln!(out, "# {m}");
    }
    let _ = write!(out, "quantity,{row_label}\\{column_label}");
    for c in column_values {
        let _ = write!(out, ",{c}");
    }
    out.push('\n');
    for m in matrices {
        for (r, row) in row_values.iter().zip(&m.values) {
            let _ = write!(out, "{},{r}", m.quantity);
            for v in row {
                match v {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
    }
    out
}

pub fn dense(values: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    values
        .iter()
        .map(|r| r.iter().map(|&v| Some(v)).collect())
        .collect()
}
