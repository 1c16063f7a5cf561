//! CSV emission and ingestion. Outputs are RFC-4180-style with
//! `#`-prefixed metadata lines carrying provenance (config hash, seed).

use crate::sweep::RatesTable;
use ndarray::{Array1, Array2};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub type IoResult<T> = std::result::Result<T, std::io::Error>;

fn open_out(path: &Path) -> IoResult<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Shortest round-trip decimal rendering of an f64.
fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn write_rates_csv(
    path: &Path,
    table: &RatesTable,
    config_hash: &str,
    master_seed: u64,
) -> IoResult<()> {
    let mut w = open_out(path)?;
    writeln!(w, "# config_hash = {config_hash}")?;
    writeln!(w, "# master_seed = {master_seed}")?;
    writeln!(w, "# slope = {}", fmt(table.slope))?;
    writeln!(w, "# stderr = {}", fmt(table.stderr))?;
    writeln!(w, "n,m,k,eta1,eta2,err_median,err_mean,err_sd,reps")?;
    for p in &table.points {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            p.n,
            p.m,
            p.k,
            fmt(p.eta1),
            fmt(p.eta2),
            fmt(p.median),
            fmt(p.mean),
            fmt(p.sd),
            p.reps
        )?;
    }
    Ok(())
}

pub fn write_eigenvalues_csv(
    path: &Path,
    eigs: &Array1<f64>,
    slope: f64,
    meta: &[(&str, String)],
) -> IoResult<()> {
    let mut w = open_out(path)?;
    for (key, val) in meta {
        writeln!(w, "# {key} = {val}")?;
    }
    writeln!(w, "# slope = {}", fmt(slope))?;
    writeln!(w, "m,lambda")?;
    for (i, v) in eigs.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, fmt(*v))?;
    }
    Ok(())
}

pub fn write_gamma_csv(
    path: &Path,
    gamma: &Array1<f64>,
    pbar: usize,
    cond_q: f64,
    meta: &[(&str, String)],
) -> IoResult<()> {
    let mut w = open_out(path)?;
    for (key, val) in meta {
        writeln!(w, "# {key} = {val}")?;
    }
    writeln!(w, "# pbar = {pbar}")?;
    writeln!(w, "# cond_q = {}", fmt(cond_q))?;
    writeln!(w, "k,gamma")?;
    for (i, v) in gamma.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, fmt(*v))?;
    }
    Ok(())
}

/// Dense numeric matrix, one CSV row per matrix row, `#` lines allowed.
pub fn write_matrix_csv(path: &Path, a: &Array2<f64>, meta: &[(&str, String)]) -> IoResult<()> {
    let mut w = open_out(path)?;
    for (key, val) in meta {
        writeln!(w, "# {key} = {val}")?;
    }
    for row in a.rows() {
        let line: Vec<String> = row.iter().map(|v| fmt(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn write_vector_csv(path: &Path, v: &Array1<f64>, meta: &[(&str, String)]) -> IoResult<()> {
    let mut w = open_out(path)?;
    for (key, val) in meta {
        writeln!(w, "# {key} = {val}")?;
    }
    for x in v.iter() {
        writeln!(w, "{}", fmt(*x))?;
    }
    Ok(())
}

/// Parse a numeric CSV, skipping `#` comment lines and an optional
/// non-numeric header row.
pub fn read_matrix_csv(path: &Path) -> std::result::Result<Array2<f64>, String> {
    let file = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            trimmed.split(',').map(|t| t.trim().parse::<f64>()).collect();
        match parsed {
            Ok(vals) => {
                if let Some(first) = rows.first() {
                    if vals.len() != first.len() {
                        return Err(format!(
                            "{}:{}: ragged row ({} vs {} columns)",
                            path.display(),
                            lineno + 1,
                            vals.len(),
                            first.len()
                        ));
                    }
                }
                rows.push(vals);
            }
            Err(_) if rows.is_empty() => continue, // header row
            Err(e) => {
                return Err(format!("{}:{}: {e}", path.display(), lineno + 1));
            }
        }
    }
    if rows.is_empty() {
        return Err(format!("{}: no numeric rows", path.display()));
    }
    let (r, c) = (rows.len(), rows[0].len());
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((r, c), flat).map_err(|e| e.to_string())
}

pub fn read_vector_csv(path: &Path) -> std::result::Result<Array1<f64>, String> {
    let m = read_matrix_csv(path)?;
    if m.ncols() != 1 {
        return Err(format!(
            "{}: expected a single column, found {}",
            path.display(),
            m.ncols()
        ));
    }
    Ok(m.column(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matrix_round_trip_preserves_values() {
        let dir = std::env::temp_dir().join("funreg_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.csv");
        let a = array![[1.5, -2.25e-8], [0.1 + 0.2, 4.0]];
        write_matrix_csv(&path, &a, &[("seed", "7".into())]).unwrap();
        let b = read_matrix_csv(&path).unwrap();
        assert_eq!(a, b); // shortest round-trip formatting is exact
    }

    #[test]
    fn reader_rejects_ragged_rows() {
        let dir = std::env::temp_dir().join("funreg_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ragged.csv");
        std::fs::write(&path, "1,2,3\n4,5\n").unwrap();
        assert!(read_matrix_csv(&path).is_err());
    }
}
