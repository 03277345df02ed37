//! Small CSV reading/writing helpers for the point, trajectory, and weighted
//! point-cloud files the subcommands exchange.
//!
//! All files are plain numeric CSV. Floats are written with Rust's shortest
//! round-trip formatting so that writing and re-reading a file reproduces the
//! original values bit for bit. Readers accept an optional header line and
//! ignore blank lines.

use crate::error::CliError;
use ndarray::{Array2, Array3};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Header used by two-column point files.
pub const POINTS_HEADER: &str = "x,y";
/// Header used by trajectory files; `slice` is the time index `0..=T`.
pub const TRAJECTORY_HEADER: &str = "slice,x,y";

/// Write an `n x 2` array of points as `x,y` rows.
pub fn write_points(path: &Path, points: &Array2<f64>) -> Result<(), CliError> {
    if points.ncols() != 2 && points.nrows() > 0 {
        return Err(CliError::Config(format!(
            "point array must have 2 columns, got {}",
            points.ncols()
        )));
    }
    let mut out = String::with_capacity(16 * points.nrows() + 8);
    out.push_str(POINTS_HEADER);
    out.push('\n');
    for row in points.rows() {
        writeln!(out, "{:?},{:?}", row[0], row[1]).expect("string write");
    }
    fs::write(path, out).map_err(|e| CliError::io(&format!("write {}", path.display()), e))
}

/// Write a `(T+1) x n x 2` state stack as `slice,x,y` rows grouped by slice.
pub fn write_trajectory(path: &Path, states: &Array3<f64>) -> Result<(), CliError> {
    let mut out = String::with_capacity(24 * states.len() / 2 + 8);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for (slice, plane) in states.outer_iter().enumerate() {
        for row in plane.rows() {
            writeln!(out, "{slice},{:?},{:?}", row[0], row[1]).expect("string write");
        }
    }
    fs::write(path, out).map_err(|e| CliError::io(&format!("write {}", path.display()), e))
}

/// A parsed numeric CSV table: optional header names plus uniform-width rows.
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn ncols(&self) -> usize {
        self.rows
            .first()
            .map(|r| r.len())
            .or_else(|| self.header.as_ref().map(|h| h.len()))
            .unwrap_or(0)
    }
}

/// Read a numeric CSV file. The first line is treated as a header when any of
/// its fields fails to parse as a number.
pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::io(&format!("read {}", path.display()), e))?;
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(nums) => {
                if let Some(first) = rows.first() {
                    if nums.len() != first.len() {
                        return Err(CliError::Config(format!(
                            "{}:{}: expected {} fields, got {}",
                            path.display(),
                            lineno + 1,
                            first.len(),
                            nums.len()
                        )));
                    }
                }
                rows.push(nums);
            }
            Err(_) if lineno == 0 && header.is_none() => {
                header = Some(fields.into_iter().map(String::from).collect());
            }
            Err(e) => {
                return Err(CliError::Config(format!(
                    "{}:{}: {e}",
                    path.display(),
                    lineno + 1
                )));
            }
        }
    }
    Ok(Table { header, rows })
}

/// Read a two-column point file into an `n x 2` array.
pub fn read_points(path: &Path) -> Result<Array2<f64>, CliError> {
    let table = read_table(path)?;
    if !table.rows.is_empty() && table.ncols() != 2 {
        return Err(CliError::Config(format!(
            "{}: expected 2 columns (x,y), got {}",
            path.display(),
            table.ncols()
        )));
    }
    let mut out = Array2::zeros((table.rows.len(), 2));
    for (i, row) in table.rows.iter().enumerate() {
        out[[i, 0]] = row[0];
        out[[i, 1]] = row[1];
    }
    Ok(out)
}

/// Read a point cloud with optional per-point weights: `x,y` or `x,y,weight`
/// rows. Missing weights mean a uniform distribution.
pub fn read_weighted_points(path: &Path) -> Result<(Array2<f64>, Vec<f64>), CliError> {
    let table = read_table(path)?;
    if table.rows.is_empty() {
        return Err(CliError::Config(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let ncols = table.ncols();
    if ncols != 2 && ncols != 3 {
        return Err(CliError::Config(format!(
            "{}: expected 2 or 3 columns (x,y[,weight]), got {ncols}",
            path.display()
        )));
    }
    let n = table.rows.len();
    let mut support = Array2::zeros((n, 2));
    let mut weights = vec![1.0; n];
    for (i, row) in table.rows.iter().enumerate() {
        support[[i, 0]] = row[0];
        support[[i, 1]] = row[1];
        if ncols == 3 {
            weights[i] = row[2];
        }
    }
    Ok((support, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::path::PathBuf;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("sbridge-csvio-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn points_round_trip_is_bitwise() {
        let pts = array![
            [0.1, -2.5e-7],
            [f64::MIN_POSITIVE, 1.0 / 3.0],
            [-123456.789, 9.87e307]
        ];
        let path = tmp("roundtrip.csv");
        write_points(&path, &pts).unwrap();
        let back = read_points(&path).unwrap();
        assert_eq!(pts, back);
    }

    #[test]
    fn empty_points_file_has_header_only() {
        let path = tmp("empty.csv");
        write_points(&path, &Array2::zeros((0, 2))).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "x,y\n");
        let back = read_points(&path).unwrap();
        assert_eq!(back.nrows(), 0);
    }

    #[test]
    fn trajectory_groups_by_slice() {
        let states =
            Array3::from_shape_vec((2, 2, 2), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
                .unwrap();
        let path = tmp("traj.csv");
        write_trajectory(&path, &states).unwrap();
        let table = read_table(&path).unwrap();
        assert_eq!(
            table.header.as_deref(),
            Some(&["slice".to_string(), "x".to_string(), "y".to_string()][..])
        );
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.rows[0], vec![0.0, 0.0, 1.0]);
        assert_eq!(table.rows[3], vec![1.0, 6.0, 7.0]);
    }

    #[test]
    fn headerless_numeric_file_is_accepted() {
        let path = tmp("noheader.csv");
        fs::write(&path, "1.5,2.5\n3.5,4.5\n").unwrap();
        let pts = read_points(&path).unwrap();
        assert_eq!(pts, array![[1.5, 2.5], [3.5, 4.5]]);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let path = tmp("ragged.csv");
        fs::write(&path, "x,y\n1,2\n1,2,3\n").unwrap();
        let err = read_points(&path).unwrap_err();
        assert!(matches!(err, CliError::Config(_)), "{err}");
        assert!(err.to_string().contains(":3:"), "{err}");
    }

    #[test]
    fn garbage_mid_file_is_rejected_with_line_number() {
        let path = tmp("garbage.csv");
        fs::write(&path, "x,y\n1,2\nfoo,bar\n").unwrap();
        let err = read_points(&path).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
    }

    #[test]
    fn weighted_points_default_to_uniform() {
        let path = tmp("weighted.csv");
        fs::write(&path, "x,y\n0,0\n1,1\n").unwrap();
        let (support, weights) = read_weighted_points(&path).unwrap();
        assert_eq!(support.nrows(), 2);
        assert_eq!(weights, vec![1.0, 1.0]);

        let path3 = tmp("weighted3.csv");
        fs::write(&path3, "x,y,weight\n0,0,0.25\n1,1,0.75\n").unwrap();
        let (_, weights3) = read_weighted_points(&path3).unwrap();
        assert_eq!(weights3, vec![0.25, 0.75]);
    }
}
