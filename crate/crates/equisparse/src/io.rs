//! File formats shared by the command-line tools: RFC-4180 CSV for
//! vectors and matrices, tab-separated tree files, JSON reports with
//! stable key order, and content digests for run manifests.
//!
//! Vectors are one value per line with no header.  Matrices may carry an
//! optional header row naming the columns.  Every numeric read rejects
//! NaN and infinity, naming the file, line, and column.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tree::{parse_tree, Tree};

fn parse_number(path: &Path, line: usize, col: usize, field: &str) -> Result<f64> {
    let trimmed = field.trim();
    let value: f64 = trimmed.parse().map_err(|_| Error::InputFormat {
        path: path.display().to_string(),
        line,
        msg: format!("cannot parse `{trimmed}` as a number (column {col})"),
    })?;
    if !value.is_finite() {
        return Err(Error::InputFormat {
            path: path.display().to_string(),
            line,
            msg: format!("non-finite value `{trimmed}` (column {col})"),
        });
    }
    Ok(value)
}

fn csv_records(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::InputFormat {
            path: path.display().to_string(),
            line: out.len() + 1,
            msg: e.to_string(),
        })?;
        out.push(record.iter().map(|s| s.to_string()).collect());
    }
    Ok(out)
}

/// Reads a headerless single-column CSV as a vector.
pub fn read_vector(path: &Path) -> Result<Array1<f64>> {
    let records = csv_records(path)?;
    if records.is_empty() {
        return Err(Error::InputFormat {
            path: path.display().to_string(),
            line: 1,
            msg: "empty vector file".into(),
        });
    }
    let mut values = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != 1 {
            return Err(Error::InputFormat {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected one value per line, found {}", rec.len()),
            });
        }
        values.push(parse_number(path, i + 1, 1, &rec[0])?);
    }
    Ok(Array1::from_vec(values))
}

/// Writes a vector as a headerless single-column CSV.
pub fn write_vector(path: &Path, v: &Array1<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for x in v.iter() {
        w.write_record([format!("{x}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a rectangular CSV matrix; `has_header` consumes the first row as
/// column names.
pub fn read_matrix(path: &Path, has_header: bool) -> Result<(Array2<f64>, Option<Vec<String>>)> {
    let mut records = csv_records(path)?;
    let mut names = None;
    let mut first_data_line = 1usize;
    if has_header {
        if records.is_empty() {
            return Err(Error::InputFormat {
                path: path.display().to_string(),
                line: 1,
                msg: "missing header row".into(),
            });
        }
        names = Some(records.remove(0));
        first_data_line = 2;
    }
    if records.is_empty() {
        return Err(Error::InputFormat {
            path: path.display().to_string(),
            line: first_data_line,
            msg: "no data rows".into(),
        });
    }
    let width = records[0].len();
    if let Some(n) = &names {
        if n.len() != width {
            return Err(Error::InputFormat {
                path: path.display().to_string(),
                line: 1,
                msg: format!("header has {} names for {width} columns", n.len()),
            });
        }
    }
    let mut data = Vec::with_capacity(records.len() * width);
    for (i, rec) in records.iter().enumerate() {
        let line = first_data_line + i;
        if rec.len() != width {
            return Err(Error::InputFormat {
                path: path.display().to_string(),
                line,
                msg: format!("expected {width} columns, found {}", rec.len()),
            });
        }
        for (c, field) in rec.iter().enumerate() {
            data.push(parse_number(path, line, c + 1, field)?);
        }
    }
    let rows = records.len();
    let x = Array2::from_shape_vec((rows, width), data)
        .expect("dimensions checked above");
    Ok((x, names))
}

/// Writes a matrix as CSV, with an optional header row of column names.
pub fn write_matrix(path: &Path, x: &Array2<f64>, header: Option<&[String]>) -> Result<()> {
    if let Some(names) = header {
        if names.len() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} columns but header names {}",
                x.ncols(),
                names.len()
            )));
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    if let Some(names) = header {
        w.write_record(names)?;
    }
    for row in x.rows() {
        w.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a tree from its tab-separated description (`id`, `parent`, and
/// leaf column, with `-` for "none").
pub fn read_tree_file(path: &Path) -> Result<Tree> {
    let text = fs::read_to_string(path)?;
    parse_tree(&text).map_err(|e| match e {
        Error::TreeFormat { line, msg } => Error::InputFormat {
            path: path.display().to_string(),
            line,
            msg,
        },
        other => other,
    })
}

/// Writes a tree in the same tab-separated format `read_tree_file` reads.
pub fn write_tree_file(path: &Path, tree: &Tree) -> Result<()> {
    fs::write(path, tree.to_tsv())?;
    Ok(())
}

/// Serializes a value as pretty JSON with a trailing newline.  Key order
/// follows struct declaration order, so output is byte-stable.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Hex-encoded SHA-256 digest of a file's bytes.
pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().expect("temp dir")
    }

    #[test]
    fn vector_round_trip_and_formats() {
        let dir = tmp();
        let path = dir.path().join("v.csv");
        let v = array![1.5, -2.0, 0.0, 1e-7, 3.0e12, 0.1 + 0.2];
        write_vector(&path, &v).unwrap();
        let back = read_vector(&path).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn vector_errors_name_file_and_line() {
        let dir = tmp();
        let path = dir.path().join("v.csv");
        fs::write(&path, "1.0\nNaN\n3.0\n").unwrap();
        let err = read_vector(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("v.csv"), "{msg}");
        assert!(msg.contains(":2:"), "{msg}");

        fs::write(&path, "1.0\ninf\n").unwrap();
        assert!(read_vector(&path).is_err());

        fs::write(&path, "1.0,2.0\n").unwrap();
        let err = read_vector(&path).unwrap_err();
        assert!(err.to_string().contains("one value per line"));

        fs::write(&path, "").unwrap();
        assert!(read_vector(&path).is_err());
    }

    #[test]
    fn matrix_round_trip_with_and_without_header() {
        let dir = tmp();
        let path = dir.path().join("m.csv");
        let x = array![[1.0, 2.5], [-3.0, 4.0], [0.125, 6.0]];
        write_matrix(&path, &x, None).unwrap();
        let (back, names) = read_matrix(&path, false).unwrap();
        assert_eq!(back, x);
        assert!(names.is_none());

        let header = vec!["plain".to_string(), "with, comma".to_string()];
        write_matrix(&path, &x, Some(&header)).unwrap();
        let (back2, names2) = read_matrix(&path, true).unwrap();
        assert_eq!(back2, x);
        assert_eq!(names2.unwrap(), header);
        // The comma-bearing name is quoted on disk per RFC 4180.
        let raw = fs::read_to_string(&path).unwrap();
        assert!(raw.starts_with("plain,\"with, comma\""), "{raw}");
    }

    #[test]
    fn matrix_rejects_ragged_and_nonfinite() {
        let dir = tmp();
        let path = dir.path().join("m.csv");
        fs::write(&path, "1.0,2.0\n3.0\n").unwrap();
        let err = read_matrix(&path, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "{msg}");
        assert!(msg.contains("expected 2 columns"), "{msg}");

        fs::write(&path, "1.0,2.0\n3.0,-inf\n").unwrap();
        let err = read_matrix(&path, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "{msg}");
        assert!(msg.contains("column 2"), "{msg}");

        fs::write(&path, "a,b\n1.0,2.0\n").unwrap();
        assert!(read_matrix(&path, false).is_err());
        assert!(read_matrix(&path, true).is_ok());
    }

    #[test]
    fn tree_file_round_trip_and_error_position() {
        use crate::tree::tests::example7;
        let dir = tmp();
        let path = dir.path().join("t.tsv");
        let t = example7();
        write_tree_file(&path, &t).unwrap();
        let back = read_tree_file(&path).unwrap();
        assert_eq!(back.to_tsv(), t.to_tsv());

        fs::write(&path, "id\tparent\tcol\nb1\t-\tnotanumber\n").unwrap();
        let err = read_tree_file(&path).unwrap_err();
        assert!(err.to_string().contains("t.tsv"), "{err}");
    }

    #[test]
    fn digest_matches_known_value() {
        let dir = tmp();
        let path = dir.path().join("hello.txt");
        fs::write(&path, "hello\n").unwrap();
        assert_eq!(
            sha256_hex(&path).unwrap(),
            "5891b5b522d5df086d0ff0b110fbd9d21bb4fc7163af34d08286a2e846f6be03"
        );
    }

    #[test]
    fn json_output_is_byte_stable() {
        #[derive(serde::Serialize)]
        struct Demo {
            zeta: f64,
            alpha: u32,
            name: String,
        }
        let dir = tmp();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        let demo = Demo {
            zeta: 0.5,
            alpha: 3,
            name: "x".into(),
        };
        write_json(&a, &demo).unwrap();
        write_json(&b, &demo).unwrap();
        let first = fs::read(&a).unwrap();
        assert_eq!(first, fs::read(&b).unwrap());
        // Declaration order is preserved; keys are not sorted.
        let text = String::from_utf8(first).unwrap();
        let zeta_pos = text.find("zeta").unwrap();
        let alpha_pos = text.find("alpha").unwrap();
        assert!(zeta_pos < alpha_pos);
        assert!(text.ends_with('\n'));
    }
}
