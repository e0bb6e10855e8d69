//! Loading observations from `PRSPAR01` arrays or headerless CSV.

use std::fs;
use std::path::Path;

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::io::array::{decode_array, is_array_bytes};
use crate::linalg::DenseMatrix;

/// Parses comma-separated rows of decimal numbers. Blank lines are skipped.
pub fn parse_csv(text: &str) -> Result<DenseMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {c} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("`{field}` is not finite"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    DenseMatrix::new(rows, cols.unwrap_or(0), data)
}

pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_array_bytes(&bytes) {
        return decode_array(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::data(format!("{} is neither PRSPAR01 nor UTF-8 CSV", path.display())))?;
    parse_csv(&text)
}

/// Loads an `N × D` dataset; its kind is inferred from the values.
pub fn load_dataset(path: &Path) -> Result<DataSet> {
    let y = load_matrix(path)?;
    if y.rows() == 0 || y.cols() == 0 {
        return Err(Error::data(format!("{} holds no data", path.display())));
    }
    Ok(DataSet::infer(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataKind;
    use crate::io::array::save_array;

    #[test]
    fn simple_csv() {
        let m = parse_csv("1,2\n3,4").unwrap();
        assert_eq!(m, DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    }

    #[test]
    fn whitespace_and_trailing_newline() {
        let m = parse_csv(" 1.5 , -2e3\n\n0,7\n").unwrap();
        assert_eq!(m.data(), &[1.5, -2000.0, 0.0, 7.0]);
    }

    #[test]
    fn ragged_row_reports_line() {
        match parse_csv("1,2\n3,4\n5\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line() {
        match parse_csv("1,2\n3,x\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sniffs_format() {
        let dir = tempfile::tempdir().unwrap();
        let m = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![3.0, 2.0]]).unwrap();
        let bin = dir.path().join("a.prsp");
        save_array(&bin, &m).unwrap();
        let csv = dir.path().join("a.csv");
        std::fs::write(&csv, "1,0\n3,2\n").unwrap();
        let a = load_dataset(&bin).unwrap();
        let b = load_dataset(&csv).unwrap();
        assert_eq!(a.y(), b.y());
        assert_eq!(a.kind(), DataKind::Count);
    }
}
