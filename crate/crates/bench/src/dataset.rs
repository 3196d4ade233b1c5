//! CSV datasets of binary32 feature rows.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: row {row} has {got} values, expected {expected}")]
    Width {
        path: String,
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("{path}: row {row}: cannot parse {value:?} as a number")]
    Value {
        path: String,
        row: usize,
        value: String,
    },
}

/// Reads feature rows. A first row that does not parse as numbers is taken
/// as a header and skipped.
pub fn read_csv(path: &Path) -> Result<Vec<Vec<f32>>, DatasetError> {
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| DatasetError::Csv {
            path: name.clone(),
            source,
        })?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|source| DatasetError::Csv {
            path: name.clone(),
            source,
        })?;
        let parsed: Result<Vec<f32>, _> = rec.iter().map(str::parse::<f32>).collect();
        match parsed {
            Ok(row) => {
                if let Some(first) = rows.first().map(Vec::len) {
                    if row.len() != first {
                        return Err(DatasetError::Width {
                            path: name,
                            row: i,
                            got: row.len(),
                            expected: first,
                        });
                    }
                }
                rows.push(row);
            }
            Err(_) if i == 0 => continue,
            Err(_) => {
                let value = rec
                    .iter()
                    .find(|v| v.parse::<f32>().is_err())
                    .unwrap_or_default()
                    .to_string();
                return Err(DatasetError::Value {
                    path: name,
                    row: i,
                    value,
                });
            }
        }
    }
    Ok(rows)
}

/// Writes rows with a `f0,f1,...` header. Values use the shortest
/// representation that reads back to the same binary32.
pub fn write_csv(path: &Path, rows: &[Vec<f32>]) -> Result<(), DatasetError> {
    let name = path.display().to_string();
    let err = |source| DatasetError::Csv {
        path: name.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    if let Some(first) = rows.first() {
        w.write_record((0..first.len()).map(|i| format!("f{i}")))
            .map_err(err)?;
    }
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(err)?;
    }
    w.flush().map_err(|e| err(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_specials() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let rows = vec![vec![0.1, -0.0, f32::INFINITY], vec![f32::NAN, 1e-40, 3.0]];
        write_csv(&p, &rows).unwrap();
        let back = read_csv(&p).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in rows.iter().flatten().zip(back.iter().flatten()) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(matches!(read_csv(&p), Err(DatasetError::Csv { .. } | DatasetError::Width { .. })));
        std::fs::write(&p, "a,b\n1,2\nx,3\n").unwrap();
        assert!(matches!(read_csv(&p), Err(DatasetError::Value { .. })));
    }
}
