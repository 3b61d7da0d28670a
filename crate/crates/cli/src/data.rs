//! Reading typed columns from CSV files.

use std::io::Read;
use std::path::Path;

use mixedindep_core::MixedSample;

use crate::error::{CliError, CliResult};

/// Resolves a column given by header name, or by zero-based index when no
/// header matches.
fn resolve(headers: &csv::StringRecord, column: &str) -> CliResult<usize> {
    if let Some(i) = headers.iter().position(|h| h.trim() == column) {
        return Ok(i);
    }
    match column.parse::<usize>() {
        Ok(i) if i < headers.len() => Ok(i),
        _ => Err(CliError::Csv(format!("no column '{column}' in header"))),
    }
}

fn parse_continuous(cell: &str, line: u64, column: &str) -> CliResult<f64> {
    let value: f64 = cell.trim().parse().map_err(|_| {
        CliError::Csv(format!(
            "line {line}, column '{column}': '{cell}' is not a number"
        ))
    })?;
    if !value.is_finite() || value <= 0.0 {
        return Err(CliError::Cell {
            line,
            column: column.to_string(),
            message: format!("continuous values must be positive and finite, got {cell}"),
        });
    }
    Ok(value)
}

fn parse_count(cell: &str, line: u64, column: &str) -> CliResult<u64> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<u64>() {
        return Ok(v);
    }
    if cell.parse::<f64>().is_ok() {
        return Err(CliError::Cell {
            line,
            column: column.to_string(),
            message: format!("counts must be non-negative integers, got {cell}"),
        });
    }
    Err(CliError::Csv(format!(
        "line {line}, column '{column}': '{cell}' is not a number"
    )))
}

/// Parses comma-separated data with a header row into a sample with the
/// `x` columns as continuous and the `y` columns as counts.
pub fn parse_mixed_csv<R: Read>(reader: R, x: &[String], y: &[String]) -> CliResult<MixedSample> {
    if x.is_empty() || y.is_empty() {
        return Err(CliError::Usage(
            "need at least one continuous and one count column".into(),
        ));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Csv(e.to_string()))?
        .clone();
    let x_idx = x
        .iter()
        .map(|c| resolve(&headers, c))
        .collect::<CliResult<Vec<_>>>()?;
    let y_idx = y
        .iter()
        .map(|c| resolve(&headers, c))
        .collect::<CliResult<Vec<_>>>()?;
    let mut seen = std::collections::HashSet::new();
    for &i in x_idx.iter().chain(&y_idx) {
        if !seen.insert(i) {
            return Err(CliError::Usage(format!(
                "column '{}' is selected more than once",
                &headers[i]
            )));
        }
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| CliError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        for &i in &x_idx {
            xs.push(parse_continuous(&record[i], line, &headers[i])?);
        }
        for &i in &y_idx {
            ys.push(parse_count(&record[i], line, &headers[i])?);
        }
    }
    if ys.is_empty() {
        return Err(CliError::Csv("no data rows".into()));
    }
    Ok(MixedSample::from_flat(xs, ys, x_idx.len(), y_idx.len())?)
}

pub fn read_mixed_csv(path: &Path, x: &[String], y: &[String]) -> CliResult<MixedSample> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_mixed_csv(std::io::BufReader::new(file), x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn reads_named_and_indexed_columns() {
        let text = "id,temp,count\n1,0.5,3\n2,1.5,0\n";
        let s = parse_mixed_csv(text.as_bytes(), &cols(&["temp"]), &cols(&["2"])).unwrap();
        assert_eq!(s.n(), 2);
        assert_eq!(s.x_column(0), vec![0.5, 1.5]);
        assert_eq!(s.y_column(0), vec![3, 0]);
    }

    #[test]
    fn bad_cells_name_their_location() {
        let text = "temp,count\n0.5,3\n-1.0,2\n";
        match parse_mixed_csv(text.as_bytes(), &cols(&["temp"]), &cols(&["count"])) {
            Err(e @ CliError::Cell { line: 3, .. }) => {
                assert_eq!(e.exit_code(), 3);
                assert!(e.to_string().contains("'temp'"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "temp,count\n0.5,2.5\n";
        let err =
            parse_mixed_csv(text.as_bytes(), &cols(&["temp"]), &cols(&["count"])).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn structural_problems_are_malformed_input() {
        let ragged = "temp,count\n0.5,3\n0.7\n";
        let missing = "temp,count\n0.5,3\n";
        let text = "temp,count\n0.5,abc\n";
        for (data, x, y) in [
            (ragged, "temp", "count"),
            (missing, "wind", "count"),
            (text, "temp", "count"),
        ] {
            let err = parse_mixed_csv(data.as_bytes(), &cols(&[x]), &cols(&[y])).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{err}");
        }
        let err =
            parse_mixed_csv("a,b\n1,2\n".as_bytes(), &cols(&["a"]), &cols(&["a"])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
