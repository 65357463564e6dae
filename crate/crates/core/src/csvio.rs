//! CSV files with a leading ISO-8601 `timestamp` column and one column per variable.

use std::io::{Read, Write};

use chrono::{Duration, NaiveDateTime};
use thiserror::Error;

use crate::series::{DataError, TimeSeriesMatrix};
use crate::Scalar;

pub const TIMESTAMP_COLUMN: &str = "timestamp";
const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("first column must be `{TIMESTAMP_COLUMN}`")]
    MissingTimestamp,
    #[error("bad timestamp `{0}`")]
    BadTimestamp(String),
    #[error("bad number `{value}` in column `{column}`")]
    BadNumber { column: String, value: String },
    #[error("timestamps are not evenly spaced at row {0}")]
    UnevenSpacing(usize),
    #[error("row {0} has the wrong number of fields")]
    Ragged(usize),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Writes `series` with timestamps `start + k·resolution`.
pub fn write_series<T: Scalar, W: Write>(
    w: W,
    series: &TimeSeriesMatrix<T>,
    start: NaiveDateTime,
) -> Result<(), CsvError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![TIMESTAMP_COLUMN.to_string()];
    header.extend(series.variable_names().iter().cloned());
    out.write_record(&header)?;
    let step = Duration::minutes(series.resolution_minutes() as i64);
    for t in 0..series.len() {
        let ts = start + step * t as i32;
        let mut rec = vec![ts.format(TS_FORMAT).to_string()];
        rec.extend((0..series.n_vars()).map(|v| series.get(v, t).to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a raw series back; the resolution is inferred from the timestamps
/// (a single-row file falls back to `default_resolution`).
pub fn read_series<T: Scalar, R: Read>(
    r: R,
    default_resolution: u32,
) -> Result<(TimeSeriesMatrix<T>, NaiveDateTime), CsvError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.get(0).map(str::trim) != Some(TIMESTAMP_COLUMN) {
        return Err(CsvError::MissingTimestamp);
    }
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let e = names.len();
    let mut rows: Vec<Vec<T>> = vec![Vec::new(); e];
    let mut stamps: Vec<NaiveDateTime> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != e + 1 {
            return Err(CsvError::Ragged(i));
        }
        let ts = rec[0].trim();
        stamps.push(NaiveDateTime::parse_from_str(ts, TS_FORMAT).map_err(|_| CsvError::BadTimestamp(ts.to_string()))?);
        for (v, field) in rec.iter().skip(1).enumerate() {
            let x: f64 = field.trim().parse().map_err(|_| CsvError::BadNumber {
                column: names[v].clone(),
                value: field.to_string(),
            })?;
            rows[v].push(T::of(x));
        }
    }
    let start = *stamps.first().ok_or(DataError::Empty)?;
    let resolution = if stamps.len() > 1 {
        let step = stamps[1] - stamps[0];
        for k in 2..stamps.len() {
            if stamps[k] - stamps[k - 1] != step {
                return Err(CsvError::UnevenSpacing(k));
            }
        }
        let minutes = step.num_minutes();
        if minutes <= 0 || step != Duration::minutes(minutes) {
            return Err(CsvError::UnevenSpacing(1));
        }
        minutes as u32
    } else {
        default_resolution
    };
    Ok((TimeSeriesMatrix::from_rows(names, rows, resolution)?, start))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let x = TimeSeriesMatrix::new(vec!["a".into(), "b".into()], vec![1.0, 2.5, 3.0, -4.0, 0.125, 6.0], 3, 15).unwrap();
        let start = NaiveDateTime::parse_from_str("2024-03-01T00:00:00", TS_FORMAT).unwrap();
        let mut buf = Vec::new();
        write_series(&mut buf, &x, start).unwrap();
        let (y, s): (TimeSeriesMatrix<f64>, _) = read_series(buf.as_slice(), 1).unwrap();
        assert_eq!(y, x);
        assert_eq!(s, start);
    }

    #[test]
    fn rejects_missing_timestamp() {
        let r = read_series::<f64, _>("a,b\n1,2\n".as_bytes(), 1);
        assert!(matches!(r, Err(CsvError::MissingTimestamp)));
    }
}
