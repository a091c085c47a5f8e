//! Plain-text export/import: CSV tables and flat JSON records.
//!
//! All floating-point values are written with 17 significant digits
//! (`{:.16e}`), which round-trips every f64 exactly; lines end with LF.

use crate::ground_state::{ProblemParams, ProfileConstants, RadialProfile};
use serde::Serialize;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// 17-significant-digit scientific form; round-trips f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write a CSV table: header row, then one formatted row per record.
pub fn write_csv<W: Write>(out: &mut W, header: &[&str], rows: &[Vec<f64>]) -> Result<(), IoError> {
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Read a CSV of floats produced by `write_csv`; returns (header, rows).
pub fn read_csv<R: BufRead>(input: R) -> Result<(Vec<String>, Vec<Vec<f64>>), IoError> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(l) => l?,
        None => {
            return Err(IoError::Parse {
                line: 1,
                msg: "empty input".into(),
            })
        }
    };
    let header: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(header.len());
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|e| IoError::Parse {
                line: idx + 2,
                msg: format!("bad float {cell:?}: {e}"),
            })?;
            row.push(v);
        }
        if row.len() != header.len() {
            return Err(IoError::Parse {
                line: idx + 2,
                msg: format!("expected {} cells, found {}", header.len(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn write_profile_csv<W: Write>(out: &mut W, profile: &RadialProfile) -> Result<(), IoError> {
    let rows: Vec<Vec<f64>> = (0..profile.grid.len())
        .map(|i| vec![profile.grid[i], profile.w[i], profile.dw[i]])
        .collect();
    write_csv(out, &["r", "w", "dw"], &rows)
}

/// Parse a `r,w,dw` table back into its three columns.
pub fn read_profile_csv<R: BufRead>(input: R) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), IoError> {
    let (header, rows) = read_csv(input)?;
    if header != ["r", "w", "dw"] {
        return Err(IoError::Parse {
            line: 1,
            msg: format!("expected header r,w,dw, found {}", header.join(",")),
        });
    }
    let mut r = Vec::with_capacity(rows.len());
    let mut w = Vec::with_capacity(rows.len());
    let mut dw = Vec::with_capacity(rows.len());
    for row in rows {
        r.push(row[0]);
        w.push(row[1]);
        dw.push(row[2]);
    }
    Ok((r, w, dw))
}

/// Flat record for the profile constants, serialized with fixed key order.
#[derive(Debug, Serialize)]
pub struct ConstantsRecord {
    pub p: f64,
    pub d: usize,
    pub r_max: f64,
    pub step: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    pub l2_sq: f64,
    pub h1_sq: f64,
}

impl ConstantsRecord {
    pub fn new(params: ProblemParams, profile: &RadialProfile, c: &ProfileConstants) -> Self {
        ConstantsRecord {
            p: params.p,
            d: params.d,
            r_max: profile.r_max,
            step: profile.step,
            c0: c.c0,
            c1: c.c1,
            l2_sq: c.l2_sq,
            h1_sq: c.h1_sq,
        }
    }
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialization cannot fail");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatted_floats_round_trip_exactly() {
        for &x in &[
            std::f64::consts::PI,
            -1.0 / 3.0,
            6.02e23,
            5e-324,
            -0.0,
            1.0,
            f64::MAX,
        ] {
            let back: f64 = fmt_f64(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} mangled");
        }
    }

    #[test]
    fn csv_round_trip_preserves_every_bit() {
        let rows = vec![
            vec![0.1, 2.0 / 3.0, -7.25],
            vec![1e-300, 3.5, 0.0],
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &["a", "b", "c"], &rows).unwrap();
        assert!(!buf.contains(&b'\r'));
        let (header, back) = read_csv(buf.as_slice()).unwrap();
        assert_eq!(header, ["a", "b", "c"]);
        assert_eq!(back, rows);
    }

    #[test]
    fn malformed_csv_reports_the_line() {
        let text = "a,b\n1.0,2.0\n3.0,oops\n";
        match read_csv(text.as_bytes()) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn constants_record_serializes_with_expected_keys() {
        let rec = ConstantsRecord {
            p: 3.0,
            d: 2,
            r_max: 15.0,
            step: 1e-3,
            c0: 1.0,
            c1: 2.0,
            l2_sq: 3.0,
            h1_sq: 4.0,
        };
        let json = to_json_pretty(&rec);
        let keys: Vec<usize> = ["\"p\"", "\"d\"", "\"r_max\"", "\"step\"", "\"C0\"", "\"C1\"", "\"l2_sq\"", "\"h1_sq\""]
            .iter()
            .map(|k| json.find(k).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]), "key order changed");
    }
}
