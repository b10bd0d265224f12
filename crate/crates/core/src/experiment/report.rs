//! CSV output of estimated and actual paths, one row per path.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::extractor::PathEstimate;

use super::TruthPath;

pub const CSV_HEADER: &str = "kind,source_id,distance_m,aoa_sin_phase,aod_sin_phase,doppler_hz,magnitude";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Estimated,
    Actual,
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordKind::Estimated => "estimated",
            RecordKind::Actual => "actual",
        })
    }
}

impl FromStr for RecordKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "estimated" => Ok(RecordKind::Estimated),
            "actual" => Ok(RecordKind::Actual),
            other => Err(format!("unknown row kind '{other}'")),
        }
    }
}

/// One CSV row. Angles are sin-domain phases κ·sin(·) in (-π, π].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRecord {
    pub kind: RecordKind,
    pub source_id: usize,
    pub distance_m: f64,
    pub aoa_sin_phase: f64,
    pub aod_sin_phase: Option<f64>,
    pub doppler_hz: Option<f64>,
    pub magnitude: f64,
}

impl CsvRecord {
    pub fn from_estimate(e: &PathEstimate) -> Self {
        Self {
            kind: RecordKind::Estimated,
            source_id: e.source_id,
            distance_m: e.distance_m,
            aoa_sin_phase: e.aoa_phase,
            aod_sin_phase: e.aod_phase,
            doppler_hz: e.doppler_hz,
            magnitude: e.magnitude,
        }
    }

    pub fn from_truth(t: &TruthPath) -> Self {
        Self {
            kind: RecordKind::Actual,
            source_id: t.source_id,
            distance_m: t.distance_m,
            aoa_sin_phase: t.aoa_phase,
            aod_sin_phase: t.aod_phase,
            doppler_hz: Some(t.doppler_hz),
            magnitude: t.magnitude,
        }
    }

    fn write_line<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let opt = |v: Option<f64>| v.map(format_g9).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            self.kind,
            self.source_id,
            format_g9(self.distance_m),
            format_g9(self.aoa_sin_phase),
            opt(self.aod_sin_phase),
            opt(self.doppler_hz),
            format_g9(self.magnitude)
        )
    }
}

/// C `printf("%.9g")`.
pub fn format_g9(v: f64) -> String {
    const P: i32 = 9;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0" } else { "0" }.into();
    }
    // exponent after rounding to P significant digits
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..P).contains(&exp) {
        let fixed = format!("{:.*}", (P - 1 - exp) as usize, v);
        trim_fraction(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_fraction(mantissa), sign, exp.abs())
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Header plus one LF-terminated line per record.
pub fn write_records<W: Write>(records: &[CsvRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        r.write_line(&mut out)?;
    }
    out.flush()
}

pub fn write_csv(records: &[CsvRecord], path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_records(records, BufWriter::new(file)).map_err(io_err)
}

/// Parse rows written by [`write_records`]; `origin` only labels errors.
pub fn read_records<R: Read>(input: R, origin: &Path) -> Result<Vec<CsvRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        reason,
    };
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(parse_err(1, format!("unexpected header, want {CSV_HEADER}")));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |c: usize| row.get(c).unwrap_or("");
        let num = |c: usize| -> Result<f64> {
            field(c)
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("column {}: {e}", c + 1)))
        };
        let opt = |c: usize| -> Result<Option<f64>> {
            if field(c).is_empty() {
                Ok(None)
            } else {
                num(c).map(Some)
            }
        };
        out.push(CsvRecord {
            kind: field(0).parse().map_err(|e| parse_err(line, e))?,
            source_id: field(1)
                .parse()
                .map_err(|e| parse_err(line, format!("source_id: {e}")))?,
            distance_m: num(2)?,
            aoa_sin_phase: num(3)?,
            aod_sin_phase: opt(4)?,
            doppler_hz: opt(5)?,
            magnitude: num(6)?,
        });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRecord>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_records(file, path)
}
