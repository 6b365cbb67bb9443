use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum CsvValue {
    Text(String),
    Int(i64),
    Float(f64),
}

impl From<&str> for CsvValue {
    fn from(s: &str) -> Self {
        CsvValue::Text(s.to_string())
    }
}

impl From<String> for CsvValue {
    fn from(s: String) -> Self {
        CsvValue::Text(s)
    }
}

impl From<f64> for CsvValue {
    fn from(v: f64) -> Self {
        CsvValue::Float(v)
    }
}

impl From<usize> for CsvValue {
    fn from(v: usize) -> Self {
        CsvValue::Int(v as i64)
    }
}

impl CsvValue {
    fn render(&self) -> String {
        match self {
            CsvValue::Text(s) => s.clone(),
            CsvValue::Int(i) => i.to_string(),
            CsvValue::Float(f) => format_float(*f),
        }
    }
}

/// Nine significant digits. Fixed notation for decimal exponents in
/// `[-5, 15)`, scientific outside it.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return format!("{:.8}", v);
    }
    let sci = format!("{v:.8e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if (-5..15).contains(&exp) {
        format!("{:.*}", (8 - exp).max(0) as usize, v)
    } else {
        sci
    }
}

/// Writes a header row and `rows` with RFC 4180 quoting.
pub fn write_csv(w: impl Write, header: &[&str], rows: &[Vec<CsvValue>]) -> Result<()> {
    if let Some(r) = rows.iter().find(|r| r.len() != header.len()) {
        return Err(Error::InvalidArgument(format!(
            "row has {} fields, header has {}",
            r.len(),
            header.len()
        )));
    }
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(w);
    let to_err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    out.write_record(header).map_err(to_err)?;
    for r in rows {
        out.write_record(r.iter().map(CsvValue::render)).map_err(to_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<CsvValue>]) -> Result<()> {
    write_csv(File::create(path)?, header, rows)
}
