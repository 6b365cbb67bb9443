//! On-disk formats and plot/table emission.
//!
//! Binary files share one framing: a magic line, a single line of JSON
//! describing the payload, then little-endian floats.

mod checkpoint;
mod csv_out;
mod dataset;
mod svg;

pub use checkpoint::{CheckpointFile, CheckpointHeader, CodecDims};
pub use csv_out::{emit_csv, format_float, write_csv, CsvValue};
pub use dataset::{DatasetFile, DatasetHeader};
pub use svg::{hsv_to_rgb, render_trajectory_svg, write_trajectory_svg};

use std::io::{BufRead, Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

fn format_err(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        what,
        detail: detail.into(),
    }
}

fn write_preamble<H: Serialize>(w: &mut impl Write, magic: &[u8], header: &H) -> Result<()> {
    w.write_all(magic)?;
    let line = serde_json::to_string(header).map_err(|e| format_err("header", e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_preamble<H: DeserializeOwned>(r: &mut impl BufRead, magic: &[u8], what: &'static str) -> Result<H> {
    let mut got = vec![0u8; magic.len()];
    r.read_exact(&mut got)
        .map_err(|_| format_err(what, "file is shorter than the magic line"))?;
    if got != magic {
        return Err(format_err(what, format!("bad magic {:?}", String::from_utf8_lossy(&got))));
    }
    let mut line = String::new();
    r.read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(format_err(what, "header line is not terminated"));
    }
    serde_json::from_str(line.trim_end()).map_err(|e| format_err(what, format!("header: {e}")))
}

fn read_exact_payload(r: &mut impl Read, bytes: usize, what: &'static str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; bytes];
    r.read_exact(&mut buf)
        .map_err(|_| format_err(what, format!("payload shorter than the {bytes} bytes the header implies")))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(format_err(what, "trailing bytes after payload"));
    }
    Ok(buf)
}
