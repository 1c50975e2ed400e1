//! Writers. Every float goes out with 17 significant digits.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, CliResult, Classify};

pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

struct SigDigits;

impl serde_json::ser::Formatter for SigDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits);
    value.serialize(&mut ser).domain()?;
    let mut s = String::from_utf8(buf).expect("serde_json emits utf-8");
    s.push('\n');
    Ok(s)
}

/// CSV text with a header row.
pub fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).domain()?;
    for row in rows {
        w.write_record(&row).domain()?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Domain(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

/// Writes through a temporary file and a rename so readers never see half a file.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, contents)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| CliError::Domain(format!("writing {}: {e}", path.display())))
}
