use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{MdsamError, Result};
use crate::trace::{DecodeTrace, TraceRecord};

/// Exact CSV header, in column order.
pub const CSV_HEADER: [&str; 4] = ["step", "layer", "image_mass", "token_id"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Json,
}

impl TraceFormat {
    /// `.json` selects JSON; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Self::Json,
            _ => Self::Csv,
        }
    }
}

fn csv_error(err: csv::Error) -> MdsamError {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Deserialize { err, .. } => MdsamError::Parse {
            line,
            field: err
                .field()
                .and_then(|i| CSV_HEADER.get(i as usize))
                .map_or_else(|| "?".to_string(), |s| s.to_string()),
            message: err.kind().to_string(),
        },
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => MdsamError::Parse {
            line,
            field: format!("#{}", len + 1),
            message: format!("expected {expected_len} fields, found {len}"),
        },
        csv::ErrorKind::Io(e) => MdsamError::Parse {
            line,
            field: "?".into(),
            message: e.to_string(),
        },
        other => MdsamError::Parse {
            line,
            field: "?".into(),
            message: format!("{other:?}"),
        },
    }
}

/// Writes the header and one row per record. Reals use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv<W: Write>(trace: &DecodeTrace, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(CSV_HEADER).map_err(csv_error)?;
    for r in &trace.records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush().map_err(|e| csv_error(e.into()))?;
    Ok(())
}

/// Reads a CSV trace. Metadata is not carried by CSV and comes back empty.
pub fn read_csv<R: Read>(reader: R) -> Result<DecodeTrace> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = r.headers().map_err(csv_error)?.clone();
    let missing: Vec<&str> = CSV_HEADER
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .collect();
    if !missing.is_empty() {
        return Err(MdsamError::Schema(format!(
            "missing column(s): {}",
            missing.join(", ")
        )));
    }
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(MdsamError::Schema(format!(
            "header must be `{}`, found `{}`",
            CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let records = r
        .deserialize::<TraceRecord>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(csv_error)?;
    DecodeTrace::from_records(records)
}

pub fn write_json<W: Write>(trace: &DecodeTrace, mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, trace).map_err(|e| MdsamError::Parse {
        line: 0,
        field: "?".into(),
        message: e.to_string(),
    })?;
    writer
        .write_all(b"\n")
        .map_err(|e| MdsamError::io("<writer>", e))
}

pub fn read_json<R: Read>(reader: R) -> Result<DecodeTrace> {
    let trace: DecodeTrace = serde_json::from_reader(reader).map_err(|e| MdsamError::Parse {
        line: e.line() as u64,
        field: format!("column {}", e.column()),
        message: e.to_string(),
    })?;
    trace.validate()?;
    Ok(trace)
}

/// Writes `trace` to `path`, creating missing parent directories.
pub fn export_trace(trace: &DecodeTrace, path: &Path, format: TraceFormat) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| MdsamError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| MdsamError::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        TraceFormat::Csv => write_csv(trace, &mut out)?,
        TraceFormat::Json => write_json(trace, &mut out)?,
    }
    out.flush().map_err(|e| MdsamError::io(path, e))
}

/// Loads a trace, detecting JSON by a leading `{`.
pub fn import_trace(path: &Path) -> Result<DecodeTrace> {
    let bytes = fs::read(path).map_err(|e| MdsamError::io(path, e))?;
    let is_json = bytes
        .iter()
        .find(|b| !b.is_ascii_whitespace())
        .is_some_and(|&b| b == b'{');
    if is_json {
        read_json(bytes.as_slice())
    } else {
        read_csv(bytes.as_slice())
    }
}
