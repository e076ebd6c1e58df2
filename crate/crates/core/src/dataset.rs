//! Delimited dataset ingestion and export.
//!
//! The header must name `t`, `m` and `y`; `v`, `weight` and `group` are
//! optional. Column order is free. Parsing is strict: any malformed cell is
//! an error carrying its line number.

use std::io::{Read, Write};
use std::path::Path;

use crate::estimands::{Group, ObservedRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Columns {
    t: usize,
    m: usize,
    y: usize,
    v: Option<usize>,
    weight: Option<usize>,
    group: Option<usize>,
}

fn locate_columns(header: &csv::StringRecord) -> Result<Columns> {
    let find = |name: &str| header.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let required = |name: &str| {
        find(name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing required column `{name}`"),
        })
    };
    Ok(Columns {
        t: required("t")?,
        m: required("m")?,
        y: required("y")?,
        v: find("v"),
        weight: find("weight"),
        group: find("group"),
    })
}

fn parse_err(line: u64, message: String) -> Error {
    Error::Parse { line, message }
}

fn parse_row(row: &csv::StringRecord, cols: &Columns, line: u64) -> Result<ObservedRecord> {
    let field = |i: usize, name: &str| -> Result<&str> {
        row.get(i)
            .map(str::trim)
            .ok_or_else(|| parse_err(line, format!("missing `{name}` value")))
    };
    let treated = match field(cols.t, "t")? {
        "0" => false,
        "1" => true,
        other => return Err(parse_err(line, format!("treatment `{other}` must be 0 or 1"))),
    };
    let mediator = field(cols.m, "m")?
        .parse::<usize>()
        .map_err(|_| parse_err(line, format!("mediator `{}` is not a nonnegative integer", row[cols.m].trim())))?;
    let raw_y = field(cols.y, "y")?;
    let outcome = raw_y
        .parse::<f64>()
        .ok()
        .filter(|y| y.is_finite())
        .ok_or_else(|| parse_err(line, format!("outcome `{raw_y}` is not a finite number")))?;
    let mut record = ObservedRecord::new(treated, mediator, outcome);
    if let Some(i) = cols.v {
        let raw = field(i, "v")?;
        if !raw.is_empty() {
            let v = raw
                .parse::<u32>()
                .map_err(|_| parse_err(line, format!("stratum `{raw}` is not a nonnegative integer code")))?;
            record.stratum = Some(v);
        }
    }
    if let Some(i) = cols.weight {
        let raw = field(i, "weight")?;
        let w = raw
            .parse::<f64>()
            .ok()
            .filter(|w| w.is_finite() && *w > 0.0)
            .ok_or_else(|| parse_err(line, format!("weight `{raw}` is not a positive number")))?;
        record.weight = w;
    }
    if let Some(i) = cols.group {
        let raw = field(i, "group")?;
        record.group = raw
            .parse::<Group>()
            .map_err(|e| parse_err(line, e.to_string()))?;
    }
    Ok(record)
}

/// Parses records from any reader.
pub fn parse_dataset<R: Read>(reader: R, delimiter: u8) -> Result<Vec<ObservedRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols = locate_columns(&header)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        out.push(parse_row(&row, &cols, line)?);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path, delimiter: u8) -> Result<Vec<ObservedRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(std::io::BufReader::new(file), delimiter)
}

/// Writes `t, m, y, v, weight, group`.
pub fn write_dataset_to<W: Write>(writer: W, records: &[ObservedRecord], delimiter: u8) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
    wtr.write_record(["t", "m", "y", "v", "weight", "group"])?;
    for r in records {
        let v = r.stratum.map(|v| v.to_string()).unwrap_or_default();
        wtr.write_record([
            (r.treated as u8).to_string(),
            r.mediator.to_string(),
            r.outcome.to_string(),
            v,
            r.weight.to_string(),
            r.group.as_str().to_owned(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<dataset writer>", e))
}

pub fn write_dataset(path: &Path, records: &[ObservedRecord], delimiter: u8) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(std::io::BufWriter::new(file), records, delimiter)
}
