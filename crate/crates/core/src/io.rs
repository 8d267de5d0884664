//! Dataset CSV: header `x1,...,xp,a,z,prop`, one row per sample.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, RawDataset};

struct Columns {
    x: Vec<usize>,
    a: usize,
    z: usize,
    prop: usize,
}

fn locate(header: &csv::StringRecord) -> Result<Columns> {
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let mut missing = Vec::new();
    let mut req = |name: &str| {
        find(name).unwrap_or_else(|| {
            missing.push(name.to_string());
            usize::MAX
        })
    };
    let (a, z, prop) = (req("a"), req("z"), req("prop"));
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing column(s): {}",
            missing.join(", ")
        )));
    }
    let mut x = Vec::new();
    while let Some(j) = find(&format!("x{}", x.len() + 1)) {
        x.push(j);
    }
    if x.is_empty() {
        return Err(Error::Schema("no covariate columns x1, x2, ...".into()));
    }
    let known = x.len() + 3;
    if header.len() != known {
        let extra: Vec<&str> = header
            .iter()
            .enumerate()
            .filter(|(j, _)| !x.contains(j) && ![a, z, prop].contains(j))
            .map(|(_, h)| h)
            .collect();
        return Err(Error::Schema(format!(
            "unexpected column(s): {}",
            extra.join(", ")
        )));
    }
    Ok(Columns { x, a, z, prop })
}

/// Parses a dataset; numeric errors carry the 1-based line and column.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let cols = locate(&header)?;
    let mut raw = RawDataset {
        p: cols.x.len(),
        ..RawDataset::default()
    };
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |j: usize| -> Result<f64> {
            let s = rec.get(j).unwrap_or("").trim();
            s.parse::<f64>().map_err(|_| Error::Parse {
                line,
                column: j + 1,
                message: format!("column '{}': cannot parse {s:?} as a number", &header[j]),
            })
        };
        for &j in &cols.x {
            raw.x.push(field(j)?);
        }
        raw.a.push(field(cols.a)?);
        raw.z.push(field(cols.z)?);
        raw.propensity.push(field(cols.prop)?);
    }
    Dataset::from_raw(raw)
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    read_dataset(File::open(path)?)
}

pub fn write_dataset<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=data.p()).map(|k| format!("x{k}")).collect();
    header.extend(["a", "z", "prop"].map(String::from));
    w.write_record(&header).map_err(csv_error)?;
    for i in 0..data.n() {
        let mut row: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        row.push(data.action(i).sign().to_string());
        row.push(data.outcome(i).to_string());
        row.push(data.propensity(i).to_string());
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_file(data: &Dataset, path: &Path) -> Result<()> {
    write_dataset(data, File::create(path)?)
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    let (line, column) = match e.position() {
        Some(p) => (p.line() as usize, 0),
        None => (0, 0),
    };
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::Parse {
            line,
            column: (len.min(expected_len) + 1) as usize,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        csv::ErrorKind::Utf8 { err, .. } => Error::Parse {
            line,
            column: err.field() + 1,
            message: "invalid UTF-8".into(),
        },
        other => Error::Parse {
            line,
            column,
            message: format!("{other:?}"),
        },
    }
}
