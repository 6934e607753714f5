//! On-disk formats. Text formats are tab-separated line records with `#`
//! comment lines; reals are written in shortest round-trip form so a write
//! followed by a read reproduces every value bit for bit.

pub mod binary;
pub mod checkpoint;
pub mod curves;
pub mod events;
pub mod records;
pub mod results;
pub mod sequences;
pub mod signatures;

use std::fmt::Display;
use std::fs;
use std::io::ErrorKind;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Reads a stage input. A missing file names the stage that produces it.
pub fn read_input(path: &Path, stage: &'static str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::MissingInput {
            path: path.to_path_buf(),
            stage,
        },
        _ => Error::io(path, e),
    })
}

pub fn read_input_text(path: &Path, stage: &'static str) -> Result<String> {
    String::from_utf8(read_input(path, stage)?).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: "not UTF-8 text".into(),
    })
}

/// Writes through a sibling temporary file so readers never observe a
/// partial file. Parent directories are created.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Comma-joined reals.
pub fn join_reals(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 12);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&v.to_string());
    }
    out
}

/// One non-comment line split on tabs.
pub struct Row<'a> {
    path: &'a Path,
    pub line: usize,
    fields: Vec<&'a str>,
}

impl<'a> Row<'a> {
    pub fn error(&self, message: impl Display) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.to_string(),
        }
    }

    pub fn str(&self, i: usize) -> &'a str {
        self.fields[i]
    }

    pub fn get<T: FromStr>(&self, i: usize, name: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.fields[i]
            .parse()
            .map_err(|e| self.error(format!("{name} `{}`: {e}", self.fields[i])))
    }

    pub fn real(&self, i: usize, name: &str) -> Result<f64> {
        let v: f64 = self.get(i, name)?;
        if !v.is_finite() {
            return Err(self.error(format!("{name} is not finite")));
        }
        Ok(v)
    }

    pub fn flag(&self, i: usize, name: &str) -> Result<bool> {
        match self.fields[i] {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(self.error(format!("{name} `{other}`: expected 0 or 1"))),
        }
    }

    /// Comma-separated reals; an empty field is an empty vector.
    pub fn reals(&self, i: usize, name: &str) -> Result<Vec<f64>> {
        let field = self.fields[i];
        if field.is_empty() {
            return Ok(Vec::new());
        }
        field
            .split(',')
            .map(|v| match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(self.error(format!("{name}: bad real `{v}`"))),
            })
            .collect()
    }
}

/// Splits `text` into rows of exactly `columns` tab-separated fields.
pub fn rows<'a>(path: &'a Path, text: &'a str, columns: usize) -> impl Iterator<Item = Result<Row<'a>>> + 'a {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(move |(n, l)| {
            let fields: Vec<&str> = l.split('\t').collect();
            let row = Row {
                path,
                line: n + 1,
                fields,
            };
            if row.fields.len() != columns {
                return Err(row.error(format!("expected {columns} tab-separated fields, found {}", row.fields.len())));
            }
            Ok(row)
        })
}
