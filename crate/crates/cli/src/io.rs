//! CSV input, result files and the JSON metadata sidecar.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// A CSV file with a header row, kept as strings until a column is requested.
pub struct Table {
    pub path: PathBuf,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::csv(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::csv(path, e))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        if rows.is_empty() {
            return Err(CliError::Parse { path: path.to_path_buf(), line: 2, column: String::new(), message: "no data rows".into() });
        }
        Ok(Self { path: path.to_path_buf(), headers, rows })
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn require(&self, name: &str) -> Result<usize, CliError> {
        self.position(name).ok_or_else(|| CliError::Parse {
            path: self.path.clone(),
            line: 1,
            column: name.to_string(),
            message: "missing column".into(),
        })
    }

    /// Parses column `j`. Empty cells and `NA` become NaN when `allow_missing`.
    pub fn numeric(&self, j: usize, allow_missing: bool) -> Result<Vec<f64>, CliError> {
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let cell = row[j].as_str();
                if allow_missing && (cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")) {
                    return Ok(f64::NAN);
                }
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(CliError::Parse {
                        path: self.path.clone(),
                        line: r + 2,
                        column: self.headers[j].clone(),
                        message: format!("expected a finite number, got {cell:?}"),
                    }),
                }
            })
            .collect()
    }

    pub fn text(&self, j: usize) -> Vec<String> {
        self.rows.iter().map(|r| r[j].clone()).collect()
    }
}

fn write_err(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e.to_string()))
}

/// Where results go; the directory must already exist.
pub struct Output {
    dir: PathBuf,
    written: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        if !dir.is_dir() {
            return Err(CliError::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist")));
        }
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| write_err(&path, e))?;
        for row in rows {
            w.serialize(row).map_err(|e| write_err(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Rows with a header known only at run time.
    pub fn records(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| write_err(&path, e))?;
        w.write_record(header).map_err(|e| write_err(&path, e))?;
        for row in rows {
            w.write_record(row).map_err(|e| write_err(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value).expect("results serialize");
        text.push('\n');
        File::create(&path).and_then(|mut f| f.write_all(text.as_bytes())).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Writes `<command>.meta.json` listing the files written so far.
    pub fn sidecar<C: Serialize>(&mut self, command: &str, config: &C, seed: Option<u64>, notes: &[&str]) -> Result<(), CliError> {
        let meta = Sidecar {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: config_hash(config),
            seed,
            outputs: self.written.clone(),
            notes: notes.to_vec(),
            config,
        };
        self.json(&format!("{command}.meta.json"), &meta)
    }
}

#[derive(Serialize)]
struct Sidecar<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    seed: Option<u64>,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    notes: Vec<&'a str>,
    config: &'a C,
}

/// SHA-256 of the compact JSON form of the resolved configuration.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
