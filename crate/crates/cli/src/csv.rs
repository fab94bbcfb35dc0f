//! CSV output: a versioned schema comment, a header row, then data rows.
//! Floats carry 12 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub use cran_core::solver::fmt_float;

use crate::error::{CliError, Result};

pub struct CsvFile {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvFile {
    pub fn create(dir: &Path, name: &str, schema: &str, header: &[String]) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut csv = Self { path, out: BufWriter::new(file) };
        csv.line(&format!("# {schema}"))?;
        csv.line(&header.join(","))?;
        Ok(csv)
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.line(&fields.join(","))
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}").map_err(|e| CliError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.out.flush().map_err(|e| CliError::io(&self.path, e))?;
        Ok(self.path)
    }
}

pub fn header(fixed: &[&str], num_raps: usize, per_rap: &[&str]) -> Vec<String> {
    let mut cols: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    for prefix in per_rap {
        cols.extend((1..=num_raps).map(|l| format!("{prefix}_{l}")));
    }
    cols
}

pub fn floats(xs: &[f64]) -> impl Iterator<Item = String> + '_ {
    xs.iter().map(|&x| fmt_float(x))
}

/// Optional float: empty field when absent.
pub fn opt_float(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}
