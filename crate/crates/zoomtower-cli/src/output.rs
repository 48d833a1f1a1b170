//! CSV tables and the run manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::RunError;

/// One CSV field.  Floats keep 17 significant digits so they round-trip.
#[derive(Clone, Debug)]
pub enum Cell {
    F(f64),
    U(usize),
    B(bool),
    S(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::F(x) if x.is_nan() => "NaN".into(),
            Cell::F(x) if x.is_infinite() => (if *x > 0.0 { "inf" } else { "-inf" }).into(),
            Cell::F(x) => format!("{x:.16e}"),
            Cell::U(v) => v.to_string(),
            Cell::B(b) => u8::from(*b).to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::B(b)
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::S(s)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::S(s.to_string())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub rows: Option<usize>,
    pub content: String,
}

/// Collects the files of one run so the manifest can list them.
pub struct Sink {
    pub dir: PathBuf,
    pub files: Vec<OutputFile>,
}

impl Sink {
    pub fn new(dir: &Path) -> Result<Self, RunError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn csv<R>(&mut self, name: &str, content: &str, header: &[&str], rows: R) -> Result<(), RunError>
    where
        R: IntoIterator<Item = Vec<Cell>>,
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_path(self.dir.join(name))?;
        w.write_record(header)?;
        let mut n = 0;
        for row in rows {
            debug_assert_eq!(row.len(), header.len());
            w.write_record(row.iter().map(Cell::render))?;
            n += 1;
        }
        w.flush()?;
        self.files.push(OutputFile { file: name.into(), rows: Some(n), content: content.into() });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, content: &str, value: &T) -> Result<(), RunError> {
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(self.dir.join(name), text + "\n")?;
        self.files.push(OutputFile { file: name.into(), rows: None, content: content.into() });
        Ok(())
    }
}

#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: String,
    pub map: &'a str,
    pub seed: Option<u64>,
    pub threads: usize,
    /// Parameters as resolved for the run (defaults filled in).
    pub settings: &'a C,
    pub summary: &'a serde_json::Value,
    pub passed: bool,
    pub failures: &'a [String],
    pub outputs: &'a [OutputFile],
    pub wall_clock_ms: u128,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt() * 1e-300, -7.25e12] {
            let s = Cell::F(x).render();
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(Cell::F(0.5).render(), "5.0000000000000000e-1");
    }
}
