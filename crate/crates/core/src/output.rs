//! CSV tables with `#` metadata lines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;

/// A cell: numbers print with 9 significant digits.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Flag(bool),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Flag(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.8e}")
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format_number(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Flag(b) => b.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => {
                format!("\"{}\"", s.replace('"', "\"\""))
            }
            Cell::Text(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.metadata.push((key.to_owned(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width does not match the header"
        );
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// `out` itself, or `out` with `-suffix` inserted before the extension.
pub fn suffixed_path(out: &Path, suffix: Option<&str>) -> PathBuf {
    let Some(suffix) = suffix else {
        return out.to_path_buf();
    };
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}-{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{suffix}"),
    };
    out.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_number(0.25), "2.50000000e-1");
        assert_eq!(format_number(1.0 / 3.0), "3.33333333e-1");
        assert_eq!(format_number(-12345.678901), "-1.23456789e4");
        assert_eq!(format_number(f64::INFINITY), "inf");
    }

    #[test]
    fn render_layout() {
        let mut t = Table::new(&["a", "b", "c"]);
        t.meta("seed", 3).meta("config_sha256", "ab");
        t.push(vec![1.5.into(), 2usize.into(), "x,y".into()]);
        t.push(vec![0.0.into(), 0usize.into(), true.into()]);
        assert_eq!(
            t.render(),
            "# seed=3\n# config_sha256=ab\na,b,c\n1.50000000e0,2,\"x,y\"\n0.00000000e0,0,true\n"
        );
    }

    #[test]
    fn suffixes() {
        assert_eq!(
            suffixed_path(Path::new("out/f.csv"), Some("l100")),
            PathBuf::from("out/f-l100.csv")
        );
        assert_eq!(
            suffixed_path(Path::new("f"), Some("x")),
            PathBuf::from("f-x")
        );
        assert_eq!(
            suffixed_path(Path::new("f.csv"), None),
            PathBuf::from("f.csv")
        );
    }
}
