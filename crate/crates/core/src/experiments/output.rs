use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Value rendered into one CSV cell.
pub trait Cell {
    fn cell(&self) -> String;
}

impl Cell for f64 {
    fn cell(&self) -> String {
        format!("{self:?}")
    }
}

impl Cell for bool {
    fn cell(&self) -> String {
        self.to_string()
    }
}

impl Cell for usize {
    fn cell(&self) -> String {
        self.to_string()
    }
}

impl Cell for u64 {
    fn cell(&self) -> String {
        self.to_string()
    }
}

impl Cell for &str {
    fn cell(&self) -> String {
        (*self).to_string()
    }
}

impl Cell for String {
    fn cell(&self) -> String {
        self.clone()
    }
}

impl<T: Cell> Cell for Option<T> {
    fn cell(&self) -> String {
        self.as_ref().map(Cell::cell).unwrap_or_default()
    }
}

#[macro_export]
#[doc(hidden)]
macro_rules! row {
    ($($v:expr),* $(,)?) => {
        vec![$($crate::experiments::Cell::cell(&$v)),*]
    };
}

/// Fixed-schema CSV table with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            header: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(
            row.len(),
            self.header.len(),
            "row width does not match header {:?}",
            self.header
        );
        self.rows.push(row);
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("no column {name:?} in {:?}", self.header)))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    /// Numeric column; empty cells become NaN.
    pub fn floats(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .into_iter()
            .map(|s| {
                if s.is_empty() {
                    Ok(f64::NAN)
                } else {
                    s.parse().map_err(|_| {
                        Error::Config(format!("column {name:?}: {s:?} is not a number"))
                    })
                }
            })
            .collect()
    }

    /// Rows whose `name` column equals `value`.
    pub fn select(&self, name: &str, value: &str) -> Result<Table> {
        let i = self.index(name)?;
        Ok(Table {
            header: self.header.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| r[i] == value)
                .cloned()
                .collect(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Matrix as a table with a leading label column and labelled columns.
pub fn labeled_matrix(m: &DMatrix<f64>, row_labels: &[String], col_labels: &[String]) -> Table {
    let mut header = vec!["row"];
    header.extend(col_labels.iter().map(String::as_str));
    let mut t = Table::new(&header);
    for i in 0..m.nrows() {
        let mut r = vec![row_labels[i].clone()];
        r.extend(m.row(i).iter().map(Cell::cell));
        t.push(r);
    }
    t
}

/// In-memory result of one subcommand.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub results: Option<Table>,
    /// Extra tables written to `kernels/<name>.csv`.
    pub kernels: Vec<(String, Table)>,
}

impl RunOutput {
    pub fn results(&self) -> &Table {
        self.results.as_ref().expect("runner always sets results")
    }

    pub fn kernel(&self, name: &str) -> Option<&Table> {
        self.kernels.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// A finished run: its subcommand, the fully resolved parameters and output.
#[derive(Clone, Debug)]
pub struct Run {
    pub subcommand: String,
    pub parameters: BTreeMap<String, String>,
    pub output: RunOutput,
}

impl Run {
    /// Writes `results.csv`, `kernels/*.csv` and `manifest.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut files = vec!["results.csv".to_string()];
        write_file(&dir.join("results.csv"), &self.output.results().to_csv())?;
        if !self.output.kernels.is_empty() {
            std::fs::create_dir_all(dir.join("kernels"))?;
        }
        for (name, t) in &self.output.kernels {
            let rel = format!("kernels/{name}.csv");
            write_file(&dir.join(&rel), &t.to_csv())?;
            files.push(rel);
        }
        let manifest = serde_json::json!({
            "subcommand": self.subcommand,
            "version": env!("CARGO_PKG_VERSION"),
            "parameters": self.parameters,
            "outputs": files,
            "rows": self.output.results().rows.len(),
        });
        let path = dir.join("manifest.json");
        write_file(&path, &serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(&["kind", "n", "bias"]);
        t.push(crate::row!["gp", 50usize, 0.1]);
        t.push(crate::row!["renorm", 200usize, None::<f64>]);
        assert_eq!(t.to_csv(), "kind,n,bias\ngp,50,0.1\nrenorm,200,\n");
        assert_eq!(t.floats("n").unwrap(), vec![50.0, 200.0]);
        assert!(t.floats("bias").unwrap()[1].is_nan());
        assert_eq!(t.select("kind", "gp").unwrap().rows.len(), 1);
        assert!(t.column("missing").is_err());
    }

    #[test]
    fn writes_manifest_and_kernels() {
        let mut results = Table::new(&["x"]);
        results.push(crate::row![1.5]);
        let k = labeled_matrix(
            &DMatrix::identity(2, 2),
            &["a".into(), "b".into()],
            &["a".into(), "b".into()],
        );
        let run = Run {
            subcommand: "depth".into(),
            parameters: [("seed".to_string(), "3".to_string())].into(),
            output: RunOutput {
                results: Some(results),
                kernels: vec![("k".into(), k)],
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = run.write(dir.path()).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(manifest).unwrap()).unwrap();
        assert_eq!(v["parameters"]["seed"], "3");
        assert_eq!(v["outputs"][1], "kernels/k.csv");
        let k = std::fs::read_to_string(dir.path().join("kernels/k.csv")).unwrap();
        assert_eq!(k, "row,a,b\na,1.0,0.0\nb,0.0,1.0\n");
    }
}
