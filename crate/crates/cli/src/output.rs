//! CSV tables, the run manifest and plot-data files. All writing happens on
//! the calling thread.

use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// One Monte Carlo estimate next to its oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub x: f64,
    pub t: f64,
    pub beta: f64,
    pub n_trees: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub oracle: f64,
    pub abs_error: f64,
    pub within_3se: u8,
}

impl ResultRow {
    pub fn new(x: f64, t: f64, beta: f64, n_trees: usize, estimate: f64, stderr: f64, oracle: f64) -> Self {
        let abs_error = (estimate - oracle).abs();
        let within_3se = u8::from(abs_error <= 3.0 * stderr);
        Self { x, t, beta, n_trees, estimate, stderr, oracle, abs_error, within_3se }
    }
}

fn csv_err(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::new(io::ErrorKind::Other, format!("{other:?}")),
    }
}

/// Writes serializable rows with a header taken from the field names.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()
}

/// Plain numeric table with explicit headers.
pub fn write_table(path: &Path, headers: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(headers).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()
}

/// Whitespace-separated blocks for gnuplot and similar tools: a `#` header,
/// then one block per series separated by two blank lines.
pub fn write_plot_data(path: &Path, columns: &[&str], blocks: &[(String, Vec<Vec<f64>>)]) -> io::Result<()> {
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# {}", columns.join(" "))?;
    for (i, (label, rows)) in blocks.iter().enumerate() {
        if i > 0 {
            writeln!(w)?;
            writeln!(w)?;
        }
        writeln!(w, "# {label}")?;
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(" "))?;
        }
    }
    w.flush()
}

/// Ordered `key = value` pairs. Values are kept on one line.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        let key = key.into();
        let value = escape(&value.to_string());
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.render())
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\r', "\\r")
}

/// Output directory, created on first use.
#[derive(Debug, Clone)]
pub struct OutDir {
    pub root: PathBuf,
    pub written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    /// Path for `name`, recorded as an artifact.
    pub fn file(&mut self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        self.written.push(p.clone());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_csv_has_documented_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rows = vec![ResultRow::new(0.5, 0.2, 0.1, 100, 1.25, 0.01, 1.2), ResultRow::new(1.0, 0.2, 0.1, 100, f64::NAN, f64::NAN, 1.0)];
        write_rows(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x,t,beta,n_trees,estimate,stderr,oracle,abs_error,within_3se");
        let first = lines.next().unwrap();
        assert!(first.starts_with("0.5,0.2,0.1,100,1.25,0.01,1.2,"), "{first}");
        assert!(first.ends_with(",0"), "{first}");
        assert!(lines.next().unwrap().ends_with(",0"));
    }

    #[test]
    fn manifest_escapes_and_overwrites() {
        let mut m = Manifest::default();
        m.set("seed", 7);
        m.set("config", "a = 1\nb = 2");
        m.set("seed", 8);
        assert_eq!(m.render(), "seed = 8\nconfig = a = 1\\nb = 2\n");
        assert_eq!(m.get("seed"), Some("8"));
    }

    #[test]
    fn tables_and_plot_data() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_table(&p, &["a", "b"], vec![vec![1.0, 0.1], vec![2.0, 1e-20]]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n1,0.1\n2,0.00000000000000000001\n");
        let q = dir.path().join("p.dat");
        write_plot_data(&q, &["x", "y"], &[("one".into(), vec![vec![0.0, 1.0]]), ("two".into(), vec![])]).unwrap();
        assert_eq!(fs::read_to_string(&q).unwrap(), "# x y\n# one\n0 1\n\n\n# two\n");
    }
}
