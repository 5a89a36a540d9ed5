use std::io::Write;
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};

/// A table of string cells with a header row.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Report {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn print<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut width: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (k, c) in r.iter().enumerate() {
                width[k] = width[k].max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&width)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        writeln!(w, "{}", line(&self.header).trim_end())?;
        for r in &self.rows {
            writeln!(w, "{}", line(r).trim_end())?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `min, avg, max` in seconds.
pub fn spread(samples: &[Duration]) -> [String; 3] {
    let s: Vec<f64> = samples.iter().map(Duration::as_secs_f64).collect();
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    let max = s.iter().copied().fold(0.0, f64::max);
    let avg = s.iter().sum::<f64>() / s.len().max(1) as f64;
    [min, avg, max].map(|v| format!("{v:.4}"))
}

pub fn sci(v: f64) -> String {
    format!("{v:.4e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_alignment() {
        let mut r = Report::new(&["a", "long_name"]);
        r.push(vec!["12345".into(), "x".into()]);
        let mut out = Vec::new();
        r.print(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s, "a      long_name\n12345  x\n");
    }

    #[test]
    fn spread_of_samples() {
        let s = spread(&[Duration::from_millis(100), Duration::from_millis(300)]);
        assert_eq!(s, ["0.1000", "0.2000", "0.3000"].map(String::from));
    }
}
