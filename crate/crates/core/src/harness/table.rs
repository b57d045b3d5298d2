use std::fs;
use std::path::Path;

use super::{ExperimentConfig, HarnessError};

pub const TABLE_MAGIC: &str = "# lorenz-cg table";

/// CSV output: `#`-prefixed provenance header (command, full config,
/// notes), then the column line and rows of decimal strings.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub command: String,
    pub config: ExperimentConfig,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Derived results such as fitted slopes, as `key=value`.
    pub notes: Vec<(String, String)>,
}

impl ResultTable {
    pub fn new(command: &str, config: &ExperimentConfig, columns: &[&str]) -> Self {
        ResultTable {
            command: command.into(),
            config: config.clone(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn note(&mut self, key: &str, value: impl Into<String>) {
        self.notes.push((key.into(), value.into()));
    }

    pub fn note_value(&self, key: &str) -> Option<&str> {
        self.notes.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(TABLE_MAGIC);
        s.push('\n');
        s.push_str(&format!("# version={}\n", env!("CARGO_PKG_VERSION")));
        s.push_str(&format!("# command={}\n", self.command));
        for line in self.config.to_lines() {
            s.push_str(&format!("# config.{line}\n"));
        }
        for (k, v) in &self.notes {
            s.push_str(&format!("# note.{k}={v}\n"));
        }
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut lines = text.lines();
        if lines.next() != Some(TABLE_MAGIC) {
            return Err(HarnessError::Config("not a lorenz-cg table (missing header line)".into()));
        }
        let mut command = None;
        let mut config = ExperimentConfig::new();
        let mut notes = Vec::new();
        let mut columns = None;
        let mut rows = Vec::new();
        for line in lines {
            if let Some(h) = line.strip_prefix("# ") {
                if let Some(c) = h.strip_prefix("command=") {
                    command = Some(c.to_string());
                } else if let Some(kv) = h.strip_prefix("config.") {
                    let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
                    config.set(k, v);
                } else if let Some(kv) = h.strip_prefix("note.") {
                    let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
                    notes.push((k.to_string(), v.to_string()));
                }
                continue;
            }
            let cells: Vec<String> = line.split(',').map(str::to_string).collect();
            match &columns {
                None => columns = Some(cells),
                Some(cols) => {
                    if cells.len() != cols.len() {
                        return Err(HarnessError::Config(format!("row has {} cells, header has {}", cells.len(), cols.len())));
                    }
                    rows.push(cells);
                }
            }
        }
        Ok(ResultTable {
            command: command.ok_or_else(|| HarnessError::Config("table has no command line".into()))?,
            config,
            columns: columns.unwrap_or_default(),
            rows,
            notes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        fs::write(path, self.to_csv()).map_err(|e| HarnessError::Io(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let cfg = ExperimentConfig::new().with("q", "2").with("dt", "0.01");
        let mut t = ResultTable::new("sweep-k", &cfg, &["k", "error"]);
        t.push(vec!["0.1".into(), "1.5e-3".into()]);
        t.push(vec!["0.05".into(), "2.0e-4".into()]);
        t.note("slope", "3.9");
        let text = t.to_csv();
        assert!(text.starts_with("# lorenz-cg table\n"));
        assert!(text.contains("# config.dt=0.01\n"));
        let back = ResultTable::parse(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("error").unwrap(), vec!["1.5e-3", "2.0e-4"]);
        assert_eq!(back.note_value("slope"), Some("3.9"));
        assert!(ResultTable::parse("k,error\n").is_err());
    }
}
