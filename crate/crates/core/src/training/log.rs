use std::path::Path;

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::eval::SCHEMA_LINE;

#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub iter: u64,
    pub name: String,
    pub value: f64,
}

/// Append-only training log with a non-decreasing iteration index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    records: Vec<LogRecord>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, iter: u64, name: &str, value: f64) -> Result<()> {
        if let Some(last) = self.records.last() {
            if iter < last.iter {
                return Err(Error::Input(format!("log iteration {iter} precedes {}", last.iter)));
            }
        }
        self.records.push(LogRecord {
            iter,
            name: name.to_string(),
            value,
        });
        Ok(())
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(iter, value)` of every record called `name`.
    pub fn series(&self, name: &str) -> Vec<(u64, f64)> {
        self.records
            .iter()
            .filter(|r| r.name == name)
            .map(|r| (r.iter, r.value))
            .collect()
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.records.iter().rev().find(|r| r.name == name).map(|r| r.value)
    }

    /// Drops records past `iter`, so a resumed run can append again.
    pub fn truncate_after(&mut self, iter: u64) {
        self.records.retain(|r| r.iter <= iter);
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{SCHEMA_LINE}\niter,loss_name,value\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{}\n", r.iter, r.name, r.value));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut log = MetricsLog::new();
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        match lines.next() {
            Some("iter,loss_name,value") => {}
            other => return Err(Error::Input(format!("unexpected log header {other:?}"))),
        }
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Input(format!("malformed log line {line:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            log.push(f[0].parse().map_err(|_| bad())?, f[1], f[2].parse().map_err(|_| bad())?)?;
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}
