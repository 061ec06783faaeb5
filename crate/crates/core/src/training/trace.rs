//! Loss traces persisted as CSV (step, split, component, value).

use crate::error::CoreError;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub split: String,
    pub component: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: u64, split: &str, component: &str, value: f64) {
        self.rows.push(TraceRow {
            step,
            split: split.to_string(),
            component: component.to_string(),
            value,
        });
    }

    /// Latest value recorded for (split, component).
    pub fn last(&self, split: &str, component: &str) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.split == split && r.component == component)
            .map(|r| r.value)
    }

    /// First value recorded for (split, component).
    pub fn first(&self, split: &str, component: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.split == split && r.component == component)
            .map(|r| r.value)
    }

    pub fn values(&self, split: &str, component: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.component == component)
            .map(|r| r.value)
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| r.value.is_finite())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CoreError> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        writeln!(f, "step,split,component,value")
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        for r in &self.rows {
            // {:?} prints the shortest f64 representation that round-trips.
            writeln!(f, "{},{},{},{:?}", r.step, r.split, r.component, r.value)
                .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, CoreError> {
        let f = std::fs::File::open(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let reader = BufReader::new(f);
        let mut rows = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| CoreError::io(path.display().to_string(), e))?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.splitn(4, ',').collect();
            if parts.len() != 4 {
                return Err(CoreError::Data(format!(
                    "{}:{}: malformed trace row",
                    path.display(),
                    i + 1
                )));
            }
            rows.push(TraceRow {
                step: parts[0].parse().map_err(|e| {
                    CoreError::Data(format!("{}:{}: bad step: {e}", path.display(), i + 1))
                })?,
                split: parts[1].to_string(),
                component: parts[2].to_string(),
                value: parts[3].parse().map_err(|e| {
                    CoreError::Data(format!("{}:{}: bad value: {e}", path.display(), i + 1))
                })?,
            });
        }
        Ok(LossTrace { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut t = LossTrace::new();
        t.push(0, "train", "bce", 0.6931471805599453);
        t.push(1, "train", "bce", 1.0 / 3.0);
        t.push(1, "val", "total", 42.0);
        t.write_csv(&path).unwrap();
        let r = LossTrace::read_csv(&path).unwrap();
        assert_eq!(r, t);
        // byte-identical on rewrite
        let path2 = dir.path().join("trace2.csv");
        r.write_csv(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
        assert_eq!(t.last("train", "bce"), Some(1.0 / 3.0));
        assert_eq!(t.first("train", "bce"), Some(0.6931471805599453));
    }
}
