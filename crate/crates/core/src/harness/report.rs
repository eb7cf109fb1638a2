//! Consolidated evaluation reports: JSON for machines, aligned text for people.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{Condition, TrialRecord};
use super::methods::Method;
use crate::error::{Error, Result};
use crate::sampler::GuidanceSettings;
use crate::world::TaskId;

/// Label of the high-resource reference column kept in the schema.
pub const REFERENCE_LABEL: &str = "pi0.5-DROID";
pub const REFERENCE_NOTE: &str = "not reproducible at desk scale";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: Method,
    pub seed: u64,
    pub task: TaskId,
    pub condition: Condition,
    pub guidance: GuidanceSettings,
    pub successes: usize,
    pub trials: usize,
    /// Trials whose rollout faulted; already counted as failures.
    pub errored: usize,
    pub records: Vec<TrialRecord>,
}

impl CellReport {
    pub fn from_records(
        method: Method,
        seed: u64,
        task: TaskId,
        condition: Condition,
        guidance: GuidanceSettings,
        records: Vec<TrialRecord>,
    ) -> Self {
        CellReport {
            method,
            seed,
            task,
            condition,
            guidance,
            successes: records.iter().filter(|r| r.success).count(),
            trials: records.len(),
            errored: records.iter().filter(|r| r.error.is_some()).count(),
            records,
        }
    }
}

/// A method row (for one seed) that could not be produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    pub method: Method,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceColumn {
    pub label: String,
    pub note: String,
}

impl Default for ReferenceColumn {
    fn default() -> Self {
        ReferenceColumn {
            label: REFERENCE_LABEL.into(),
            note: REFERENCE_NOTE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_digest: String,
    pub cells: Vec<CellReport>,
    pub failures: Vec<RowFailure>,
    pub reference: ReferenceColumn,
}

impl EvalReport {
    pub fn new(config_digest: impl Into<String>) -> Self {
        EvalReport {
            config_digest: config_digest.into(),
            cells: Vec::new(),
            failures: Vec::new(),
            reference: ReferenceColumn::default(),
        }
    }

    /// Appends a cell. A cell for the same (method, seed, task, condition)
    /// may not be written twice.
    pub fn push(&mut self, cell: CellReport) -> Result<()> {
        if self
            .cells
            .iter()
            .any(|c| (c.method, c.seed, c.task, c.condition) == (cell.method, cell.seed, cell.task, cell.condition))
        {
            return Err(Error::State(format!(
                "cell {} seed {} {} {} already recorded",
                cell.method.as_str(),
                cell.seed,
                cell.task,
                cell.condition.as_str()
            )));
        }
        self.cells.push(cell);
        Ok(())
    }

    /// Checks that every count agrees with its records.
    pub fn validate(&self) -> Result<()> {
        for c in &self.cells {
            let ok = c.trials == c.records.len()
                && c.successes == c.records.iter().filter(|r| r.success).count()
                && c.errored == c.records.iter().filter(|r| r.error.is_some()).count();
            if !ok {
                return Err(Error::Validation(format!(
                    "cell {} seed {} {} {} counts disagree with its records",
                    c.method.as_str(),
                    c.seed,
                    c.task,
                    c.condition.as_str()
                )));
            }
        }
        Ok(())
    }

    /// Successes and trials for a cell, summed over seeds.
    pub fn count(&self, method: Method, task: TaskId, condition: Condition) -> Option<(usize, usize)> {
        let mut hit = false;
        let (mut s, mut n) = (0, 0);
        for c in self.cells.iter().filter(|c| (c.method, c.task, c.condition) == (method, task, condition)) {
            hit = true;
            s += c.successes;
            n += c.trials;
        }
        hit.then_some((s, n))
    }

    /// Seed-averaged success rate of a cell.
    pub fn rate(&self, method: Method, task: TaskId, condition: Condition) -> Option<f64> {
        self.count(method, task, condition)
            .filter(|&(_, n)| n > 0)
            .map(|(s, n)| s as f64 / n as f64)
    }

    /// Success rate of one seed's cell.
    pub fn seed_rate(&self, method: Method, seed: u64, task: TaskId, condition: Condition) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| (c.method, c.seed, c.task, c.condition) == (method, seed, task, condition))
            .filter(|c| c.trials > 0)
            .map(|c| c.successes as f64 / c.trials as f64)
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut seen = Vec::new();
        for c in &self.cells {
            if !seen.contains(&c.method) {
                seen.push(c.method);
            }
        }
        seen
    }

    pub fn seeds(&self) -> BTreeSet<u64> {
        self.cells.iter().map(|c| c.seed).collect()
    }

    /// Aligned table: one row per method, one column per (task, condition),
    /// cells as successes/trials summed over seeds.
    pub fn table(&self) -> String {
        let columns: BTreeSet<(TaskId, Condition)> = self.cells.iter().map(|c| (c.task, c.condition)).collect();
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["method".to_string()];
        header.extend(columns.iter().map(|(t, c)| format!("{t} {}", c.as_str())));
        rows.push(header);
        for m in self.methods() {
            let mut row = vec![m.label().to_string()];
            for &(t, c) in &columns {
                row.push(match self.count(m, t, c) {
                    Some((s, n)) => format!("{s}/{n}"),
                    None => "-".into(),
                });
            }
            rows.push(row);
        }
        let mut reference = vec![self.reference.label.clone()];
        reference.extend(columns.iter().map(|_| "n/a".to_string()));
        rows.push(reference);
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, &w))| if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out.push_str(&format!(
            "{}: {}. seeds: {:?}. config {}\n",
            self.reference.label,
            self.reference.note,
            self.seeds(),
            self.config_digest
        ));
        for f in &self.failures {
            out.push_str(&format!("failed: {} seed {}: {}\n", f.method.label(), f.seed, f.error));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
