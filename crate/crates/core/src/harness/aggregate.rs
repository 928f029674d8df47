//! Per-category summaries of run results.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, RunResult, TaskDescriptor};
use crate::metrics::MetricMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub id: u32,
    pub category: String,
    pub metrics: MetricMap,
}

/// Wall times are left out so identical runs summarize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tasks: Vec<TaskRow>,
    /// Category -> metric -> mean over the category's tasks reporting it.
    pub categories: BTreeMap<String, MetricMap>,
    /// Registry ids without a result, ascending.
    pub missing: Vec<u32>,
}

/// Category means in task-id order; every registry id without a result is
/// listed as missing.
pub fn aggregate(results: &[RunResult], registry: &[TaskDescriptor]) -> Result<Summary, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::NoResults);
    }
    let by_id: BTreeMap<u32, &TaskDescriptor> = registry.iter().map(|t| (t.id, t)).collect();
    let mut sorted: Vec<&RunResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.task_id);
    let mut tasks = Vec::with_capacity(sorted.len());
    let mut sums: BTreeMap<String, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    let mut done = BTreeSet::new();
    for r in sorted {
        let t = by_id.get(&r.task_id).ok_or(HarnessError::UnknownTask(r.task_id))?;
        if !done.insert(r.task_id) {
            return Err(HarnessError::DuplicateResult(r.task_id));
        }
        let cat = t.category.to_string();
        for (m, v) in &r.metrics {
            let e = sums.entry(cat.clone()).or_default().entry(m.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        tasks.push(TaskRow { id: r.task_id, category: cat, metrics: r.metrics.clone() });
    }
    let categories =
        sums.into_iter().map(|(c, ms)| (c, ms.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect())).collect();
    let missing = by_id.keys().copied().filter(|id| !done.contains(id)).collect();
    Ok(Summary { tasks, categories, missing })
}

impl Summary {
    /// Long format `scope,id,category,metric,value`; missing tasks get
    /// empty metric and value cells.
    pub fn to_csv(&self, registry: &[TaskDescriptor]) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scope", "id", "category", "metric", "value"])?;
        for t in &self.tasks {
            for (m, v) in &t.metrics {
                w.write_record(["task", &t.id.to_string(), &t.category, m, &v.to_string()])?;
            }
        }
        for (c, ms) in &self.categories {
            for (m, v) in ms {
                w.write_record(["category", "", c, m, &v.to_string()])?;
            }
        }
        for id in &self.missing {
            let cat = registry.iter().find(|t| t.id == *id).map(|t| t.category.to_string()).unwrap_or_default();
            w.write_record(["missing", &id.to_string(), &cat, "", ""])?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
    }
}

/// Writes `results/<id>.json`, `summary.csv` and `summary.json` under `dir`.
pub fn write_outputs(
    dir: &Path,
    results: &[RunResult],
    summary: &Summary,
    registry: &[TaskDescriptor],
) -> Result<(), HarnessError> {
    let rdir = dir.join("results");
    fs::create_dir_all(&rdir)?;
    for r in results {
        fs::write(rdir.join(format!("{}.json", r.task_id)), serde_json::to_string_pretty(r)? + "\n")?;
    }
    fs::write(dir.join("summary.csv"), summary.to_csv(registry)?)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)? + "\n")?;
    Ok(())
}
