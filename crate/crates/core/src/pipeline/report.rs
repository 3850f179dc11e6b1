use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const REPORT_COLUMNS: [&str; 7] = [
    "run",
    "acc_pct",
    "f1_weighted",
    "gmean_paper",
    "gmean_standard",
    "params",
    "p95_ms",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub acc_pct: Option<f64>,
    pub f1_weighted: Option<f64>,
    pub gmean_paper: Option<f64>,
    pub gmean_standard: Option<f64>,
    pub params: Option<u64>,
    pub p95_ms: Option<f64>,
}

impl ReportRow {
    pub fn complete(&self) -> bool {
        self.acc_pct.is_some()
    }

    fn cells(&self) -> Vec<String> {
        let f = |v: Option<f64>, p: usize| v.map_or("NA".to_string(), |x| format!("{x:.p$}"));
        vec![
            self.run.clone(),
            f(self.acc_pct, 2),
            f(self.f1_weighted, 4),
            f(self.gmean_paper, 4),
            f(self.gmean_standard, 4),
            self.params.map_or("NA".into(), |p| p.to_string()),
            f(self.p95_ms, 3),
        ]
    }
}

fn read_json(path: &Path) -> Option<serde_json::Value> {
    serde_json::from_str(&fs::read_to_string(path).ok()?).ok()
}

/// One row per run directory under `dir` (any subdirectory holding a
/// `config.toml` or `metrics.json`), sorted by accuracy; incomplete runs last.
pub fn collect_report(dir: &Path) -> Result<Vec<ReportRow>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_dir()
            || !(path.join("config.toml").exists() || path.join("metrics.json").exists())
        {
            continue;
        }
        let m = read_json(&path.join("metrics.json"));
        let g = |k: &str| m.as_ref().and_then(|v| v["metrics"][k].as_f64());
        rows.push(ReportRow {
            run: entry.file_name().to_string_lossy().into_owned(),
            acc_pct: g("accuracy_pct"),
            f1_weighted: g("f1_weighted"),
            gmean_paper: g("gmean_paper"),
            gmean_standard: g("gmean_standard"),
            params: m.as_ref().and_then(|v| v["params"].as_u64()),
            p95_ms: read_json(&path.join("latency.json")).and_then(|v| v["p95_ms"].as_f64()),
        });
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("run directory {}", dir.display())));
    }
    rows.sort_by(|a, b| match (a.acc_pct, b.acc_pct) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.run.cmp(&b.run)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.run.cmp(&b.run),
    });
    Ok(rows)
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = REPORT_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.cells().join(","));
        s.push('\n');
    }
    s
}

pub fn report_text(rows: &[ReportRow]) -> String {
    let mut table: Vec<Vec<String>> = vec![REPORT_COLUMNS.iter().map(|c| c.to_string()).collect()];
    table.extend(rows.iter().map(ReportRow::cells));
    let widths: Vec<usize> = (0..REPORT_COLUMNS.len())
        .map(|i| table.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for (ri, row) in table.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(s, "{}", cells.join("  ").trim_end());
        if ri == 0 {
            let _ = writeln!(
                s,
                "{}",
                "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
            );
        }
    }
    let incomplete = rows.iter().filter(|r| !r.complete()).count();
    if incomplete > 0 {
        let _ = writeln!(s, "{incomplete} incomplete run(s) (missing metrics.json)");
    }
    s
}
