use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{MetricsError, DELTA_T_DEFINITION};

/// Column order of the per-stage metrics file. Changing it breaks the golden
/// file test on purpose.
pub const REPORT_COLUMNS: [&str; 10] = [
    "method",
    "stage",
    "k",
    "users",
    "skipped_users",
    "hr",
    "ndcg",
    "tgf",
    "unf",
    "nc",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: u32,
    /// Users evaluated (those with positives in the stage).
    pub users: usize,
    /// Users skipped for lack of positives.
    pub skipped_users: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub tgf: f64,
    pub unf: f64,
    pub nc: f64,
}

/// Per-stage metrics of one method at a fixed K.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub k: usize,
    pub stages: Vec<StageMetrics>,
}

/// Stage-averaged metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub k: usize,
    pub stages: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub tgf: f64,
    pub unf: f64,
    pub nc: f64,
}

impl MetricsReport {
    pub fn new(method: impl Into<String>, k: usize) -> Self {
        Self {
            method: method.into(),
            k,
            stages: Vec::new(),
        }
    }

    pub fn summary(&self) -> Summary {
        let n = self.stages.len().max(1) as f64;
        let mean = |f: fn(&StageMetrics) -> f64| self.stages.iter().map(f).sum::<f64>() / n;
        Summary {
            method: self.method.clone(),
            k: self.k,
            stages: self.stages.len(),
            hr: mean(|s| s.hr),
            ndcg: mean(|s| s.ndcg),
            tgf: mean(|s| s.tgf),
            unf: mean(|s| s.unf),
            nc: mean(|s| s.nc),
        }
    }

    /// Comma-separated, one row per stage, columns as [`REPORT_COLUMNS`].
    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                self.method, s.stage, self.k, s.users, s.skipped_users, s.hr, s.ndcg, s.tgf, s.unf, s.nc
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let bad = |msg: String| MetricsError::Incompatible(msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty metrics file".into()))?;
        if header != REPORT_COLUMNS.join(",") {
            return Err(bad(format!("unexpected header `{header}`")));
        }
        let mut report: Option<MetricsReport> = None;
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != REPORT_COLUMNS.len() {
                return Err(bad(format!("row {} has {} columns", n + 2, cols.len())));
            }
            let num = |i: usize| -> Result<f64, MetricsError> {
                cols[i]
                    .parse()
                    .map_err(|_| bad(format!("row {}: `{}` is not a number", n + 2, cols[i])))
            };
            let k = num(2)? as usize;
            let r = report.get_or_insert_with(|| MetricsReport::new(cols[0], k));
            if r.method != cols[0] || r.k != k {
                return Err(bad(format!("row {} mixes methods or K", n + 2)));
            }
            r.stages.push(StageMetrics {
                stage: num(1)? as u32,
                users: num(3)? as usize,
                skipped_users: num(4)? as usize,
                hr: num(5)?,
                ndcg: num(6)?,
                tgf: num(7)?,
                unf: num(8)?,
                nc: num(9)?,
            });
        }
        report.ok_or_else(|| bad("metrics file has no rows".into()))
    }

    /// Structured summary: stage averages plus the δT definition in force.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            summary: Summary,
            delta_t_definition: &'a str,
            stages: &'a [StageMetrics],
        }
        serde_json::to_string_pretty(&Doc {
            summary: self.summary(),
            delta_t_definition: DELTA_T_DEFINITION,
            stages: &self.stages,
        })
        .expect("report serializes")
    }
}
