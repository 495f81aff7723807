use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::anyhow;
use fairagent::metrics::{tradeoff_delta_t, MetricsReport, StageMetrics, DELTA_T_DEFINITION, REPORT_COLUMNS};

use crate::error::{CliError, CliResult, Classify};
use crate::manifest::Manifest;

/// Header of `comparison.csv`.
pub const COMPARISON_COLUMNS: [&str; 9] = ["method", "stages", "k", "hr", "ndcg", "tgf", "unf", "nc", "delta_t"];

type Column = fn(&StageMetrics) -> f64;

const SERIES: [(&str, Column); 5] = [
    ("hr", |s| s.hr),
    ("ndcg", |s| s.ndcg),
    ("tgf", |s| s.tgf),
    ("unf", |s| s.unf),
    ("nc", |s| s.nc),
];

fn read_run(dir: &Path) -> CliResult<MetricsReport> {
    let path = dir.join("metrics.csv");
    let text = fs::read_to_string(&path).data(|| format!("cannot read {}", path.display()))?;
    MetricsReport::from_csv(&text).data(|| format!("{} is not a metrics file", path.display()))
}

/// Comparison table, per-stage rows and plot series for `runs`, with δT
/// measured against `baseline`.
pub fn report(runs: &[std::path::PathBuf], baseline: Option<&Path>, out: &Path, force: bool) -> CliResult {
    let reports = runs.iter().map(|d| read_run(d)).collect::<CliResult<Vec<_>>>()?;
    let first = &reports[0];
    for (r, dir) in reports.iter().zip(runs).skip(1) {
        if r.k != first.k {
            return Err(CliError::Data(anyhow!(
                "runs disagree on K: {} has K = {}, {} has K = {}",
                runs[0].display(),
                first.k,
                dir.display(),
                r.k
            )));
        }
        if r.stages.len() != first.stages.len() {
            return Err(CliError::Data(anyhow!(
                "runs disagree on the number of stages: {} has {}, {} has {}",
                runs[0].display(),
                first.stages.len(),
                dir.display(),
                r.stages.len()
            )));
        }
    }
    let base = match baseline {
        Some(dir) => {
            let b = read_run(dir)?;
            if b.k != first.k || b.stages.len() != first.stages.len() {
                return Err(CliError::Data(anyhow!(
                    "baseline {} has K = {} over {} stages, runs have K = {} over {}",
                    dir.display(),
                    b.k,
                    b.stages.len(),
                    first.k,
                    first.stages.len()
                )));
            }
            b
        }
        None => reports.iter().find(|r| r.method == "backbone").unwrap_or(first).clone(),
    };

    if out.exists() && out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) && !force {
        return Err(CliError::OutputExists(out.to_path_buf()));
    }
    fs::create_dir_all(out).runtime(|| format!("cannot create {}", out.display()))?;

    let base_summary = base.summary();
    let mut comparison = COMPARISON_COLUMNS.join(",") + "\n";
    let mut table = format!(
        "{:<24} {:>8} {:>8} {:>9} {:>8} {:>8} {:>9}\n",
        "method", "HR", "NDCG", "TGF", "UNF", "NC", "dT(%)"
    );
    for r in &reports {
        let s = r.summary();
        let dt = tradeoff_delta_t(&s, &base_summary).runtime(|| format!("delta_T of {}", r.method))?;
        let _ = writeln!(
            comparison,
            "{},{},{},{},{},{},{},{},{}",
            s.method, s.stages, s.k, s.hr, s.ndcg, s.tgf, s.unf, s.nc, dt
        );
        let _ = writeln!(
            table,
            "{:<24} {:>8.4} {:>8.4} {:>9.4} {:>8.4} {:>8.4} {:>9.2}",
            s.method, s.hr, s.ndcg, s.tgf, s.unf, s.nc, dt
        );
    }

    let mut stages = REPORT_COLUMNS.join(",") + "\n";
    for r in &reports {
        stages.extend(r.to_csv().lines().skip(1).map(|l| format!("{l}\n")));
    }

    let mut manifest = Manifest::new("report", None, None);
    let io = |e: std::io::Error| CliError::Runtime(e.into());
    manifest.write_file(out, "comparison.csv", comparison.as_bytes()).map_err(io)?;
    manifest.write_file(out, "stages.csv", stages.as_bytes()).map_err(io)?;
    for (name, get) in SERIES {
        let mut series = String::from("stage");
        for r in &reports {
            series.push(',');
            series.push_str(&r.method);
        }
        series.push('\n');
        for (j, st) in first.stages.iter().enumerate() {
            series.push_str(&st.stage.to_string());
            for r in &reports {
                let _ = write!(series, ",{}", get(&r.stages[j]));
            }
            series.push('\n');
        }
        manifest.write_file(out, &format!("series_{name}.csv"), series.as_bytes()).map_err(io)?;
    }
    manifest.finish(out).map_err(io)?;

    print!("{table}");
    println!("baseline: {}", base.method);
    println!("{DELTA_T_DEFINITION}");
    println!("wrote {}", out.display());
    Ok(())
}
