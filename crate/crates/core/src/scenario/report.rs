//! Raw results, summary statistics, bound checks and file emission.
//!
//! Three files per scenario, all derived from the same raw rows:
//! `<name>.raw.csv` (every value of every repeat), `<name>.summary.csv`
//! (per test/metric statistics) and `<name>.report.txt` (human-readable
//! summary plus one PASS/FAIL line per configured bound). Floats are
//! written with six decimals so replays diff byte-for-byte.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::{BoundSpec, Stat};
use super::ScenarioError;

/// One metric value from one repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub repeat: u32,
    pub test: String,
    pub metric: String,
    pub value: f64,
}

/// Statistics of one metric across repeats. `sd` is the sample standard
/// deviation (n−1 denominator), zero for a single value.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub test: String,
    pub metric: String,
    pub n: u32,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

/// Outcome of one bound check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub bound: BoundSpec,
    pub observed: f64,
    pub passed: bool,
}

/// Everything a scenario run produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub repeats: u32,
    pub raw: Vec<RawRow>,
    pub summary: Vec<SummaryRow>,
    pub checks: Vec<CheckResult>,
}

/// Groups raw rows by (test, metric) in first-appearance order and reduces
/// each group to its summary statistics.
pub fn summarize(raw: &[RawRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    for row in raw {
        let key = (row.test.clone(), row.metric.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(test, metric)| {
            let values: Vec<f64> = raw
                .iter()
                .filter(|r| r.test == test && r.metric == metric)
                .map(|r| r.value)
                .collect();
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                (ss / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            SummaryRow {
                test,
                metric,
                n: n as u32,
                mean,
                sd,
                min,
                max,
            }
        })
        .collect()
}

/// Evaluates bounds against the summary. A bound naming a metric the run
/// never produced is an error, not a silent pass.
pub fn check_bounds(
    bounds: &[BoundSpec],
    summary: &[SummaryRow],
) -> Result<Vec<CheckResult>, ScenarioError> {
    bounds
        .iter()
        .map(|bound| {
            let row = summary
                .iter()
                .find(|s| s.test == bound.test && s.metric == bound.metric)
                .ok_or_else(|| {
                    ScenarioError::Invalid(format!(
                        "bound references {}/{} but the run produced no such metric",
                        bound.test, bound.metric
                    ))
                })?;
            let observed = match bound.stat {
                Stat::Mean => row.mean,
                Stat::Sd => row.sd,
                Stat::Min => row.min,
                Stat::Max => row.max,
            };
            let passed = bound.at_least.is_none_or(|lo| observed >= lo)
                && bound.at_most.is_none_or(|hi| observed <= hi);
            Ok(CheckResult {
                bound: bound.clone(),
                observed,
                passed,
            })
        })
        .collect()
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Writes the three report files into `dir` and returns their paths in
    /// (raw, summary, text) order.
    pub fn write_files(&self, dir: &Path) -> Result<[PathBuf; 3], ScenarioError> {
        std::fs::create_dir_all(dir).map_err(|source| ScenarioError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let raw_path = dir.join(format!("{}.raw.csv", self.scenario));
        let summary_path = dir.join(format!("{}.summary.csv", self.scenario));
        let text_path = dir.join(format!("{}.report.txt", self.scenario));
        write_file(&raw_path, &self.raw_csv())?;
        write_file(&summary_path, &self.summary_csv())?;
        write_file(&text_path, &self.text_report())?;
        Ok([raw_path, summary_path, text_path])
    }

    pub fn raw_csv(&self) -> String {
        let mut out = String::from("repeat,test,metric,value\n");
        for r in &self.raw {
            out.push_str(&format!("{},{},{},{:.6}\n", r.repeat, r.test, r.metric, r.value));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("test,metric,n,mean,sd,min,max\n");
        for s in &self.summary {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
                s.test, s.metric, s.n, s.mean, s.sd, s.min, s.max
            ));
        }
        out
    }

    pub fn text_report(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "scenario {} (seed {}, {} repeat{})\n",
            self.scenario,
            self.seed,
            self.repeats,
            if self.repeats == 1 { "" } else { "s" }
        ));
        let mut current_test = String::new();
        for s in &self.summary {
            if s.test != current_test {
                current_test = s.test.clone();
                out.push_str(&format!("\n[{current_test}]\n"));
            }
            out.push_str(&format!(
                "  {:<28} n={:<5} mean={:>12.6} sd={:>11.6} min={:>12.6} max={:>12.6}\n",
                s.metric, s.n, s.mean, s.sd, s.min, s.max
            ));
        }
        if !self.checks.is_empty() {
            out.push_str("\nbounds:\n");
            for c in &self.checks {
                let verdict = if c.passed { "PASS" } else { "FAIL" };
                let limits = match (c.bound.at_least, c.bound.at_most) {
                    (Some(lo), Some(hi)) => format!("in [{lo}, {hi}]"),
                    (Some(lo), None) => format!(">= {lo}"),
                    (None, Some(hi)) => format!("<= {hi}"),
                    (None, None) => String::from("(no limits)"),
                };
                out.push_str(&format!(
                    "  {verdict} {}/{} {} = {:.6} expected {limits}\n",
                    c.bound.test, c.bound.metric, c.bound.stat, c.observed
                ));
            }
        }
        let overall = if self.all_passed() { "PASS" } else { "FAIL" };
        out.push_str(&format!(
            "\noverall: {overall} ({}/{} bounds)\n",
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len()
        ));
        out
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), ScenarioError> {
    let mut f = std::fs::File::create(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(content.as_bytes()).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}
