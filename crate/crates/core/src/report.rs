//! Self-describing bias reports and before/after comparison.
//!
//! Every run carries the parameters it was computed with, so two reports can
//! be compared run-by-run: runs match when metric, category and parameters
//! are all equal. Runs without a partner are listed, never dropped.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::association::{HellingerResult, WeatResult};
use crate::corpus_io::{read_text, write_text, BiasCategory, LoadError, ModelManifest};
use crate::likelihood::{HonestResult, LogLikelihoodResult, StereoSetBreakdown, StereoSetResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error(
        "unknown metric {0:?} (expected one of weat, seat, hellinger, stereoset, crows, honest)"
    )]
    UnknownMetric(String),
    #[error("no matching runs between the two reports\nbefore:\n{}\nafter:\n{}", .before.join("\n"), .after.join("\n"))]
    NoMatches {
        before: Vec<String>,
        after: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Weat,
    Seat,
    Hellinger,
    Stereoset,
    Crows,
    Honest,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Weat,
        Metric::Seat,
        Metric::Hellinger,
        Metric::Stereoset,
        Metric::Crows,
        Metric::Honest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Weat => "weat",
            Metric::Seat => "seat",
            Metric::Hellinger => "hellinger",
            Metric::Stereoset => "stereoset",
            Metric::Crows => "crows",
            Metric::Honest => "honest",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_lowercase();
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or(ReportError::UnknownMetric(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricResult {
    Weat(WeatResult),
    Hellinger(HellingerResult),
    StereoSet(StereoSetResult),
    StereoSetBreakdown(StereoSetBreakdown),
    LogLikelihood(LogLikelihoodResult),
    Honest(HonestResult),
}

impl MetricResult {
    /// Named scalar values used for tables and deltas.
    pub fn headline(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let mut push = |name: &str, v: f64| out.push((name.to_string(), v));
        match self {
            MetricResult::Weat(r) => {
                push("s", r.statistic_s);
                if let Some(e) = r.effect_size {
                    push("effect_size", e);
                }
                push("p_value", r.p_value.p_value);
            }
            MetricResult::Hellinger(r) => push("distance", r.distance),
            MetricResult::StereoSet(r) => {
                push("lm_score", r.lm_score);
                push("ss_score", r.ss_score);
            }
            MetricResult::StereoSetBreakdown(r) => {
                push("micro_lm_score", r.micro.lm_score);
                push("micro_ss_score", r.micro.ss_score);
                push("macro_lm_score", r.macro_lm_score);
                push("macro_ss_score", r.macro_ss_score);
            }
            MetricResult::LogLikelihood(r) => {
                if let Some(p) = r.pct_stereo_preferred {
                    push("pct_stereo_preferred", p);
                }
                push("ties", r.ties as f64);
            }
            MetricResult::Honest(r) => {
                push("global", r.global);
                for (class, v) in &r.per_class {
                    push(&format!("class:{class}"), *v);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub metric: Metric,
    /// `None` for runs pooled over every category.
    pub category: Option<BiasCategory>,
    pub parameters: BTreeMap<String, Value>,
    pub seed: Option<u64>,
    pub result: MetricResult,
}

impl RunRecord {
    fn key(&self) -> (Metric, Option<&BiasCategory>, &BTreeMap<String, Value>) {
        (self.metric, self.category.as_ref(), &self.parameters)
    }

    fn category_label(&self) -> String {
        category_label(self.category.as_ref())
    }

    /// One-line description used in inventories.
    pub fn describe(&self) -> String {
        format!(
            "{} [{}] {}",
            self.metric,
            self.category_label(),
            serde_json::to_string(&self.parameters).expect("parameters serialize")
        )
    }
}

fn category_label(c: Option<&BiasCategory>) -> String {
    c.map_or_else(|| "all".to_string(), |c| c.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub engine_version: String,
    pub timestamp: DateTime<Utc>,
    pub manifest: ModelManifest,
    pub runs: Vec<RunRecord>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl BiasReport {
    pub fn new(manifest: ModelManifest) -> Self {
        BiasReport {
            engine_version: crate::ENGINE_VERSION.to_string(),
            timestamp: Utc::now(),
            manifest,
            runs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Wide table: one row per run, one column per headline value.
    pub fn render_text(&self) -> String {
        let mut columns: Vec<String> = Vec::new();
        for run in &self.runs {
            for (name, _) in run.result.headline() {
                if !columns.contains(&name) {
                    columns.push(name);
                }
            }
        }
        let mut header = vec![
            "metric".to_string(),
            "category".to_string(),
            "detail".to_string(),
        ];
        header.extend(columns.iter().cloned());
        let rows: Vec<Vec<String>> = self
            .runs
            .iter()
            .map(|run| {
                let values: BTreeMap<String, f64> = run.result.headline().into_iter().collect();
                let mut row = vec![run.metric.to_string(), run.category_label(), detail(run)];
                row.extend(
                    columns
                        .iter()
                        .map(|c| values.get(c).map_or("-".to_string(), |v| fmt_value(*v))),
                );
                row
            })
            .collect();
        let mut out = format!(
            "model: {} ({}, layer {})\nengine: {}\n\n",
            self.manifest.model_id,
            self.manifest.architecture_kind,
            self.manifest.layer,
            self.engine_version
        );
        out.push_str(&table(&header, &rows));
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

fn detail(run: &RunRecord) -> String {
    match &run.result {
        MetricResult::Weat(r) => format!(
            "{}/{} vs {}/{}",
            r.target_pair.0, r.target_pair.1, r.class_pair.0, r.class_pair.1
        ),
        MetricResult::Hellinger(r) => format!("{}/{}", r.class_pair.0, r.class_pair.1),
        MetricResult::StereoSet(r) => format!("n={}", r.n_sets),
        MetricResult::StereoSetBreakdown(r) => format!("n={}", r.micro.n_sets),
        MetricResult::LogLikelihood(r) => format!("n={}", r.n_pairs + r.ties),
        MetricResult::Honest(r) => format!("k={}", r.k),
    }
}

fn fmt_value(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e6) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].chars().count())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        format!("{}\n", padded.join("  ").trim_end())
    };
    let mut out = line(header);
    out.push_str(&line(
        &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>(),
    ));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

pub fn load_report(path: impl AsRef<Path>) -> Result<BiasReport, LoadError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| LoadError::schema(path, e.line().max(1), format!("malformed report: {e}")))
}

pub fn save_report(report: &BiasReport, path: impl AsRef<Path>) -> Result<(), LoadError> {
    write_text(path.as_ref(), &report.to_json())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueDelta {
    pub name: String,
    pub before: Option<f64>,
    pub after: Option<f64>,
    /// `after − before` when both sides have the value.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDelta {
    pub metric: Metric,
    pub category: Option<BiasCategory>,
    pub parameters: BTreeMap<String, Value>,
    pub values: Vec<ValueDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub before: BiasReport,
    pub after: BiasReport,
    pub deltas: Vec<RunDelta>,
    pub unmatched_before: Vec<String>,
    pub unmatched_after: Vec<String>,
}

fn value_deltas(before: &MetricResult, after: &MetricResult) -> Vec<ValueDelta> {
    let b = before.headline();
    let a: BTreeMap<String, f64> = after.headline().into_iter().collect();
    let mut names: Vec<String> = b.iter().map(|(n, _)| n.clone()).collect();
    names.extend(
        a.keys()
            .filter(|k| !names.contains(k))
            .cloned()
            .collect::<Vec<_>>(),
    );
    let b: BTreeMap<String, f64> = b.into_iter().collect();
    names
        .into_iter()
        .map(|name| {
            let (before, after) = (b.get(&name).copied(), a.get(&name).copied());
            ValueDelta {
                delta: before.zip(after).map(|(x, y)| y - x),
                name,
                before,
                after,
            }
        })
        .collect()
}

/// Pairs runs by (metric, category, parameters); duplicates pair in order.
pub fn compare_reports(
    before: &BiasReport,
    after: &BiasReport,
) -> Result<ComparisonReport, ReportError> {
    let mut taken = vec![false; after.runs.len()];
    let mut deltas = Vec::new();
    let mut unmatched_before = Vec::new();
    for run in &before.runs {
        let partner =
            (0..after.runs.len()).find(|&j| !taken[j] && after.runs[j].key() == run.key());
        match partner {
            Some(j) => {
                taken[j] = true;
                deltas.push(RunDelta {
                    metric: run.metric,
                    category: run.category.clone(),
                    parameters: run.parameters.clone(),
                    values: value_deltas(&run.result, &after.runs[j].result),
                });
            }
            None => unmatched_before.push(run.describe()),
        }
    }
    let unmatched_after: Vec<String> = after
        .runs
        .iter()
        .zip(&taken)
        .filter(|(_, t)| !**t)
        .map(|(r, _)| r.describe())
        .collect();
    if deltas.is_empty() {
        return Err(ReportError::NoMatches {
            before: before.runs.iter().map(RunRecord::describe).collect(),
            after: after.runs.iter().map(RunRecord::describe).collect(),
        });
    }
    Ok(ComparisonReport {
        before: before.clone(),
        after: after.clone(),
        deltas,
        unmatched_before,
        unmatched_after,
    })
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("comparison serializes");
        s.push('\n');
        s
    }

    /// Before/after/delta table, one row per matched value.
    pub fn render_text(&self) -> String {
        let header: Vec<String> = ["metric", "category", "value", "before", "after", "delta"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let show = |v: Option<f64>| v.map_or("-".to_string(), fmt_value);
        let rows: Vec<Vec<String>> = self
            .deltas
            .iter()
            .flat_map(|d| {
                d.values.iter().map(move |v| {
                    vec![
                        d.metric.to_string(),
                        category_label(d.category.as_ref()),
                        v.name.clone(),
                        show(v.before),
                        show(v.after),
                        v.delta.map_or("-".to_string(), |x| {
                            format!("{}{}", if x >= 0.0 { "+" } else { "" }, fmt_value(x))
                        }),
                    ]
                })
            })
            .collect();
        let mut out = format!(
            "before: {} @ {}\nafter:  {} @ {}\n\n",
            self.before.manifest.model_id,
            self.before.timestamp,
            self.after.manifest.model_id,
            self.after.timestamp
        );
        out.push_str(&table(&header, &rows));
        for (side, list) in [
            ("before", &self.unmatched_before),
            ("after", &self.unmatched_after),
        ] {
            for run in list {
                let _ = writeln!(out, "unmatched ({side}): {run}");
            }
        }
        out
    }
}
