//! Plot-ready renderings of measurement results.
//!
//! Everything funnels into a flat list of rows — one row per
//! (kind, layer-or-pair, step, metric, optional index) — and the two
//! renderings are derived from the same rows:
//!
//! * CSV: a versioned format comment, a fixed header, then the rows.
//!   Values print with shortest round-trip decimals, so reading the CSV
//!   back recovers the original f64 bits.
//! * JSON: the same rows grouped by series into a nested document.
//!
//! Vector-valued metrics (spectrum head, diagonals, barrier paths) emit
//! one row per entry, carrying the entry's position in the index column;
//! scalar metrics leave the index blank.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::{CheckpointSeries, EvalStats};
use crate::error::{Error, Result};
use crate::interventions::BarrierResult;
use crate::metrics::{analyze_series, MetricsRecord, RecordKind};
use crate::views::{default_pairs, AlignmentPair};

/// First line of every CSV report.
pub const CSV_FORMAT_LINE: &str = "# spdy metrics format v1";
/// Second line of every CSV report.
pub const CSV_HEADER: &str = "kind,layer,step,metric,index,value";
/// Format tag stamped into JSON reports.
pub const JSON_FORMAT_TAG: &str = "spdy-metrics-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub kind: String,
    pub layer: String,
    pub step: u64,
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub value: f64,
}

impl Row {
    pub fn scalar(kind: &str, layer: &str, step: u64, metric: &str, value: f64) -> Row {
        Row {
            kind: kind.into(),
            layer: layer.into(),
            step,
            metric: metric.into(),
            index: None,
            value,
        }
    }

    pub fn entry(kind: &str, layer: &str, step: u64, metric: &str, index: usize, value: f64) -> Row {
        Row {
            index: Some(index),
            ..Row::scalar(kind, layer, step, metric, value)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<Row>,
}

impl Report {
    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = Row>) {
        self.rows.extend(rows);
    }

    fn check_finite(&self) -> Result<()> {
        for row in &self.rows {
            if !row.value.is_finite() {
                return Err(Error::NonFiniteValue {
                    context: format!(
                        "report row {}/{}/{}/{}",
                        row.kind, row.layer, row.step, row.metric
                    ),
                    value: row.value,
                });
            }
        }
        Ok(())
    }

    /// Render as CSV with the versioned header. Every f64 prints in its
    /// shortest round-trip form.
    pub fn to_csv(&self) -> Result<String> {
        self.check_finite()?;
        let mut out = String::new();
        out.push_str(CSV_FORMAT_LINE);
        out.push('\n');
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&csv_field(&row.kind));
            out.push(',');
            out.push_str(&csv_field(&row.layer));
            out.push(',');
            out.push_str(&row.step.to_string());
            out.push(',');
            out.push_str(&csv_field(&row.metric));
            out.push(',');
            if let Some(i) = row.index {
                out.push_str(&i.to_string());
            }
            out.push(',');
            out.push_str(&format_value(row.value));
            out.push('\n');
        }
        Ok(out)
    }

    /// Render as nested JSON: rows grouped by (kind, layer) into series,
    /// each series listing its rows in order. Numerically identical to
    /// the CSV rendering.
    pub fn to_json(&self) -> Result<String> {
        self.check_finite()?;
        let mut groups: BTreeMap<(String, String), Vec<&Row>> = BTreeMap::new();
        for row in &self.rows {
            groups
                .entry((row.kind.clone(), row.layer.clone()))
                .or_default()
                .push(row);
        }
        let series: Vec<JsonSeries> = groups
            .into_iter()
            .map(|((kind, layer), rows)| JsonSeries {
                kind,
                layer,
                points: rows
                    .into_iter()
                    .map(|r| JsonPoint {
                        step: r.step,
                        metric: r.metric.clone(),
                        index: r.index,
                        value: r.value,
                    })
                    .collect(),
            })
            .collect();
        let doc = JsonReport {
            format: JSON_FORMAT_TAG.to_string(),
            series,
        };
        let text = serde_json::to_string_pretty(&doc).map_err(Error::Json)?;
        Ok(text + "\n")
    }
}

#[derive(Serialize, Deserialize)]
struct JsonReport {
    format: String,
    series: Vec<JsonSeries>,
}

#[derive(Serialize, Deserialize)]
struct JsonSeries {
    kind: String,
    layer: String,
    points: Vec<JsonPoint>,
}

#[derive(Serialize, Deserialize)]
struct JsonPoint {
    step: u64,
    metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    index: Option<usize>,
    value: f64,
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Shortest decimal string that parses back to exactly this f64.
fn format_value(x: f64) -> String {
    let mut s = format!("{x}");
    // Keep floats visually distinct from the integer columns.
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// Rows for one measurement record.
pub fn rows_from_record(rec: &MetricsRecord) -> Vec<Row> {
    let kind = match rec.kind {
        RecordKind::Layer => "layer",
        RecordKind::Pair => "pair",
    };
    let mut rows = Vec::new();
    let mut scalar = |metric: &str, value: f64| {
        rows.push(Row::scalar(kind, &rec.layer, rec.t, metric, value));
    };
    if let Some(v) = rec.eff_rank {
        scalar("eff_rank", v);
    }
    if let Some(v) = rec.norm_eff_rank {
        scalar("norm_eff_rank", v);
    }
    if let Some(v) = rec.sva_score {
        scalar("sva_score", v);
    }
    if let Some(v) = rec.align_score {
        scalar("align_score", v);
    }
    scalar("score_truncated", rec.score_truncated as u8 as f64);
    scalar("degenerate_spectrum", rec.degenerate_spectrum as u8 as f64);
    for (i, &v) in rec.sigma_head.iter().enumerate() {
        rows.push(Row::entry(kind, &rec.layer, rec.t, "sigma", i, v));
    }
    for (i, &v) in rec.sva_diag.iter().enumerate() {
        rows.push(Row::entry(kind, &rec.layer, rec.t, "sva_diag", i, v));
    }
    for (i, &v) in rec.align_diag.iter().enumerate() {
        rows.push(Row::entry(kind, &rec.layer, rec.t, "align_diag", i, v));
    }
    rows
}

/// Rows for one checkpoint's training statistics.
pub fn rows_from_eval(step: u64, eval: &EvalStats) -> Vec<Row> {
    let mut rows = vec![Row::scalar("run", "run", step, "train_loss", eval.train_loss)];
    if let Some(v) = eval.train_acc {
        rows.push(Row::scalar("run", "run", step, "train_acc", v));
    }
    if let Some(v) = eval.val_loss {
        rows.push(Row::scalar("run", "run", step, "val_loss", v));
    }
    if let Some(v) = eval.val_acc {
        rows.push(Row::scalar("run", "run", step, "val_acc", v));
    }
    rows.push(Row::scalar("run", "run", step, "lr", eval.lr));
    rows
}

/// Rows for a barrier scan: the loss path over alpha, the endpoint
/// losses, and the scalar verdicts. `label` names the endpoint pair.
pub fn rows_from_barrier(label: &str, res: &BarrierResult) -> Vec<Row> {
    let mut rows = Vec::new();
    for (i, (&alpha, &loss)) in res.alphas.iter().zip(res.losses.iter()).enumerate() {
        rows.push(Row::entry("barrier", label, 0, "alpha", i, alpha));
        rows.push(Row::entry("barrier", label, 0, "path_loss", i, loss));
    }
    rows.push(Row::scalar("barrier", label, 0, "endpoint_loss_a", res.endpoint_losses.0));
    rows.push(Row::scalar("barrier", label, 0, "endpoint_loss_b", res.endpoint_losses.1));
    rows.push(Row::scalar("barrier", label, 0, "barrier", res.barrier));
    rows.push(Row::scalar("barrier", label, 0, "lmc", res.lmc as u8 as f64));
    rows
}

/// Full report for a run: per-checkpoint training statistics plus the
/// measurement sweep over every analyzable layer and the given pairs
/// (the model's default chain when `pairs` is `None`).
pub fn report_for_series(
    series: &CheckpointSeries,
    pairs: Option<&[AlignmentPair]>,
) -> Result<Report> {
    let default;
    let pairs = match pairs {
        Some(p) => p,
        None => {
            let last = series
                .snapshots
                .last()
                .ok_or_else(|| Error::InvalidArgument {
                    context: "report of an empty series".into(),
                })?;
            default = default_pairs(&last.params.metas());
            &default
        }
    };
    let mut report = Report::default();
    for snap in &series.snapshots {
        report.extend(rows_from_eval(snap.step, &snap.eval));
    }
    for rec in analyze_series(&series.view(), pairs)? {
        report.extend(rows_from_record(&rec));
    }
    Ok(report)
}

/// Parse a value column printed by `to_csv`.
pub fn parse_csv_value(field: &str) -> Result<f64> {
    field.parse::<f64>().map_err(|_| Error::InvalidArgument {
        context: format!("unparseable CSV value '{field}'"),
    })
}
