//! JSON persistence for [`MetricsReport`].
//!
//! Keys: `tp, fp, fn, tn, precision, recall, f1, accuracy, auc, roc`. The four
//! count-derived metrics are written with four decimals; on load they are
//! recomputed from the counts and checked against the file, so a saved
//! report reloads to an identical value.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::metrics::{derive_metrics, ConfusionCounts, MetricsReport};

/// Largest tolerated gap between a stored 4-decimal metric and its
/// recomputed value.
const STORED_METRIC_TOLERANCE: f64 = 5e-5 + 1e-12;

#[derive(Serialize)]
struct ReportOut<'a> {
    tp: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    tn: u64,
    precision: Box<RawValue>,
    recall: Box<RawValue>,
    f1: Box<RawValue>,
    accuracy: Box<RawValue>,
    auc: Option<f64>,
    roc: &'a [[f64; 2]],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportIn {
    tp: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    tn: u64,
    precision: f64,
    recall: f64,
    f1: f64,
    accuracy: f64,
    auc: Option<f64>,
    roc: Vec<[f64; 2]>,
}

fn fixed4(v: f64) -> Result<Box<RawValue>> {
    RawValue::from_string(format!("{v:.4}")).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn report_to_json(report: &MetricsReport) -> Result<String> {
    let finite = [report.precision, report.recall, report.f1, report.accuracy]
        .into_iter()
        .chain(report.auc)
        .chain(report.roc.iter().flatten().copied())
        .all(f64::is_finite);
    if !finite {
        return Err(Error::Serialization("report contains a non-finite value".into()));
    }
    let out = ReportOut {
        tp: report.counts.tp,
        fp: report.counts.fp,
        fn_: report.counts.fn_,
        tn: report.counts.tn,
        precision: fixed4(report.precision)?,
        recall: fixed4(report.recall)?,
        f1: fixed4(report.f1)?,
        accuracy: fixed4(report.accuracy)?,
        auc: report.auc,
        roc: &report.roc,
    };
    serde_json::to_string_pretty(&out).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn report_from_json(text: &str) -> Result<MetricsReport> {
    let r: ReportIn = serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
    let mut report = derive_metrics(ConfusionCounts {
        tp: r.tp,
        fp: r.fp,
        fn_: r.fn_,
        tn: r.tn,
    });
    for (name, stored, derived) in [
        ("precision", r.precision, report.precision),
        ("recall", r.recall, report.recall),
        ("f1", r.f1, report.f1),
        ("accuracy", r.accuracy, report.accuracy),
    ] {
        if (stored - derived).abs() > STORED_METRIC_TOLERANCE {
            return Err(Error::Serialization(format!(
                "{name} = {stored} disagrees with counts ({derived})"
            )));
        }
    }
    report.auc = r.auc;
    report.roc = r.roc;
    Ok(report)
}

pub fn save_report(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    let mut text = report_to_json(report)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    report_from_json(&fs::read_to_string(path)?)
}
