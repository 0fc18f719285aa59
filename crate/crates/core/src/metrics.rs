//! Confusion matrix and the support-weighted classification metrics.

use std::fmt::Write as _;
use std::str::FromStr;

use serde_json::{json, Value};

use crate::data::EmotionLabel;
use crate::error::{Error, Result};

/// `K×K` counts; entry `(t, p)` counts samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn from_pairs(preds: &[usize], truths: &[usize], k: usize) -> Result<Self> {
        if preds.len() != truths.len() {
            return Err(Error::Contract(format!(
                "{} predictions but {} labels",
                preds.len(),
                truths.len()
            )));
        }
        let mut cm = ConfusionMatrix::new(k);
        for (&p, &t) in preds.iter().zip(truths) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k || pred >= self.k {
            return Err(Error::Label(format!("pair (truth {truth}, prediction {pred}) outside [0, {})", self.k)));
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    /// Adds another matrix of the same size.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Contract(format!("cannot merge {}-class and {}-class matrices", self.k, other.k)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, t: usize) -> u64 {
        (0..self.k).map(|p| self.get(t, p)).sum()
    }

    pub fn col_sum(&self, p: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, p)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when the metric's denominator was zero and 0 was reported.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub total: u64,
    pub per_class: Vec<ClassMetrics>,
}

fn class_name(i: usize) -> String {
    EmotionLabel::ALL.get(i).map_or_else(|| format!("class{i}"), |l| l.name().to_string())
}

/// Precision/recall/F1 per class (0 with a flag on empty denominators) and
/// their averages weighted by true-class support.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Contract("cannot compute metrics of an empty confusion matrix".into()));
    }
    let mut per_class = Vec::with_capacity(cm.k);
    let (mut wp, mut wf) = (0.0, 0.0);
    // support · recall is the diagonal count itself, so the weighted recall
    // is summed in integers and equals the accuracy exactly.
    let mut recalled = 0u64;
    for c in 0..cm.k {
        let tp = cm.get(c, c) as f64;
        let (col, row) = (cm.col_sum(c), cm.row_sum(c));
        let precision = if col == 0 { 0.0 } else { tp / col as f64 };
        let recall = if row == 0 { 0.0 } else { tp / row as f64 };
        let sum = precision + recall;
        let f1 = if sum == 0.0 { 0.0 } else { 2.0 * precision * recall / sum };
        wp += row as f64 * precision;
        wf += row as f64 * f1;
        if row > 0 {
            recalled += cm.get(c, c);
        }
        per_class.push(ClassMetrics {
            name: class_name(c),
            support: row,
            precision,
            recall,
            f1,
            precision_undefined: col == 0,
            recall_undefined: row == 0,
            f1_undefined: sum == 0.0,
        });
    }
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        weighted_precision: wp / total as f64,
        weighted_recall: recalled as f64 / total as f64,
        weighted_f1: wf / total as f64,
        total,
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::Config(format!("unknown report format {s:?} (expected table, csv or json)"))),
        }
    }
}

pub const HEADLINE_KEYS: [&str; 4] = ["accuracy", "weighted_precision", "weighted_recall", "weighted_f1"];

impl MetricsReport {
    pub fn headline(&self) -> [f64; 4] {
        [self.accuracy, self.weighted_precision, self.weighted_recall, self.weighted_f1]
    }

    fn flags(c: &ClassMetrics) -> String {
        let names = [
            (c.precision_undefined, "precision"),
            (c.recall_undefined, "recall"),
            (c.f1_undefined, "f1"),
        ];
        names.iter().filter(|(f, _)| *f).map(|(_, n)| *n).collect::<Vec<_>>().join("|")
    }

    fn to_json(&self) -> Value {
        let mut obj = serde_json::Map::new();
        for (k, v) in HEADLINE_KEYS.iter().zip(self.headline()) {
            obj.insert(k.to_string(), json!(v));
        }
        let classes: Vec<Value> = self
            .per_class
            .iter()
            .map(|c| {
                json!({
                    "class": c.name,
                    "support": c.support,
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": c.f1,
                    "undefined": Self::flags(c),
                })
            })
            .collect();
        obj.insert("per_class".into(), Value::Array(classes));
        obj.insert("total".into(), json!(self.total));
        Value::Object(obj)
    }
}

/// Renders the report. Headline metrics always come first, in the order
/// accuracy, weighted precision, weighted recall, weighted F1.
///
/// CSV puts the headline header and row on the first two lines, then a
/// blank line and the per-class rows. Values are written at full precision.
pub fn report_emit(report: &MetricsReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Table => {
            let titles = ["Accuracy", "Weighted Precision", "Weighted Recall", "Weighted F1"];
            let _ = writeln!(out, "{}", titles.map(|t| format!("{t:>18}")).join(""));
            let _ = writeln!(out, "{}", report.headline().map(|v| format!("{v:>18.4}")).join(""));
            let _ = writeln!(out);
            let _ = writeln!(out, "{:<10}{:>9}{:>11}{:>9}{:>9}  undefined", "class", "support", "precision", "recall", "f1");
            for c in &report.per_class {
                let _ = writeln!(
                    out,
                    "{:<10}{:>9}{:>11.4}{:>9.4}{:>9.4}  {}",
                    c.name,
                    c.support,
                    c.precision,
                    c.recall,
                    c.f1,
                    MetricsReport::flags(c)
                );
            }
        }
        ReportFormat::Csv => {
            let _ = writeln!(out, "{}", HEADLINE_KEYS.join(","));
            let _ = writeln!(out, "{}", report.headline().map(|v| v.to_string()).join(","));
            let _ = writeln!(out);
            let _ = writeln!(out, "class,support,precision,recall,f1,undefined");
            for c in &report.per_class {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    c.name,
                    c.support,
                    c.precision,
                    c.recall,
                    c.f1,
                    MetricsReport::flags(c)
                );
            }
        }
        ReportFormat::Json => {
            out = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
            out.push('\n');
        }
    }
    out
}
