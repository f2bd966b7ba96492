//! Confusion matrices and support-weighted precision/recall/F1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{golds} gold labels but {preds} predictions")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("nothing to evaluate")]
    Empty,
}

/// 2×2 counts indexed `[gold][pred]` by [`Label::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, gold: Label, pred: Label) -> u64 {
        self.counts[gold.index()][pred.index()]
    }
}

pub fn confusion(golds: &[Label], preds: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if golds.len() != preds.len() {
        return Err(EvalError::LengthMismatch { golds: golds.len(), preds: preds.len() });
    }
    if golds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut m = ConfusionMatrix::default();
    for (g, p) in golds.iter().zip(preds) {
        m.counts[g.index()][p.index()] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub offensive: ClassMetrics,
    pub not_offensive: ClassMetrics,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub n: u64,
}

impl MetricsReport {
    pub fn class(&self, label: Label) -> &ClassMetrics {
        match label {
            Label::Offensive => &self.offensive,
            Label::NotOffensive => &self.not_offensive,
        }
    }

    /// Builds a report from per-class figures, deriving the weighted
    /// aggregates from the class supports.
    pub fn from_classes(offensive: ClassMetrics, not_offensive: ClassMetrics) -> MetricsReport {
        let n = offensive.support + not_offensive.support;
        let weigh = |f: fn(&ClassMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                (offensive.support as f64 * f(&offensive) + not_offensive.support as f64 * f(&not_offensive)) / n as f64
            }
        };
        MetricsReport {
            weighted_precision: weigh(|c| c.precision),
            weighted_recall: weigh(|c| c.recall),
            weighted_f1: weigh(|c| c.f1),
            offensive,
            not_offensive,
            n,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and gold-support-weighted metrics. Undefined ratios are 0.
pub fn weighted_metrics(m: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    if m.total() == 0 {
        return Err(EvalError::Empty);
    }
    let class = |label: Label| {
        let i = label.index();
        let tp = m.counts[i][i];
        let gold: u64 = m.counts[i].iter().sum();
        let predicted: u64 = m.counts.iter().map(|row| row[i]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        ClassMetrics { precision, recall, f1, support: gold }
    };
    Ok(MetricsReport::from_classes(class(Label::Offensive), class(Label::NotOffensive)))
}

/// Rounds half-up to three decimals. Values within 1e-9 of a midpoint count
/// as the midpoint, so binary representation error does not flip a tie.
pub fn round3(x: f64) -> f64 {
    let scaled = x * 1000.0;
    let floor = scaled.floor();
    let up = scaled - floor >= 0.5 - 1e-9;
    (if up { floor + 1.0 } else { floor }) / 1000.0
}

/// Identifies the run a report belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub dataset: String,
    pub head: String,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderedClass {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderedWeighted {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub struct RenderedPerClass {
    pub offensive: RenderedClass,
    pub not_offensive: RenderedClass,
}

/// The evaluation report document.
///
/// `per_class` and `weighted` carry 3-decimal figures for display; `exact`
/// keeps the full-precision report so it can be recovered unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub dataset: String,
    pub head: String,
    pub seed: u64,
    pub config_digest: String,
    pub per_class: RenderedPerClass,
    pub weighted: RenderedWeighted,
    pub n: u64,
    pub exact: MetricsReport,
}

impl ReportDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<ReportDocument, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn metadata(&self) -> RunMetadata {
        RunMetadata {
            dataset: self.dataset.clone(),
            head: self.head.clone(),
            seed: self.seed,
            config_digest: self.config_digest.clone(),
        }
    }

    /// One row in the `| Run | Precision | Recall | F1 score |` table layout.
    pub fn table_row(&self) -> String {
        format!(
            "| {}/{} | {} | {} | {} |",
            self.dataset, self.head, self.weighted.p, self.weighted.r, self.weighted.f1
        )
    }
}

pub const TABLE_HEADER: &str = "| Run | Precision | Recall | F1 score |\n|---|---|---|---|";

pub fn render_report(r: &MetricsReport, meta: &RunMetadata) -> ReportDocument {
    let class = |c: &ClassMetrics| RenderedClass {
        p: round3(c.precision),
        r: round3(c.recall),
        f1: round3(c.f1),
        support: c.support,
    };
    ReportDocument {
        dataset: meta.dataset.clone(),
        head: meta.head.clone(),
        seed: meta.seed,
        config_digest: meta.config_digest.clone(),
        per_class: RenderedPerClass { offensive: class(&r.offensive), not_offensive: class(&r.not_offensive) },
        weighted: RenderedWeighted {
            p: round3(r.weighted_precision),
            r: round3(r.weighted_recall),
            f1: round3(r.weighted_f1),
        },
        n: r.n,
        exact: r.clone(),
    }
}
