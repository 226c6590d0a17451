//! Confusion-matrix statistics, multi-run confidence intervals, a baseline
//! significance test, and the cascaded correctness rule.
//!
//! Predictions outside the label set (the `Other` sentinel, unparseable
//! output) land in a reserved column: they are always wrong, count as a
//! false negative for the gold class, and are never dropped.
//!
//! Conventions: F1 and MCC with a zero denominator are 0; macro-F1 averages
//! over the whole label set, including classes with no support.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{golds} gold labels but {preds} predictions")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("gold label `{0}` is not in the label set")]
    UnknownGoldLabel(String),
    #[error("duplicate label `{0}` in label set")]
    DuplicateLabel(String),
    #[error("metric undefined on an empty matrix")]
    EmptyMatrix,
    #[error("need at least 2 runs, got {0}")]
    TooFewRuns(usize),
}

/// Column name used for out-of-set predictions in rendered output.
pub const RESERVED_COLUMN: &str = "<invalid>";

/// Gold x predicted counts over a label set plus one reserved column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    /// `counts[g][p]`, `p == labels.len()` is the reserved column.
    counts: Vec<Vec<u64>>,
    total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new<S: AsRef<str>>(labelset: &[S]) -> Result<Self, MetricsError> {
        let labels: Vec<String> = labelset.iter().map(|s| s.as_ref().to_string()).collect();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(MetricsError::DuplicateLabel(l.clone()));
            }
        }
        let k = labels.len();
        Ok(ConfusionMatrix {
            labels,
            counts: vec![vec![0; k + 1]; k],
            total: 0,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn add(&mut self, gold: &str, pred: &str) -> Result<(), MetricsError> {
        let g = self
            .index(gold)
            .ok_or_else(|| MetricsError::UnknownGoldLabel(gold.to_string()))?;
        let p = self.index(pred).unwrap_or(self.labels.len());
        self.counts[g][p] += 1;
        self.total += 1;
        Ok(())
    }

    /// Count of (gold, pred) pairs; `pred == None` addresses the reserved column.
    pub fn cell(&self, gold: &str, pred: Option<&str>) -> u64 {
        let Some(g) = self.index(gold) else { return 0 };
        let p = match pred {
            Some(p) => match self.index(p) {
                Some(i) => i,
                None => return 0,
            },
            None => self.labels.len(),
        };
        self.counts[g][p]
    }

    pub fn reserved_count(&self) -> u64 {
        self.counts.iter().map(|row| row[self.labels.len()]).sum()
    }

    pub fn class_counts(&self, class: usize) -> ClassCounts {
        let tp = self.counts[class][class];
        let row: u64 = self.counts[class].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[class]).sum();
        let fn_ = row - tp;
        let fp = col - tp;
        ClassCounts {
            tp,
            fp,
            fn_,
            tn: self.total - tp - fp - fn_,
        }
    }

    pub fn class_counts_for(&self, label: &str) -> Option<ClassCounts> {
        self.index(label).map(|i| self.class_counts(i))
    }

    fn correct(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Result<f64, MetricsError> {
        self.nonempty()?;
        Ok(self.correct() as f64 / self.total as f64)
    }

    fn nonempty(&self) -> Result<(), MetricsError> {
        if self.total == 0 {
            Err(MetricsError::EmptyMatrix)
        } else {
            Ok(())
        }
    }
}

pub fn confusion_matrix<S: AsRef<str>, T: AsRef<str>, U: AsRef<str>>(
    golds: &[S],
    preds: &[T],
    labelset: &[U],
) -> Result<ConfusionMatrix, MetricsError> {
    if golds.len() != preds.len() {
        return Err(MetricsError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let mut m = ConfusionMatrix::new(labelset)?;
    for (g, p) in golds.iter().zip(preds) {
        m.add(g.as_ref(), p.as_ref())?;
    }
    Ok(m)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc_binary: f64,
    pub support: u64,
}

fn f1_from(c: &ClassCounts) -> f64 {
    ratio(2.0 * c.tp as f64, (2 * c.tp + c.fp + c.fn_) as f64)
}

fn mcc_from(c: &ClassCounts) -> f64 {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    ratio(tp * tn - fp * fn_, den)
}

pub fn class_scores(matrix: &ConfusionMatrix, class: usize) -> ClassScores {
    let c = matrix.class_counts(class);
    ClassScores {
        precision: ratio(c.tp as f64, (c.tp + c.fp) as f64),
        recall: ratio(c.tp as f64, (c.tp + c.fn_) as f64),
        f1: f1_from(&c),
        mcc_binary: mcc_from(&c),
        support: c.tp + c.fn_,
    }
}

/// Pooled over the label set and the reserved column, so micro precision,
/// recall and F1 all equal accuracy.
pub fn micro_f1(matrix: &ConfusionMatrix) -> Result<f64, MetricsError> {
    matrix.nonempty()?;
    let tp = matrix.correct() as f64;
    let wrong = (matrix.total - matrix.correct()) as f64;
    // pooled FP == pooled FN == wrong once the reserved column is a pseudo-class
    Ok(ratio(2.0 * tp, 2.0 * tp + wrong + wrong))
}

pub fn macro_f1(matrix: &ConfusionMatrix) -> Result<f64, MetricsError> {
    matrix.nonempty()?;
    let k = matrix.labels.len();
    if k == 0 {
        return Ok(0.0);
    }
    Ok((0..k).map(|i| f1_from(&matrix.class_counts(i))).sum::<f64>() / k as f64)
}

pub fn f1_for(matrix: &ConfusionMatrix, label: &str) -> Result<f64, MetricsError> {
    matrix.nonempty()?;
    Ok(matrix.class_counts_for(label).map(|c| f1_from(&c)).unwrap_or(0.0))
}

/// One-vs-rest MCC for `label`.
pub fn mcc_binary(matrix: &ConfusionMatrix, label: &str) -> Result<f64, MetricsError> {
    matrix.nonempty()?;
    Ok(matrix.class_counts_for(label).map(|c| mcc_from(&c)).unwrap_or(0.0))
}

/// Generalized (Gorodkin) MCC over the full matrix, reserved column included
/// as an extra class with no gold support.
pub fn mcc_multiclass(matrix: &ConfusionMatrix) -> Result<f64, MetricsError> {
    matrix.nonempty()?;
    let k = matrix.labels.len();
    let s = matrix.total as f64;
    let c = matrix.correct() as f64;
    let mut sum_pt = 0.0;
    let mut sum_pp = 0.0;
    let mut sum_tt = 0.0;
    for j in 0..=k {
        let p: u64 = matrix.counts.iter().map(|r| r[j]).sum();
        let t: u64 = if j < k { matrix.counts[j].iter().sum() } else { 0 };
        let (p, t) = (p as f64, t as f64);
        sum_pt += p * t;
        sum_pp += p * p;
        sum_tt += t * t;
    }
    let den = ((s * s - sum_pp) * (s * s - sum_tt)).sqrt();
    Ok(ratio(c * s - sum_pt, den))
}

/// Student-t interval over per-run scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided 97.5% quantile of Student's t with `df` degrees of freedom.
pub fn t_critical_975(df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("df > 0")
        .inverse_cdf(0.975)
}

/// mean +/- t(0.975, n-1) * s / sqrt(n)
pub fn ci95(per_run_scores: &[f64]) -> Result<Interval, MetricsError> {
    let n = per_run_scores.len();
    if n < 2 {
        return Err(MetricsError::TooFewRuns(n));
    }
    let (mean, var) = mean_and_var(per_run_scores);
    let half = if var == 0.0 {
        0.0
    } else {
        t_critical_975((n - 1) as f64) * var.sqrt() / (n as f64).sqrt()
    };
    Ok(Interval {
        mean,
        lower: mean - half,
        upper: mean + half,
    })
}

/// Two-sided Welch t-test p-value.
///
/// Two zero-variance samples give p = 1 when their means agree and p = 0
/// otherwise.
pub fn compare_to_baseline(runs_a: &[f64], runs_b: &[f64]) -> Result<f64, MetricsError> {
    for runs in [runs_a, runs_b] {
        if runs.len() < 2 {
            return Err(MetricsError::TooFewRuns(runs.len()));
        }
    }
    let (ma, va) = mean_and_var(runs_a);
    let (mb, vb) = mean_and_var(runs_b);
    let (na, nb) = (runs_a.len() as f64, runs_b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

/// A note counts as correct only when Step 1 is right and the second step
/// it routed to is right too.
pub fn cascaded_correct<S: PartialEq>(
    step1_pred: bool,
    second_step_pred: Option<S>,
    gold_binary: bool,
    gold_label: S,
) -> bool {
    step1_pred == gold_binary && second_step_pred.is_some_and(|p| p == gold_label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub labels: Vec<String>,
    pub n_examples: u64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub mcc_multiclass: f64,
    /// Mean of the per-class binary MCCs; reported alongside the multiclass value.
    pub mcc_mean_binary: f64,
    pub per_class: BTreeMap<String, ClassScores>,
    pub invalid_predictions: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_macro: Option<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_micro: Option<Interval>,
    pub n_runs: usize,
}

impl MetricReport {
    pub fn from_matrix(matrix: &ConfusionMatrix) -> Result<Self, MetricsError> {
        let per_class: BTreeMap<String, ClassScores> = matrix
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), class_scores(matrix, i)))
            .collect();
        let k = per_class.len().max(1) as f64;
        Ok(MetricReport {
            labels: matrix.labels.clone(),
            n_examples: matrix.total,
            micro_f1: micro_f1(matrix)?,
            macro_f1: macro_f1(matrix)?,
            mcc_multiclass: mcc_multiclass(matrix)?,
            mcc_mean_binary: per_class.values().map(|c| c.mcc_binary).sum::<f64>() / k,
            per_class,
            invalid_predictions: matrix.reserved_count(),
            ci_macro: None,
            ci_micro: None,
            n_runs: 1,
        })
    }

    /// Report over several runs: point values from the first run, intervals
    /// across all runs.
    pub fn from_runs(matrices: &[ConfusionMatrix]) -> Result<Self, MetricsError> {
        let first = matrices.first().ok_or(MetricsError::TooFewRuns(0))?;
        let mut report = Self::from_matrix(first)?;
        report.n_runs = matrices.len();
        if matrices.len() >= 2 {
            let macros = matrices.iter().map(macro_f1).collect::<Result<Vec<_>, _>>()?;
            let micros = matrices.iter().map(micro_f1).collect::<Result<Vec<_>, _>>()?;
            report.ci_macro = Some(ci95(&macros)?);
            report.ci_micro = Some(ci95(&micros)?);
        }
        Ok(report)
    }

    /// Aligned per-class table with an Overall row.
    pub fn render_table(&self) -> String {
        let width = self
            .labels
            .iter()
            .map(String::len)
            .chain(["Overall (macro)".len()])
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>7}",
            "Label", "Precision", "Recall", "F1", "MCC", "Support"
        );
        let _ = writeln!(out, "{}", "-".repeat(width + 53));
        for l in &self.labels {
            let c = &self.per_class[l];
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.3}  {:>9.3}  {:>9.3}  {:>9.3}  {:>7}",
                l, c.precision, c.recall, c.f1, c.mcc_binary, c.support
            );
        }
        let _ = writeln!(out, "{}", "-".repeat(width + 53));
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>9.3}  {:>9.3}  {:>7}",
            "Overall (macro)", "", "", self.macro_f1, self.mcc_multiclass, self.n_examples
        );
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>9.3}  {:>9.3}  {:>7}",
            "Overall (micro)", "", "", self.micro_f1, self.mcc_mean_binary, self.n_examples
        );
        if let Some(ci) = self.ci_macro {
            let _ = writeln!(
                out,
                "Macro-F1 95% CI over {} runs: {:.3} [{:.3}, {:.3}]",
                self.n_runs, ci.mean, ci.lower, ci.upper
            );
        }
        if let Some(ci) = self.ci_micro {
            let _ = writeln!(
                out,
                "Micro-F1 95% CI over {} runs: {:.3} [{:.3}, {:.3}]",
                self.n_runs, ci.mean, ci.lower, ci.upper
            );
        }
        if self.invalid_predictions > 0 {
            let _ = writeln!(
                out,
                "{} predictions outside the label set scored as wrong",
                self.invalid_predictions
            );
        }
        out
    }
}
