//! Binary classification metrics: accuracy, ROC AUC, Cohen's kappa,
//! precision and recall.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::curator::{bank_predict, PatternBank};
use crate::netcore::ModelState;

/// Decision threshold shared by every scored predictor.
pub const MATCH_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn from_predictions(predicted: &[bool], labels: &[bool]) -> Self {
        assert_eq!(predicted.len(), labels.len());
        let mut c = Confusion::default();
        for (&p, &l) in predicted.iter().zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}

/// A score at or above `threshold` is a positive prediction.
pub fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> Confusion {
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    Confusion::from_predictions(&predicted, labels)
}

pub fn accuracy(c: &Confusion) -> Option<f64> {
    let n = c.total();
    (n > 0).then(|| (c.tp + c.tn) as f64 / n as f64)
}

pub fn precision(c: &Confusion) -> Option<f64> {
    let d = c.tp + c.fp;
    (d > 0).then(|| c.tp as f64 / d as f64)
}

pub fn recall(c: &Confusion) -> Option<f64> {
    let d = c.tp + c.fn_;
    (d > 0).then(|| c.tp as f64 / d as f64)
}

/// Cohen's kappa; `None` when chance agreement is 1 (or nothing was scored).
pub fn kappa(c: &Confusion) -> Option<f64> {
    let n = c.total() as f64;
    if n == 0.0 {
        return None;
    }
    let p_o = (c.tp + c.tn) as f64 / n;
    let pred_pos = (c.tp + c.fp) as f64 / n;
    let true_pos = (c.tp + c.fn_) as f64 / n;
    let p_e = pred_pos * true_pos + (1.0 - pred_pos) * (1.0 - true_pos);
    if p_e >= 1.0 {
        return None;
    }
    Some((p_o - p_e) / (1.0 - p_e))
}

/// Mann-Whitney AUC: the probability that a random positive outscores a
/// random negative, ties counting one half. `None` if a class is empty.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let mut ranked: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Count (positive, negative) pairs won by the positive, per tie group.
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < ranked.len() {
        let mut j = i;
        while j < ranked.len() && ranked[j].0 == ranked[i].0 {
            j += 1;
        }
        let group = &ranked[i..j];
        let pos = group.iter().filter(|x| x.1).count();
        let neg = group.len() - pos;
        wins += pos as f64 * neg_below as f64 + 0.5 * pos as f64 * neg as f64;
        neg_below += neg;
        i = j;
    }
    Some(wins / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub kappa: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub confusion: Confusion,
}

impl MetricsReport {
    pub fn from_scores(scores: &[f64], labels: &[bool]) -> Self {
        let c = confusion(scores, labels, MATCH_THRESHOLD);
        MetricsReport {
            accuracy: accuracy(&c),
            auc: auc(scores, labels),
            kappa: kappa(&c),
            precision: precision(&c),
            recall: recall(&c),
            confusion: c,
        }
    }
}

/// Anything that scores clips: continuous models or discrete banks.
pub enum Predictor<'a> {
    Model(&'a ModelState),
    Bank(&'a PatternBank),
    Scores(&'a [f64]),
}

/// Scores every clip in one pass and derives the full report. Discrete
/// predictors contribute scores in {0, 1}.
pub fn evaluate(predictor: &Predictor<'_>, dataset: &Dataset) -> MetricsReport {
    let scores: Vec<f64> = match predictor {
        Predictor::Model(state) => dataset.clips().iter().map(|c| state.predict(c)).collect(),
        Predictor::Bank(bank) => dataset
            .clips()
            .iter()
            .map(|c| if bank_predict(bank, c).positive { 1.0 } else { 0.0 })
            .collect(),
        Predictor::Scores(s) => s.to_vec(),
    };
    MetricsReport::from_scores(&scores, &dataset.labels())
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

/// Renders named reports as a fixed-width table.
pub struct MetricsTable<'a>(pub &'a [(String, MetricsReport)]);

impl fmt::Display for MetricsTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>9} {:>7} {:>7} {:>10} {:>7}",
            "Set", "Accuracy", "AUC", "Kappa", "Precision", "Recall"
        )?;
        for (name, r) in self.0 {
            writeln!(
                f,
                "{:<8} {:>9} {:>7} {:>7} {:>10} {:>7}",
                name,
                cell(r.accuracy),
                cell(r.auc),
                cell(r.kappa),
                cell(r.precision),
                cell(r.recall)
            )?;
        }
        Ok(())
    }
}
