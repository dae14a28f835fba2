//! Classification metrics over per-step path predictions, ROC-AUC for
//! the knowledge-tracing head, and the model-comparison table.
//!
//! Every (sample, step) pair counts as one classification instance.
//! Precision, recall, and F1 are computed per class and averaged with
//! class-support weights; all arithmetic is f64.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical row order for comparison output; unknown names sort after
/// these, alphabetically.
pub const ARCH_ORDER: [&str; 7] = [
    "rnn",
    "lstm",
    "seq2seq_rnn",
    "seq2seq_lstm",
    "seq2seq_rnn_attn",
    "seq2seq_lstm_attn",
    "multitask_lstm",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: usize,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Number of instances whose true class this is (`tp + fn`).
    pub support: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    /// Total prediction instances (samples times steps).
    pub support: u64,
    /// One row per class that occurs as a truth or a prediction.
    pub per_class: Vec<ClassStats>,
}

/// Tally per-step predictions against targets. Both are flat `[N * m]`
/// row-major; every entry is one instance.
pub fn path_metrics(decoded: &[usize], targets: &[usize], num_classes: usize) -> Result<MetricReport> {
    assert_eq!(
        decoded.len(),
        targets.len(),
        "path_metrics got {} predictions but {} targets",
        decoded.len(),
        targets.len()
    );
    assert!(!decoded.is_empty(), "path_metrics needs at least one instance");
    for (i, (&d, &t)) in decoded.iter().zip(targets).enumerate() {
        if d >= num_classes || t >= num_classes {
            return Err(Error::contract(format!(
                "path_metrics instance {i} has class {} outside 0..{num_classes}",
                d.max(t)
            )));
        }
    }

    let mut tp = vec![0u64; num_classes];
    let mut fp = vec![0u64; num_classes];
    let mut fn_ = vec![0u64; num_classes];
    for (&d, &t) in decoded.iter().zip(targets) {
        if d == t {
            tp[d] += 1;
        } else {
            fp[d] += 1;
            fn_[t] += 1;
        }
    }

    let total = decoded.len() as u64;
    let correct: u64 = tp.iter().sum();
    let accuracy = correct as f64 / total as f64;

    let mut per_class = Vec::new();
    let mut weighted_precision = 0.0f64;
    let mut weighted_f1 = 0.0f64;
    for c in 0..num_classes {
        if tp[c] + fp[c] + fn_[c] == 0 {
            continue;
        }
        let support = tp[c] + fn_[c];
        per_class.push(ClassStats { class: c, tp: tp[c], fp: fp[c], fn_: fn_[c], support });
        let predicted = tp[c] + fp[c];
        let precision = if predicted == 0 { 0.0 } else { tp[c] as f64 / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp[c] as f64 / support as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let w = support as f64 / total as f64;
        weighted_precision += w * precision;
        weighted_f1 += w * f1;
    }

    // Support-weighted recall telescopes: sum_c (support_c/N)(tp_c/support_c)
    // = sum_c tp_c / N, which is the accuracy. Computing it that way keeps
    // the identity exact instead of within rounding.
    let recall = correct as f64 / total as f64;

    Ok(MetricReport {
        accuracy,
        precision: weighted_precision,
        recall,
        f1: weighted_f1,
        auc: None,
        support: total,
        per_class,
    })
}

/// Probability that a random positive scores above a random negative,
/// ties counted half. Computed from average ranks, which is equivalent
/// to comparing all pairs.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    assert_eq!(
        scores.len(),
        labels.len(),
        "roc_auc got {} scores but {} labels",
        scores.len(),
        labels.len()
    );
    assert!(labels.iter().all(|&l| l <= 1), "roc_auc labels must be 0 or 1");
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Numeric(format!(
            "roc_auc undefined: need both classes, got {positives} positives and {negatives} negatives"
        )));
    }
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::Numeric(format!("roc_auc score {s} at index {i} is not finite")));
        }
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Average rank within each tied run (1-based ranks).
    let mut rank = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            rank[idx] = avg;
        }
        i = j + 1;
    }

    let rank_sum_pos: f64 = labels
        .iter()
        .zip(&rank)
        .filter(|(&l, _)| l == 1)
        .map(|(_, &r)| r)
        .sum();
    let p = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

fn arch_sort_key(name: &str) -> (usize, &str) {
    match ARCH_ORDER.iter().position(|&a| a == name) {
        Some(i) => (i, ""),
        None => (ARCH_ORDER.len(), name),
    }
}

fn ordered<'a>(reports: &'a BTreeMap<String, MetricReport>) -> Vec<(&'a str, &'a MetricReport)> {
    let mut rows: Vec<(&str, &MetricReport)> =
        reports.iter().map(|(k, v)| (k.as_str(), v)).collect();
    rows.sort_by_key(|(name, _)| arch_sort_key(name));
    rows
}

/// Aligned text table, one row per model, 4 decimal places. The AUC
/// column appears only when at least one report carries a value.
pub fn compare_table(reports: &BTreeMap<String, MetricReport>) -> String {
    assert!(!reports.is_empty(), "compare_table needs at least one report");
    let rows = ordered(reports);
    let with_auc = rows.iter().any(|(_, r)| r.auc.is_some());
    let name_width = rows.iter().map(|(n, _)| n.len()).max().unwrap().max("model".len());

    let mut out = String::new();
    write!(out, "{:<name_width$}  accuracy  f1      precision  recall", "model").unwrap();
    if with_auc {
        out.push_str("  auc");
    }
    out.push('\n');
    for (name, r) in rows {
        write!(
            out,
            "{:<name_width$}  {:.4}    {:.4}  {:.4}     {:.4}",
            name, r.accuracy, r.f1, r.precision, r.recall
        )
        .unwrap();
        if with_auc {
            match r.auc {
                Some(a) => write!(out, "  {a:.4}").unwrap(),
                None => out.push_str("  -"),
            }
        }
        out.push('\n');
    }
    out
}

/// Same content as [`compare_table`] in CSV form.
pub fn compare_csv(reports: &BTreeMap<String, MetricReport>) -> String {
    assert!(!reports.is_empty(), "compare_csv needs at least one report");
    let rows = ordered(reports);
    let with_auc = rows.iter().any(|(_, r)| r.auc.is_some());
    let mut out = String::from("model,accuracy,f1,precision,recall");
    if with_auc {
        out.push_str(",auc");
    }
    out.push('\n');
    for (name, r) in rows {
        write!(
            out,
            "{name},{:.4},{:.4},{:.4},{:.4}",
            r.accuracy, r.f1, r.precision, r.recall
        )
        .unwrap();
        if with_auc {
            match r.auc {
                Some(a) => write!(out, ",{a:.4}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let r = path_metrics(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.support, 4);
    }

    #[test]
    fn two_class_hand_tally() {
        // decoded [0,0], targets [0,1]: class 0 tp=1 fp=1, class 1 fn=1.
        let r = path_metrics(&[0, 0], &[0, 1], 2).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.recall, 0.5);
        // class 0: precision 1/2, support 1; class 1: precision 0, support 1.
        assert_eq!(r.precision, 0.25);
        assert_eq!(r.per_class.len(), 2);
        assert_eq!(r.per_class[0], ClassStats { class: 0, tp: 1, fp: 1, fn_: 0, support: 1 });
        assert_eq!(r.per_class[1], ClassStats { class: 1, tp: 0, fp: 0, fn_: 1, support: 1 });
    }

    #[test]
    fn unpredicted_class_contributes_zero_precision_but_is_listed() {
        let r = path_metrics(&[0, 0, 0], &[0, 1, 1], 2).unwrap();
        let c1 = r.per_class.iter().find(|c| c.class == 1).unwrap();
        assert_eq!(c1.tp + c1.fp, 0);
        assert_eq!(c1.support, 2);
    }

    #[test]
    fn out_of_range_class_is_contract_error() {
        let err = path_metrics(&[0, 5], &[0, 1], 3).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let err = path_metrics(&[0, 1], &[0, 9], 3).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn auc_worked_example() {
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auc_separated_is_one_constant_is_half() {
        let auc = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 1.0);
        let auc = roc_auc(&[0.5; 6], &[0, 1, 0, 1, 0, 1]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn auc_single_class_is_reported_undefined() {
        let err = roc_auc(&[0.1, 0.2], &[1, 1]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("undefined"));
    }

    #[test]
    fn table_rows_follow_fixed_order() {
        let mut reports = BTreeMap::new();
        let r = path_metrics(&[0], &[0], 1).unwrap();
        reports.insert("multitask_lstm".to_string(), r.clone());
        reports.insert("rnn".to_string(), r.clone());
        reports.insert("seq2seq_lstm".to_string(), r);
        let table = compare_table(&reports);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[1].starts_with("rnn"));
        assert!(lines[2].starts_with("seq2seq_lstm"));
        assert!(lines[3].starts_with("multitask_lstm"));
    }

    #[test]
    fn csv_roundtrip_preserves_values_to_4dp() {
        let mut reports = BTreeMap::new();
        let mut r = path_metrics(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        r.auc = Some(0.8125);
        reports.insert("lstm".to_string(), r.clone());
        let csv_text = compare_csv(&reports);
        let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
        let rec = rdr.records().next().unwrap().unwrap();
        assert_eq!(&rec[0], "lstm");
        assert!((rec[1].parse::<f64>().unwrap() - r.accuracy).abs() < 5e-5);
        assert!((rec[2].parse::<f64>().unwrap() - r.f1).abs() < 5e-5);
        assert!((rec[3].parse::<f64>().unwrap() - r.precision).abs() < 5e-5);
        assert!((rec[4].parse::<f64>().unwrap() - r.recall).abs() < 5e-5);
        assert!((rec[5].parse::<f64>().unwrap() - 0.8125).abs() < 5e-5);
    }

    #[test]
    fn single_report_single_row() {
        let mut reports = BTreeMap::new();
        reports.insert("rnn".to_string(), path_metrics(&[0], &[0], 1).unwrap());
        let table = compare_table(&reports);
        assert_eq!(table.lines().count(), 2);
        assert!(!table.contains("auc"), "no AUC column when no report has one");
    }
}
