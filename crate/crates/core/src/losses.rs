//! Loss terms for the joint objective.
//!
//! Probability tensors use the flat layout `[batch * k, width]` with rows
//! ordered sample-major: row `b * k + i` is step `i` of sample `b`. All
//! losses are built on the graph so gradients flow; the hard repetition
//! count is a plain evaluation metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

pub const PROB_CLAMP: f32 = 1e-12;

/// Scalar record of one loss evaluation. `total` is always exactly
/// `ce + lambda1 * bce + lambda2 * rep` in f32 (same operation order as
/// the graph), so logs can be checked against the identity bit-for-bit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f32,
    pub bce: f32,
    pub rep: f32,
    pub total: f32,
    pub lambda1: f32,
    pub lambda2: f32,
}

/// Mean negative log-likelihood of the target class per (sample, step)
/// instance. `probs` is `[rows, num_classes]` of normalized
/// probabilities; `targets` gives one class per row.
pub fn path_ce(g: &mut Graph, probs: Var, targets: &[usize]) -> Result<Var> {
    let shape = g.shape(probs).to_vec();
    assert_eq!(shape.len(), 2, "path_ce expects [rows, classes], got {shape:?}");
    let (rows, classes) = (shape[0], shape[1]);
    assert_eq!(targets.len(), rows, "path_ce got {rows} rows but {} targets", targets.len());
    for (i, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(Error::contract(format!(
                "path_ce target {t} at row {i} out of range for {classes} classes"
            )));
        }
    }
    let picked = g.pick(probs, targets);
    let logs = g.ln_clamped(picked, PROB_CLAMP);
    let total = g.sum(logs);
    Ok(g.scale(total, -1.0 / rows as f32))
}

/// Mean binary cross-entropy over `[rows, 1]` probabilities against 0/1
/// labels. Probabilities are clamped at both ends via the log floor.
pub fn dkt_bce(g: &mut Graph, probs: Var, labels: &[u8]) -> Var {
    let shape = g.shape(probs).to_vec();
    assert_eq!(shape.len(), 2, "dkt_bce expects [rows, 1], got {shape:?}");
    let rows = shape[0];
    assert_eq!(shape[1], 1, "dkt_bce expects [rows, 1], got {shape:?}");
    assert_eq!(labels.len(), rows, "dkt_bce got {rows} rows but {} labels", labels.len());
    assert!(labels.iter().all(|&l| l <= 1), "dkt_bce labels must be 0 or 1");

    let y: Vec<f32> = labels.iter().map(|&l| l as f32).collect();
    let y_not: Vec<f32> = y.iter().map(|v| 1.0 - v).collect();
    let yv = g.input(&[rows, 1], &y);
    let ynv = g.input(&[rows, 1], &y_not);
    let log_p = g.ln_clamped(probs, PROB_CLAMP);
    let one_minus = g.affine(probs, -1.0, 1.0);
    let log_q = g.ln_clamped(one_minus, PROB_CLAMP);
    let pos = g.mul(yv, log_p);
    let neg = g.mul(ynv, log_q);
    let both = g.add(pos, neg);
    let total = g.sum(both);
    g.scale(total, -1.0 / rows as f32)
}

/// Differentiable repetition surrogate. For each sample, sums the k step
/// distributions into expected concept counts `s_c` and penalizes
/// `max(0, s_c - 1)`; mean over the batch. Equals the hard count
/// `k - |unique|` exactly when every step is one-hot. Subgradient at the
/// hinge is 0.
pub fn rep_penalty_soft(g: &mut Graph, probs: Var, k: usize) -> Var {
    let shape = g.shape(probs).to_vec();
    assert_eq!(shape.len(), 2, "rep_penalty_soft expects [batch * k, classes], got {shape:?}");
    assert!(k > 0, "rep_penalty_soft needs k > 0");
    assert_eq!(
        shape[0] % k,
        0,
        "rep_penalty_soft: k={k} does not divide row count {}",
        shape[0]
    );
    let batch = shape[0] / k;
    let counts = g.sum_row_groups(probs, k);
    let excess = g.affine(counts, 1.0, -1.0);
    let hinged = g.relu(excess);
    let total = g.sum(hinged);
    g.scale(total, 1.0 / batch as f32)
}

/// Hard repetition count: mean over rows of `k - |unique(row)|`.
/// Evaluation-only; mirrors the soft penalty's arithmetic (integer total
/// times the f32 reciprocal of the batch size) so the one-hot
/// equivalence is exact.
pub fn rep_penalty_hard(decoded: &[usize], k: usize) -> f32 {
    assert!(k > 0, "rep_penalty_hard needs k > 0");
    assert_eq!(
        decoded.len() % k,
        0,
        "rep_penalty_hard: k={k} does not divide {} entries",
        decoded.len()
    );
    let batch = decoded.len() / k;
    if batch == 0 {
        return 0.0;
    }
    let mut repeats_total = 0usize;
    let mut seen = Vec::new();
    for row in decoded.chunks(k) {
        seen.clear();
        for &c in row {
            if seen.contains(&c) {
                repeats_total += 1;
            } else {
                seen.push(c);
            }
        }
    }
    repeats_total as f32 * (1.0 / batch as f32)
}

/// Weighted combination `ce + lambda1 * bce + lambda2 * rep`, assembled
/// on the graph so gradients flow through every term. A missing `bce`
/// (single-task baselines) contributes 0 to both graph and breakdown.
pub fn total_loss(
    g: &mut Graph,
    ce: Var,
    bce: Option<Var>,
    rep: Var,
    lambda1: f32,
    lambda2: f32,
) -> Result<(Var, LossBreakdown)> {
    if lambda1 < 0.0 || lambda2 < 0.0 {
        return Err(Error::config(format!(
            "loss weights must be non-negative, got lambda1={lambda1} lambda2={lambda2}"
        )));
    }
    let ce_val = g.value(ce)[0];
    let bce_val = bce.map(|b| g.value(b)[0]).unwrap_or(0.0);
    let rep_val = g.value(rep)[0];

    let mut total = ce;
    if let Some(b) = bce {
        let scaled = g.scale(b, lambda1);
        total = g.add(total, scaled);
    }
    let rep_scaled = g.scale(rep, lambda2);
    total = g.add(total, rep_scaled);

    // Same order as the graph ops above, so the identity is exact.
    let mut total_val = ce_val;
    if bce.is_some() {
        total_val += lambda1 * bce_val;
    }
    total_val += lambda2 * rep_val;
    debug_assert_eq!(total_val, g.value(total)[0]);

    Ok((
        total,
        LossBreakdown {
            ce: ce_val,
            bce: bce_val,
            rep: rep_val,
            total: total_val,
            lambda1,
            lambda2,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f32 = std::f32::consts::LN_2;

    fn close(a: f32, b: f32) -> bool {
        (a - b).abs() < 1e-6
    }

    #[test]
    fn ce_half_probability_is_ln2() {
        let mut g = Graph::new();
        let p = g.input(&[1, 3], &[0.5, 0.25, 0.25]);
        let ce = path_ce(&mut g, p, &[0]).unwrap();
        assert!(close(g.value(ce)[0], LN2));
    }

    #[test]
    fn ce_one_hot_on_target_is_zero() {
        let mut g = Graph::new();
        let p = g.input(&[2, 3], &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let ce = path_ce(&mut g, p, &[0, 2]).unwrap();
        assert_eq!(g.value(ce)[0], 0.0);
    }

    #[test]
    fn ce_uniform_is_ln_num_classes_for_any_targets() {
        let mut g = Graph::new();
        let p = g.input(&[3, 4], &[0.25; 12]);
        for targets in [[0, 1, 2], [3, 3, 3], [2, 0, 1]] {
            let ce = path_ce(&mut g, p, &targets).unwrap();
            assert!(close(g.value(ce)[0], 4.0f32.ln()));
        }
    }

    #[test]
    fn ce_out_of_range_target_is_contract_error() {
        let mut g = Graph::new();
        let p = g.input(&[1, 3], &[0.5, 0.25, 0.25]);
        let err = path_ce(&mut g, p, &[3]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn bce_half_probability_is_ln2() {
        let mut g = Graph::new();
        let p = g.input(&[1, 1], &[0.5]);
        let bce = dkt_bce(&mut g, p, &[1]);
        assert!(close(g.value(bce)[0], LN2));
    }

    #[test]
    fn bce_confident_correct_is_near_zero() {
        let mut g = Graph::new();
        let p = g.input(&[1, 1], &[1.0 - 1e-7]);
        let bce = dkt_bce(&mut g, p, &[1]);
        assert!(g.value(bce)[0].abs() < 1e-5);
    }

    #[test]
    fn bce_extreme_probabilities_stay_finite() {
        let mut g = Graph::new();
        let p = g.input(&[2, 1], &[0.0, 1.0]);
        let bce = dkt_bce(&mut g, p, &[1, 0]);
        assert!(g.value(bce)[0].is_finite());
    }

    #[test]
    fn rep_soft_counts_one_hot_repeat() {
        // Steps [a, b, a]: concept a has expected count 2 -> penalty 1.
        let mut g = Graph::new();
        #[rustfmt::skip]
        let p = g.input(&[3, 3], &[
            1.0, 0.0, 0.0,
            0.0, 1.0, 0.0,
            1.0, 0.0, 0.0,
        ]);
        let rep = rep_penalty_soft(&mut g, p, 3);
        assert_eq!(g.value(rep)[0], 1.0);
        assert_eq!(rep_penalty_hard(&[0, 1, 0], 3), 1.0);
    }

    #[test]
    fn rep_soft_zero_when_all_distinct() {
        let mut g = Graph::new();
        #[rustfmt::skip]
        let p = g.input(&[3, 3], &[
            1.0, 0.0, 0.0,
            0.0, 1.0, 0.0,
            0.0, 0.0, 1.0,
        ]);
        let rep = rep_penalty_soft(&mut g, p, 3);
        assert_eq!(g.value(rep)[0], 0.0);
    }

    #[test]
    fn rep_soft_fractional_example() {
        // Two steps of (0.6, 0.4): counts (1.2, 0.8) -> penalty 0.2.
        let mut g = Graph::new();
        let p = g.input(&[2, 2], &[0.6, 0.4, 0.6, 0.4]);
        let rep = rep_penalty_soft(&mut g, p, 2);
        assert!(close(g.value(rep)[0], 0.2));
    }

    #[test]
    fn rep_hard_examples() {
        assert_eq!(rep_penalty_hard(&[5, 5, 5], 3), 2.0);
        assert_eq!(rep_penalty_hard(&[1, 2, 3], 3), 0.0);
        // Mean over two rows: (1 + 0) / 2.
        assert_eq!(rep_penalty_hard(&[7, 7, 1, 2], 2), 0.5);
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut g = Graph::new();
        let ce = g.scalar(1.0);
        let bce = g.scalar(2.0);
        let rep = g.scalar(3.0);
        let (tv, bd) = total_loss(&mut g, ce, Some(bce), rep, 0.5, 0.1).unwrap();
        assert!(close(bd.total, 2.3));
        assert_eq!(bd.total, g.value(tv)[0]);
        assert_eq!(bd.total, bd.ce + bd.lambda1 * bd.bce + bd.lambda2 * bd.rep);
    }

    #[test]
    fn zero_weights_reduce_to_ce() {
        let mut g = Graph::new();
        let ce = g.scalar(0.7281);
        let bce = g.scalar(2.0);
        let rep = g.scalar(3.0);
        let (tv, bd) = total_loss(&mut g, ce, Some(bce), rep, 0.0, 0.0).unwrap();
        assert_eq!(bd.total, bd.ce);
        assert_eq!(g.value(tv)[0], bd.ce);
    }

    #[test]
    fn missing_bce_contributes_nothing() {
        let mut g = Graph::new();
        let ce = g.scalar(1.5);
        let rep = g.scalar(2.0);
        let (_, bd) = total_loss(&mut g, ce, None, rep, 0.5, 0.1).unwrap();
        assert_eq!(bd.bce, 0.0);
        assert!(close(bd.total, 1.7));
        assert_eq!(bd.total, bd.ce + bd.lambda1 * bd.bce + bd.lambda2 * bd.rep);
    }

    #[test]
    fn negative_weight_is_config_error() {
        let mut g = Graph::new();
        let ce = g.scalar(1.0);
        let rep = g.scalar(1.0);
        let err = total_loss(&mut g, ce, None, rep, -0.1, 0.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
