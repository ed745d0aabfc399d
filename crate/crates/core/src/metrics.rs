//! Threshold-free ranking metrics with anomalies as the positive class.
//!
//! Both metrics treat tied scores as a single threshold. For AUC-ROC a tied
//! positive/negative pair counts one half; for AUC-PR a block of tied
//! scores contributes one precision-recall point, so a constant score
//! vector yields the positive rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auc_pr: f64,
    pub auc_roc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn check(scores: &[f64], truth: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != truth.len() {
        return Err(Error::dim("scores vs truth", truth.len(), scores.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("score at index {i} is not finite")));
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass { n_pos, n_neg });
    }
    Ok((n_pos, n_neg))
}

/// Indices sorted by descending score, grouped into runs of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Mann-Whitney U statistic over `n_pos * n_neg`, computed from average
/// ranks.
pub fn auc_roc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = check(scores, truth)?;
    // Ascending ranks; tied blocks share the mean rank.
    let groups = tie_groups(scores);
    let n = scores.len();
    let mut rank_sum_pos = 0.0;
    let mut seen = 0usize;
    for g in &groups {
        // Descending position `seen..seen+len` is ascending rank
        // `n-seen-len+1 ..= n-seen`.
        let hi = (n - seen) as f64;
        let lo = (n - seen - g.len() + 1) as f64;
        let avg = 0.5 * (lo + hi);
        rank_sum_pos += avg * g.iter().filter(|&&i| truth[i]).count() as f64;
        seen += g.len();
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Step-wise average precision: `Σ (R_t - R_{t-1}) P_t` over distinct
/// thresholds `t` in descending order.
pub fn auc_pr(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let (n_pos, _) = check(scores, truth)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut ap = 0.0;
    for g in tie_groups(scores) {
        let pos = g.iter().filter(|&&i| truth[i]).count();
        tp += pos;
        fp += g.len() - pos;
        if pos > 0 {
            ap += (pos as f64 / n_pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

pub fn evaluate(scores: &[f64], truth: &[bool]) -> Result<EvalResult> {
    let (n_pos, n_neg) = check(scores, truth)?;
    Ok(EvalResult {
        auc_pr: auc_pr(scores, truth)?,
        auc_roc: auc_roc(scores, truth)?,
        n_pos,
        n_neg,
    })
}
