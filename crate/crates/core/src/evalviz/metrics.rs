use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-4;
const PROB_FLOOR: f64 = 1e-12;

/// Probability element type: f32 model output or f64 oracle output.
pub trait Prob: Copy + Into<f64> {}
impl Prob for f32 {}
impl Prob for f64 {}

/// Checks a row-major `n×classes` probability matrix against `labels`.
fn check<P: Prob>(predictions: &[P], classes: usize, labels: &[usize]) -> Result<()> {
    if classes == 0 || predictions.len() != classes * labels.len() {
        return Err(Error::Input(format!(
            "{} probabilities do not form {} rows of {classes}",
            predictions.len(),
            labels.len()
        )));
    }
    for (i, row) in predictions.chunks_exact(classes).enumerate() {
        let mut s = 0.0f64;
        for &p in row {
            let p: f64 = p.into();
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Input(format!("row {i} has a negative or non-finite entry")));
            }
            s += p;
        }
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Input(format!("row {i} sums to {s}, not 1")));
        }
    }
    if let Some((i, l)) = labels.iter().enumerate().find(|(_, l)| **l >= classes) {
        return Err(Error::Input(format!("label {l} of sample {i} outside {classes} classes")));
    }
    Ok(())
}

/// 0-based rank of `label` in `row`, ties broken by ascending class id.
pub fn rank_of<P: Prob>(row: &[P], label: usize) -> usize {
    let p: f64 = row[label].into();
    row.iter()
        .enumerate()
        .filter(|&(j, &q)| {
            let q: f64 = q.into();
            q > p || (q == p && j < label)
        })
        .count()
}

pub fn topk_accuracy<P: Prob>(predictions: &[P], classes: usize, labels: &[usize], k: usize) -> Result<f64> {
    check(predictions, classes, labels)?;
    if k == 0 || k > classes {
        return Err(Error::Input(format!("k = {k} outside 1..={classes}")));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions.chunks_exact(classes).zip(labels).filter(|(row, &l)| rank_of(row, l) < k).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean of `-ln p_true`, with probabilities clamped at 1e-12.
pub fn mean_cross_entropy<P: Prob>(predictions: &[P], classes: usize, labels: &[usize]) -> Result<f64> {
    check(predictions, classes, labels)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = predictions
        .chunks_exact(classes)
        .zip(labels)
        .map(|(row, &l)| -Into::<f64>::into(row[l]).max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub classes: usize,
    pub top1: f64,
    /// Top-5, or top-C when there are fewer than five classes.
    pub top5: f64,
    pub mean_cross_entropy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<u64>>,
}

pub fn evaluate<P: Prob>(predictions: &[P], classes: usize, labels: &[usize]) -> Result<EvalReport> {
    check(predictions, classes, labels)?;
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (row, &l) in predictions.chunks_exact(classes).zip(labels) {
        let pred = (0..classes).find(|&j| rank_of(row, j) == 0).unwrap_or(0);
        confusion[l][pred] += 1;
    }
    Ok(EvalReport {
        n: labels.len(),
        classes,
        top1: topk_accuracy(predictions, classes, labels, 1)?,
        top5: topk_accuracy(predictions, classes, labels, 5.min(classes))?,
        mean_cross_entropy: mean_cross_entropy(predictions, classes, labels)?,
        confusion,
    })
}
