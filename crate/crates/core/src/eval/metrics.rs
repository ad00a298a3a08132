use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};

fn check_pair(pred: &Tensor, gt: &Tensor) -> Result<(usize, usize)> {
    if pred.shape() != gt.shape() || pred.rank() != 2 || pred.shape()[1] == 0 {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}; need equal [C, F>=1]",
            pred.shape(),
            gt.shape()
        )));
    }
    Ok(pred.dims2())
}

fn column_distance(pred: &Tensor, gt: &Tensor, t: usize) -> f64 {
    let c = pred.dims2().0;
    (0..c)
        .map(|ci| {
            let d = pred.at2(ci, t) - gt.at2(ci, t);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Mean Euclidean distance between matching columns.
pub fn ade(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let (_, f) = check_pair(pred, gt)?;
    Ok((0..f).map(|t| column_distance(pred, gt, t)).sum::<f64>() / f as f64)
}

/// Euclidean distance between the final columns.
pub fn fde(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let (_, f) = check_pair(pred, gt)?;
    Ok(column_distance(pred, gt, f - 1))
}

/// Mean ADE and FDE over a set of forecasts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ade: f64,
    pub fde: f64,
    /// `fde / ade`; `None` when `ade` is zero.
    pub ratio: Option<f64>,
    pub n_samples: usize,
}

impl MetricReport {
    pub fn from_means(ade: f64, fde: f64, n_samples: usize) -> Self {
        Self {
            ade,
            fde,
            ratio: (ade > 0.0).then(|| fde / ade),
            n_samples,
        }
    }

    pub fn ratio_undefined(&self) -> bool {
        self.ratio.is_none()
    }
}

/// Scores paired forecasts.
pub fn evaluate(preds: &[Tensor], gts: &[Tensor]) -> Result<MetricReport> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let mut a = 0.0;
    let mut f = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        a += ade(p, g)?;
        f += fde(p, g)?;
    }
    let n = preds.len() as f64;
    Ok(MetricReport::from_means(a / n, f / n, preds.len()))
}

/// Precision, recall and F1 of onset recovery.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnsetScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub actual: usize,
}

/// Maximum one-to-one matching of predicted to true onsets within
/// `tolerance` timesteps, accumulated over samples. Atom identity is
/// ignored.
pub fn onset_f1(pred: &[Vec<usize>], truth: &[Vec<usize>], tolerance: usize) -> OnsetScore {
    let (mut tp, mut np, mut nt) = (0, 0, 0);
    for (p, t) in pred.iter().zip(truth) {
        np += p.len();
        nt += t.len();
        let mut p = p.clone();
        let mut t = t.clone();
        p.sort_unstable();
        t.sort_unstable();
        // earliest-deadline greedy over sorted lists is optimal for
        // equal-length windows
        let mut next = 0;
        for &on in &t {
            while next < p.len() && p[next] + tolerance < on {
                next += 1;
            }
            if next < p.len() && p[next] <= on + tolerance {
                tp += 1;
                next += 1;
            }
        }
    }
    let precision = if np > 0 { tp as f64 / np as f64 } else { 0.0 };
    let recall = if nt > 0 { tp as f64 / nt as f64 } else { 0.0 };
    let f1 = if np + nt > 0 {
        2.0 * tp as f64 / (np + nt) as f64
    } else {
        1.0
    };
    OnsetScore {
        precision,
        recall,
        f1,
        true_positives: tp,
        predicted: np,
        actual: nt,
    }
}

/// Onset columns of every event in a binary `[M, L]` placement, sorted.
pub fn placement_onsets(r: &Tensor) -> Vec<usize> {
    let (m, l) = r.dims2();
    let mut out: Vec<usize> = (0..m)
        .flat_map(|j| (0..l).filter(move |&k| r.at2(j, k) != 0.0))
        .collect();
    out.sort_unstable();
    out
}
