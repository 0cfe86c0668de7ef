//! ROC curves, AUC, the pairwise (Mann-Whitney) oracle, stratified splits and
//! partition agreement.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::mlcore::Dataset;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score at or above which samples are called positive; +inf for (0,0).
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invariant(
            "labels",
            format!("{} scores but {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::OutOfRange("scores contain NaN".into()));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(format!(
            "{pos} positives, {neg} negatives"
        )));
    }
    Ok((pos, neg))
}

/// Sweep thresholds over the distinct scores in descending order; equal
/// scores form one step. AUC is the trapezoidal area, accumulated from
/// integer counts.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    // twice the area in units of one (positive, negative) pair
    let mut area2: u128 = 0;
    let mut k = 0;
    while k < order.len() {
        let score = scores[order[k]];
        let (tp0, fp0) = (tp, fp);
        while k < order.len() && scores[order[k]] == score {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        area2 += ((fp - fp0) * (tp0 + tp)) as u128;
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: score,
        });
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counting half.
pub fn auc_pairwise_oracle(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let positives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let negatives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    let mut twice: u128 = 0;
    for &p in &positives {
        for &n in &negatives {
            twice += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    Ok(twice as f64 / (2.0 * pos as f64 * neg as f64))
}

fn format_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{t}")
    }
}

impl RocCurve {
    /// `fpr,tpr,threshold` rows followed by `# auc=<value>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.fpr, p.tpr, format_threshold(p.threshold));
        }
        let _ = writeln!(out, "# auc={}", self.auc);
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Stratified shuffle split of row indices; both parts keep ascending order.
pub fn split_indices(
    labels: &[bool],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::OutOfRange(format!(
            "test fraction {test_fraction} not in (0,1)"
        )));
    }
    let mut r = rng::rng_from(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [false, true] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let n = members.len();
        let n_test = (test_fraction * n as f64).round() as usize;
        if n_test == 0 || n_test >= n {
            return Err(Error::Insufficient(format!(
                "class {} has {n} samples, too few to stratify at test fraction {test_fraction}",
                class as u8
            )));
        }
        members.shuffle(&mut r);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(data.labels(), test_fraction, seed)?;
    Ok((data.subset(&train)?, data.subset(&test)?))
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invariant("labels", "partitions differ in length"));
    }
    if a.len() < 2 {
        return Err(Error::Insufficient("need at least two items".into()));
    }
    let pairs = |n: u64| n * n.saturating_sub(1) / 2;
    let mut joint: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = joint.values().map(|&n| pairs(n) as f64).sum();
    let sum_rows: f64 = rows.values().map(|&n| pairs(n) as f64).sum();
    let sum_cols: f64 = cols.values().map(|&n| pairs(n) as f64).sum();
    let total = pairs(a.len() as u64) as f64;
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
