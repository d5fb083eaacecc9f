//! Ranking and distribution metrics.

use std::collections::BTreeMap;

use crate::error::{MoefError, Result};

/// Area under the ROC curve as the Mann-Whitney statistic
/// `(wins + ½ ties) / (P · N)`, computed from average ranks.
///
/// ```
/// use moef::harness::auc;
/// assert_eq!(auc(&[1, 1, 0, 0], &[0.8, 0.4, 0.6, 0.2]).unwrap(), 0.75);
/// assert_eq!(auc(&[1, 0], &[0.3, 0.3]).unwrap(), 0.5);
/// ```
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(MoefError::dim(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MoefError::Numeric(format!("non-finite score {s}")));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MoefError::UndefinedMetric(format!(
            "AUC needs both classes, got {positives} positives and {negatives} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_run = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        positive_rank_sum += avg_rank * pos_in_run as f64;
        i = j + 1;
    }
    let p = positives as f64;
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// `H = −Σ p_c ln p_c` over the category shares of a click log.
///
/// ```
/// use moef::harness::category_entropy;
/// let h = category_entropy(&[1, 1, 2, 3]).unwrap();
/// assert!((h - 1.0397207708399179).abs() < 1e-12);
/// ```
pub fn category_entropy(categories: &[u64]) -> Result<f64> {
    if categories.is_empty() {
        return Err(MoefError::Contract("category entropy of an empty log".into()));
    }
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for &c in categories {
        *counts.entry(c).or_default() += 1;
    }
    let n = categories.len() as f64;
    Ok(-counts
        .values()
        .map(|&k| {
            let p = k as f64 / n;
            p * p.ln()
        })
        .sum::<f64>())
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(MoefError::UndefinedMetric("KS statistic needs two non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    Ok(d)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
