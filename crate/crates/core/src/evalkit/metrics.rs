//! Threshold-free and threshold-based separation metrics on scored
//! participants, plus the product-moment correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn split_classes(scores: &[(f64, bool)]) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| !s.is_finite()) {
        return Err(Error::UndefinedAuc(format!("non-finite score {s}")));
    }
    let cases: Vec<f64> = scores.iter().filter(|p| p.1).map(|p| p.0).collect();
    let controls: Vec<f64> = scores.iter().filter(|p| !p.1).map(|p| p.0).collect();
    if cases.is_empty() || controls.is_empty() {
        return Err(Error::UndefinedAuc(format!(
            "need both classes, got {} cases and {} controls",
            cases.len(),
            controls.len()
        )));
    }
    Ok((cases, controls))
}

/// Probability that a random case outscores a random control, ties
/// counting one half. `true` marks a case.
pub fn auc(scores: &[(f64, bool)]) -> Result<f64> {
    let (cases, mut controls) = split_classes(scores)?;
    controls.sort_by(f64::total_cmp);
    // twice the Mann-Whitney U, kept integral
    let mut twice_u: u64 = 0;
    for c in &cases {
        let below = controls.partition_point(|x| x < c);
        let not_above = controls.partition_point(|x| x <= c);
        twice_u += 2 * below as u64 + (not_above - below) as u64;
    }
    Ok(twice_u as f64 * 0.5 / (cases.len() as f64 * controls.len() as f64))
}

/// Operating point where false-positive and false-negative rates are
/// closest. A score strictly above `threshold` is called a case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub accuracy: f64,
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
}

/// Thresholds are `-inf`, the midpoints between adjacent distinct scores,
/// and `+inf`. Among those minimizing `|FPR - FNR|`, the most accurate
/// wins, then the lowest.
pub fn acc_at_eer(scores: &[(f64, bool)]) -> Result<EerPoint> {
    let (cases, controls) = split_classes(scores)?;
    let mut uniq: Vec<f64> = scores.iter().map(|p| p.0).collect();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    let mut candidates = Vec::with_capacity(uniq.len() + 1);
    candidates.push(f64::NEG_INFINITY);
    candidates.extend(uniq.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    candidates.push(f64::INFINITY);

    let n1 = cases.len() as f64;
    let n0 = controls.len() as f64;
    let n = n1 + n0;
    let mut best: Option<(f64, EerPoint)> = None;
    for &th in &candidates {
        let fneg = cases.iter().filter(|&&s| s <= th).count() as f64;
        let fpos = controls.iter().filter(|&&s| s > th).count() as f64;
        let fpr = fpos / n0;
        let fnr = fneg / n1;
        let gap = (fpr - fnr).abs();
        let point = EerPoint {
            accuracy: (n - fneg - fpos) / n,
            threshold: th,
            fpr,
            fnr,
        };
        let better = match &best {
            None => true,
            Some((g, b)) => gap < *g || (gap == *g && point.accuracy > b.accuracy),
        };
        if better {
            best = Some((gap, point));
        }
    }
    Ok(best.expect("at least two candidates").1)
}

/// Pearson's r. Co-moments are accumulated in a single pass with
/// running-mean updates.
pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite value".into()));
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &(x, y)) in pairs.iter().enumerate() {
        let n = (i + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
