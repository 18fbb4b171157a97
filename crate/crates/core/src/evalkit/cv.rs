//! Participant-level k-fold cross-validation of the pattern search, and
//! transfer of a searched pattern from one corpus to another.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{acc_at_eer, auc, pearson};
use super::search::{rank_patterns, score_patterns, PatternScores, SearchResult};
use super::{evaluate, EvalReport};
use crate::error::{Error, Result};
use crate::scoring::{PairedScore, PairedScorer};
use crate::surgery::{DegradationSpec, LayerSet, Strategy};
use crate::tensor::Scalar;

/// Shuffles `ids` with `seed` and deals them into `k` contiguous folds;
/// the first `n % k` folds get one extra member.
pub fn fold_assignment(ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k < 2 {
        return Err(Error::Fold {
            fold: 0,
            reason: format!("k must be at least 2, got {k}"),
        });
    }
    if ids.len() < k {
        return Err(Error::Fold {
            fold: 0,
            reason: format!("{} participants cannot fill {k} folds", ids.len()),
        });
    }
    let mut order = ids.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (order.len() / k, order.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Population standard deviation over folds.
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            sd: var.sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    /// 1-based.
    pub fold: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub winner: LayerSet,
    pub train_auc: f64,
    pub test_auc: Option<f64>,
    pub test_acc: Option<f64>,
    pub test_threshold: Option<f64>,
    pub test_corr: Option<f64>,
    /// Why a test metric is absent.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub corpus_id: String,
    pub k: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub base_spec: DegradationSpec,
    pub n_participants: usize,
    pub folds: Vec<FoldResult>,
    pub auc: Option<MeanSd>,
    pub acc: Option<MeanSd>,
    pub corr: Option<MeanSd>,
    pub toolkit_version: String,
}

fn test_metrics(rows: &[&PairedScore], fold: &mut FoldResult) {
    let pts: Vec<(f64, bool)> = rows
        .iter()
        .filter_map(|r| r.label.is_case().map(|c| (r.ratio, c)))
        .collect();
    match (auc(&pts), acc_at_eer(&pts)) {
        (Ok(a), Ok(e)) => {
            fold.test_auc = Some(a);
            fold.test_acc = Some(e.accuracy);
            fold.test_threshold = Some(e.threshold);
        }
        (Err(e), _) | (_, Err(e)) => fold.notes.push(format!("test AUC/ACC: {e}")),
    }
    let mm: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.mmse.map(|m| (r.ratio, m as f64)))
        .collect();
    if mm.is_empty() {
        fold.notes.push("test CORR: no MMSE values".into());
    } else {
        match pearson(&mm) {
            Ok(r) => fold.test_corr = Some(r),
            Err(e) => fold.notes.push(format!("test CORR: {e}")),
        }
    }
}

/// Runs the fold loop over precomputed pattern scores. Per-participant
/// scores do not depend on the fold, so every pattern is scored once and
/// each fold only re-ranks on its training participants.
pub fn cross_validate_scores(scores: &PatternScores, k: usize, seed: u64) -> Result<CvResult> {
    let ids: Vec<String> = scores
        .tables
        .first()
        .map(|t| t.iter().map(|r| r.participant_id.clone()).collect())
        .unwrap_or_default();
    let folds = fold_assignment(&ids, k, seed)?;
    let mut results = Vec::with_capacity(k);
    for (f, test_ids) in folds.iter().enumerate() {
        let fold = f + 1;
        let test: BTreeSet<&str> = test_ids.iter().map(String::as_str).collect();
        let train: Vec<String> = ids
            .iter()
            .filter(|id| !test.contains(id.as_str()))
            .cloned()
            .collect();
        let search = rank_patterns(scores, |r| !test.contains(r.participant_id.as_str()))
            .map_err(|e| Error::Fold {
                fold,
                reason: format!("training portion: {e}"),
            })?;
        let idx = scores
            .patterns
            .iter()
            .position(|&p| p == search.winner)
            .expect("winner is one of the patterns");
        let rows: Vec<&PairedScore> = scores.tables[idx]
            .iter()
            .filter(|r| test.contains(r.participant_id.as_str()))
            .collect();
        let mut fr = FoldResult {
            fold,
            train,
            test: test_ids.clone(),
            winner: search.winner,
            train_auc: search.winner_auc,
            test_auc: None,
            test_acc: None,
            test_threshold: None,
            test_corr: None,
            notes: Vec::new(),
        };
        test_metrics(&rows, &mut fr);
        results.push(fr);
    }
    let collect = |get: fn(&FoldResult) -> Option<f64>| {
        MeanSd::of(&results.iter().filter_map(get).collect::<Vec<_>>())
    };
    Ok(CvResult {
        corpus_id: scores.corpus_id.clone(),
        k,
        seed,
        strategy: scores.strategy,
        base_spec: scores.base_spec,
        n_participants: ids.len(),
        auc: collect(|f| f.test_auc),
        acc: collect(|f| f.test_acc),
        corr: collect(|f| f.test_corr),
        folds: results,
        toolkit_version: crate::VERSION.to_string(),
    })
}

pub fn cross_validate<T: Scalar>(
    scorer: &PairedScorer<'_, T>,
    k: usize,
    seed: u64,
    strategy: Strategy,
    base_spec: &DegradationSpec,
) -> Result<CvResult> {
    cross_validate_scores(&score_patterns(scorer, strategy, base_spec)?, k, seed)
}

fn fmt_ms(m: &Option<MeanSd>) -> String {
    match m {
        Some(m) => format!("{:.3} ({:.3})", m.mean, m.sd),
        None => "n/a".into(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.3}"))
}

impl CvResult {
    pub fn render(&self) -> String {
        let mut s = format!(
            "Cross-validation  corpus={}  k={}  seed={}  strategy={}  participants={}\n",
            self.corpus_id, self.k, self.seed, self.strategy, self.n_participants
        );
        s.push_str(&format!(
            "{:>4}  {:<20} {:>9} {:>8} {:>8} {:>9}\n",
            "fold", "winner", "train_AUC", "AUC", "ACC", "CORR"
        ));
        for f in &self.folds {
            s.push_str(&format!(
                "{:>4}  {:<20} {:>9.3} {:>8} {:>8} {:>9}\n",
                f.fold,
                f.winner.to_string(),
                f.train_auc,
                fmt_opt(f.test_auc),
                fmt_opt(f.test_acc),
                fmt_opt(f.test_corr)
            ));
        }
        s.push_str(&format!(
            "mean (SD)  AUC {}  ACC {}  CORR {}\n",
            fmt_ms(&self.auc),
            fmt_ms(&self.acc),
            fmt_ms(&self.corr)
        ));
        s
    }

    /// One row per fold.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("fold\twinner\ttrain_auc\ttest_auc\ttest_acc\ttest_threshold\ttest_corr\tn_test\n");
        let o = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for f in &self.folds {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                f.fold,
                f.winner,
                f.train_auc,
                o(f.test_auc),
                o(f.test_acc),
                o(f.test_threshold),
                o(f.test_corr),
                f.test.len()
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDatasetReport {
    pub train_corpus_id: String,
    pub test_corpus_id: String,
    pub search: SearchResult,
    pub test: EvalReport,
}

/// Searches on `train`, then scores `test` under the winning pattern.
pub fn cross_dataset<T: Scalar>(
    train: &PairedScorer<'_, T>,
    test: &PairedScorer<'_, T>,
    strategy: Strategy,
    base_spec: &DegradationSpec,
) -> Result<CrossDatasetReport> {
    let search = super::search::search_patterns(train, strategy, base_spec)?;
    let spec = search.winner_spec();
    let table = test.score_with_spec(&spec)?;
    let report = evaluate(&table.rows, test.corpus_id(), Some(spec))?;
    Ok(CrossDatasetReport {
        train_corpus_id: train.corpus_id().to_string(),
        test_corpus_id: test.corpus_id().to_string(),
        search,
        test: report,
    })
}

impl CrossDatasetReport {
    pub fn render(&self) -> String {
        format!(
            "Cross-dataset  train={}  test={}  strategy={}\nwinner on train: {} (AUC {:.3})\n{}",
            self.train_corpus_id,
            self.test_corpus_id,
            self.search.strategy,
            self.search.winner,
            self.search.winner_auc,
            self.test.render()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:02}")).collect()
    }

    #[test]
    fn folds_partition_participants() {
        let folds = fold_assignment(&ids(10), 5, 7).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let all: BTreeSet<&String> = folds.iter().flatten().collect();
        assert_eq!(all.len(), 10);
        assert_eq!(folds, fold_assignment(&ids(10), 5, 7).unwrap());
        assert_ne!(folds, fold_assignment(&ids(10), 5, 8).unwrap());
        let sizes: Vec<usize> = fold_assignment(&ids(12), 5, 1).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, [3, 3, 2, 2, 2]);
        assert!(fold_assignment(&ids(3), 5, 1).is_err());
    }

    #[test]
    fn fold_assignment_ignores_input_order() {
        let mut rev = ids(11);
        rev.reverse();
        assert_eq!(fold_assignment(&rev, 5, 3).unwrap(), fold_assignment(&ids(11), 5, 3).unwrap());
    }

    fn synthetic_scores(labels: &[Label]) -> PatternScores {
        let patterns = crate::surgery::enumerate_pattern(Strategy::Cumulative, 3);
        let tables = patterns
            .iter()
            .enumerate()
            .map(|(pi, _)| {
                labels
                    .iter()
                    .enumerate()
                    .map(|(i, &label)| {
                        // pattern 1 separates perfectly, the others partly
                        let case = label == Label::Dementia;
                        let ratio = if pi == 1 {
                            if case { 2.0 + i as f64 * 0.01 } else { 1.0 + i as f64 * 0.01 }
                        } else {
                            1.0 + ((i * 7 + pi) % 5) as f64 * 0.1
                        };
                        PairedScore {
                            participant_id: format!("p{i:02}"),
                            ppl_base: ratio,
                            ppl_degraded: 1.0,
                            ratio,
                            difference: ratio - 1.0,
                            n_transcripts_averaged: 1,
                            label,
                            mmse: Some((30 - i % 10) as u8),
                        }
                    })
                    .collect()
            })
            .collect();
        PatternScores {
            corpus_id: "syn".into(),
            strategy: Strategy::Cumulative,
            base_spec: DegradationSpec::value_columns(LayerSet::empty()),
            patterns,
            tables,
        }
    }

    #[test]
    fn cv_picks_separating_pattern_and_is_deterministic() {
        let labels: Vec<Label> = (0..20)
            .map(|i| if i % 2 == 0 { Label::Dementia } else { Label::Control })
            .collect();
        let s = synthetic_scores(&labels);
        let a = cross_validate_scores(&s, 5, 42).unwrap();
        assert_eq!(a, cross_validate_scores(&s, 5, 42).unwrap());
        assert!(a.folds.iter().all(|f| f.winner == LayerSet::range(0, 1)));
        assert_eq!(a.folds.iter().map(|f| f.test.len()).sum::<usize>(), 20);
        assert!(a.render().contains("mean (SD)"));
        assert_eq!(a.to_tsv().lines().count(), 6);
    }

    #[test]
    fn single_class_training_portion_names_fold() {
        let mut labels = vec![Label::Control; 10];
        labels[0] = Label::Dementia;
        let s = synthetic_scores(&labels);
        let folds = fold_assignment(&ids(10), 5, 1).unwrap();
        let bad = folds.iter().position(|f| f.contains(&"p00".to_string())).unwrap() + 1;
        match cross_validate_scores(&s, 5, 1).unwrap_err() {
            Error::Fold { fold, .. } => assert_eq!(fold, bad),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn population_sd() {
        let m = MeanSd::of(&[1.0, 3.0]).unwrap();
        assert_eq!((m.mean, m.sd, m.n), (2.0, 1.0, 2));
        assert!(MeanSd::of(&[]).is_none());
    }
}
