//! Evaluation of paired scores: AUC, accuracy at the equal-error point,
//! correlation with MMSE, pattern search and cross-validation.

pub mod cv;
pub mod metrics;
pub mod search;

use serde::{Deserialize, Serialize};

pub use cv::{cross_dataset, cross_validate, cross_validate_scores, fold_assignment, CrossDatasetReport, CvResult, FoldResult, MeanSd};
pub use metrics::{acc_at_eer, auc, pearson, EerPoint};
pub use search::{rank_patterns, score_patterns, search_patterns, PatternRow, PatternScores, SearchResult};

use crate::error::Result;
use crate::scoring::PairedScore;
use crate::surgery::DegradationSpec;

/// Evaluation of one score table. The ratio is the classification feature;
/// the AUC of the difference is reported alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus_id: String,
    pub spec: Option<DegradationSpec>,
    pub auc: f64,
    pub acc_at_eer: f64,
    pub eer_threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub difference_auc: f64,
    pub pearson_mmse: Option<f64>,
    pub n_cases: usize,
    pub n_controls: usize,
    pub n_unlabeled: usize,
    pub n_mmse: usize,
    pub n_mmse_missing: usize,
    pub toolkit_version: String,
}

pub fn evaluate(
    rows: &[PairedScore],
    corpus_id: &str,
    spec: Option<DegradationSpec>,
) -> Result<EvalReport> {
    let labeled: Vec<(&PairedScore, bool)> = rows
        .iter()
        .filter_map(|r| r.label.is_case().map(|c| (r, c)))
        .collect();
    let by_ratio: Vec<(f64, bool)> = labeled.iter().map(|(r, c)| (r.ratio, *c)).collect();
    let by_diff: Vec<(f64, bool)> = labeled.iter().map(|(r, c)| (r.difference, *c)).collect();
    let a = auc(&by_ratio)?;
    let eer = acc_at_eer(&by_ratio)?;
    let mm: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.mmse.map(|m| (r.ratio, m as f64)))
        .collect();
    let pearson_mmse = if mm.is_empty() {
        None
    } else {
        Some(pearson(&mm)?)
    };
    let n_cases = labeled.iter().filter(|p| p.1).count();
    Ok(EvalReport {
        corpus_id: corpus_id.to_string(),
        spec,
        auc: a,
        acc_at_eer: eer.accuracy,
        eer_threshold: eer.threshold,
        fpr: eer.fpr,
        fnr: eer.fnr,
        difference_auc: auc(&by_diff)?,
        pearson_mmse,
        n_cases,
        n_controls: labeled.len() - n_cases,
        n_unlabeled: rows.len() - labeled.len(),
        n_mmse: mm.len(),
        n_mmse_missing: rows.len() - mm.len(),
        toolkit_version: crate::VERSION.to_string(),
    })
}

impl EvalReport {
    pub fn render(&self) -> String {
        let spec = self
            .spec
            .map(|s| format!("{:?} p={} layers={}", s.location, s.proportion, s.layers))
            .unwrap_or_else(|| "none".into());
        format!(
            "Evaluation  corpus={}  spec={}\n\
             cases={} controls={} unlabeled={} mmse={}\n\
             {:>6} {:>6} {:>7}\n\
             {:>6.3} {:>6.3} {:>7}\n\
             EER threshold {} (FPR {:.3}, FNR {:.3}); difference AUC {:.3}\n",
            self.corpus_id,
            spec,
            self.n_cases,
            self.n_controls,
            self.n_unlabeled,
            self.n_mmse,
            "AUC",
            "ACC",
            "CORR",
            self.auc,
            self.acc_at_eer,
            self.pearson_mmse.map_or("n/a".into(), |r| format!("{r:.3}")),
            self.eer_threshold,
            self.fpr,
            self.fnr,
            self.difference_auc
        )
    }
}
