//! Impairment-pattern search: score the corpus under every layer subset of
//! a strategy and rank the subsets by AUC.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::auc;
use crate::error::{Error, Result};
use crate::scoring::{PairedScore, PairedScorer};
use crate::surgery::{enumerate_pattern, DegradationSpec, LayerSet, Location, MaskSession, Strategy};
use crate::tensor::Scalar;

/// Paired scores of every participant under every pattern of a strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternScores {
    pub corpus_id: String,
    pub strategy: Strategy,
    pub base_spec: DegradationSpec,
    pub patterns: Vec<LayerSet>,
    /// `tables[i]` holds one row per participant for `patterns[i]`.
    pub tables: Vec<Vec<PairedScore>>,
}

/// Scores all patterns. Patterns are split into one contiguous block per
/// worker thread; each worker masks its own copy of the base weights in
/// place and restores it between patterns.
pub fn score_patterns<T: Scalar>(
    scorer: &PairedScorer<'_, T>,
    strategy: Strategy,
    base_spec: &DegradationSpec,
) -> Result<PatternScores> {
    if base_spec.location != Location::AttentionValueColumns {
        return Err(Error::InvalidSpec {
            field: "location",
            reason: "pattern search applies to attention value columns".into(),
        });
    }
    let n_layers = scorer.base().config.n_layers;
    let patterns = enumerate_pattern(strategy, n_layers);
    let workers = rayon::current_num_threads().max(1);
    let block = patterns.len().div_ceil(workers).max(1);
    let tables: Vec<Vec<PairedScore>> = patterns
        .par_chunks(block)
        .map(|chunk| {
            let mut weights = scorer.base().clone();
            chunk
                .iter()
                .map(|&layers| {
                    let spec = base_spec.with_layers(layers);
                    let wrap = |e: Error| Error::Pattern {
                        layers: layers.to_vec(),
                        source: Box::new(e),
                    };
                    let session = MaskSession::apply(&mut weights, &spec).map_err(wrap)?;
                    let table = scorer.score_spec(session.weights(), &spec).map_err(wrap)?;
                    session.restore();
                    Ok(table.rows)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(PatternScores {
        corpus_id: scorer.corpus_id().to_string(),
        strategy,
        base_spec: *base_spec,
        patterns,
        tables,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRow {
    pub rank: usize,
    pub layers: LayerSet,
    pub n_layers: usize,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub corpus_id: String,
    pub strategy: Strategy,
    pub base_spec: DegradationSpec,
    pub n_participants: usize,
    /// Best first.
    pub ranked: Vec<PatternRow>,
    pub winner: LayerSet,
    pub winner_auc: f64,
    pub tie_break: Vec<String>,
}

fn lex_cmp(a: LayerSet, b: LayerSet) -> Ordering {
    a.to_vec().cmp(&b.to_vec())
}

/// Ranks patterns by AUC over the participants `include` accepts: higher
/// AUC first, then fewer layers, then the lexicographically smaller list.
pub fn rank_patterns(
    scores: &PatternScores,
    include: impl Fn(&PairedScore) -> bool,
) -> Result<SearchResult> {
    let mut ranked = Vec::with_capacity(scores.patterns.len());
    let mut n_participants = 0;
    for (&layers, table) in scores.patterns.iter().zip(&scores.tables) {
        let pts: Vec<(f64, bool)> = table
            .iter()
            .filter(|r| include(r))
            .filter_map(|r| r.label.is_case().map(|c| (r.ratio, c)))
            .collect();
        n_participants = pts.len();
        let a = auc(&pts).map_err(|e| Error::Pattern {
            layers: layers.to_vec(),
            source: Box::new(e),
        })?;
        ranked.push(PatternRow {
            rank: 0,
            layers,
            n_layers: layers.len(),
            auc: a,
        });
    }
    ranked.sort_by(|a, b| {
        b.auc
            .total_cmp(&a.auc)
            .then(a.n_layers.cmp(&b.n_layers))
            .then(lex_cmp(a.layers, b.layers))
    });
    for (i, r) in ranked.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    let top = ranked[0].clone();
    let mut tie_break = Vec::new();
    let at_max: Vec<&PatternRow> = ranked.iter().filter(|r| r.auc == top.auc).collect();
    tie_break.push(format!("{} pattern(s) reach AUC {}", at_max.len(), top.auc));
    if at_max.len() > 1 {
        let fewest: Vec<&&PatternRow> = at_max.iter().filter(|r| r.n_layers == top.n_layers).collect();
        tie_break.push(format!("{} of them with the fewest layers ({})", fewest.len(), top.n_layers));
        if fewest.len() > 1 {
            tie_break.push(format!(
                "lexicographically smallest: {:?} over {}",
                top.layers.to_vec(),
                fewest[1..]
                    .iter()
                    .map(|r| format!("{:?}", r.layers.to_vec()))
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
    }
    Ok(SearchResult {
        corpus_id: scores.corpus_id.clone(),
        strategy: scores.strategy,
        base_spec: scores.base_spec,
        n_participants,
        ranked,
        winner: top.layers,
        winner_auc: top.auc,
        tie_break,
    })
}

/// Scores and ranks every pattern on the whole corpus.
pub fn search_patterns<T: Scalar>(
    scorer: &PairedScorer<'_, T>,
    strategy: Strategy,
    base_spec: &DegradationSpec,
) -> Result<SearchResult> {
    rank_patterns(&score_patterns(scorer, strategy, base_spec)?, |_| true)
}

impl SearchResult {
    pub fn winner_spec(&self) -> DegradationSpec {
        self.base_spec.with_layers(self.winner)
    }

    /// One row per pattern, best first.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("rank\tlayers\tn_layers\tauc\n");
        for r in &self.ranked {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", r.rank, r.layers, r.n_layers, r.auc));
        }
        s
    }

    /// Plain-text summary with the `top` best patterns.
    pub fn render(&self, top: usize) -> String {
        let mut s = format!(
            "Pattern search  corpus={}  strategy={}  participants={}  patterns={}\n",
            self.corpus_id,
            self.strategy,
            self.n_participants,
            self.ranked.len()
        );
        s.push_str(&format!("{:>5}  {:<24} {:>7}\n", "rank", "layers", "AUC"));
        for r in self.ranked.iter().take(top) {
            s.push_str(&format!("{:>5}  {:<24} {:>7.3}\n", r.rank, r.layers.to_string(), r.auc));
        }
        s.push_str(&format!("winner: {} (AUC {:.3})\n", self.winner, self.winner_auc));
        for line in &self.tie_break {
            s.push_str(&format!("  {line}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn row(id: &str, ratio: f64, label: Label) -> PairedScore {
        PairedScore {
            participant_id: id.into(),
            ppl_base: ratio,
            ppl_degraded: 1.0,
            ratio,
            difference: ratio - 1.0,
            n_transcripts_averaged: 1,
            label,
            mmse: None,
        }
    }

    fn scores(patterns: Vec<LayerSet>, ratios: Vec<[f64; 4]>) -> PatternScores {
        let labels = [Label::Dementia, Label::Dementia, Label::Control, Label::Control];
        PatternScores {
            corpus_id: "x".into(),
            strategy: Strategy::Combination,
            base_spec: DegradationSpec::value_columns(LayerSet::empty()),
            patterns,
            tables: ratios
                .into_iter()
                .map(|rs| {
                    rs.iter()
                        .zip(labels)
                        .enumerate()
                        .map(|(i, (&r, l))| row(&format!("p{i}"), r, l))
                        .collect()
                })
                .collect(),
        }
    }

    #[test]
    fn tie_break_prefers_fewer_layers_then_lexicographic() {
        let s = |v: &str| v.parse::<LayerSet>().unwrap();
        let ps = scores(
            vec![s("0-2"), s("3"), s("1"), s("0,5"), LayerSet::empty()],
            vec![
                [2.0, 3.0, 1.0, 1.5],
                [2.0, 3.0, 1.0, 1.5],
                [2.0, 3.0, 1.0, 1.5],
                [2.0, 1.2, 1.0, 1.5],
                [1.0; 4],
            ],
        );
        let r = rank_patterns(&ps, |_| true).unwrap();
        assert_eq!(r.winner, s("1"));
        assert_eq!(r.winner_auc, 1.0);
        let order: Vec<String> = r.ranked.iter().map(|x| x.layers.to_string()).collect();
        assert_eq!(order, ["1", "3", "0-2", "0,5", "none"]);
        assert_eq!(r.ranked[4].auc, 0.5);
        assert_eq!(r.tie_break.len(), 3);
        assert!(r.render(3).contains("winner: 1"));
        assert_eq!(r.to_tsv().lines().count(), 6);
    }

    #[test]
    fn subset_without_both_classes_names_the_pattern() {
        let ps = scores(vec![LayerSet::range(0, 0)], vec![[2.0, 3.0, 1.0, 1.5]]);
        let err = rank_patterns(&ps, |r| r.label == Label::Dementia).unwrap_err();
        assert!(matches!(err, Error::Pattern { ref layers, .. } if layers == &vec![0]));
    }
}
