//! Lexical frequency and type-token ratio of generated text.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// NLTK's English stopword list.
pub const ENGLISH_STOPWORDS: &[&str] = &[
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "you're", "you've",
    "you'll", "you'd", "your", "yours", "yourself", "yourselves", "he", "him", "his", "himself",
    "she", "she's", "her", "hers", "herself", "it", "it's", "its", "itself", "they", "them",
    "their", "theirs", "themselves", "what", "which", "who", "whom", "this", "that", "that'll",
    "these", "those", "am", "is", "are", "was", "were", "be", "been", "being", "have", "has",
    "had", "having", "do", "does", "did", "doing", "a", "an", "the", "and", "but", "if", "or",
    "because", "as", "until", "while", "of", "at", "by", "for", "with", "about", "against",
    "between", "into", "through", "during", "before", "after", "above", "below", "to", "from",
    "up", "down", "in", "out", "on", "off", "over", "under", "again", "further", "then", "once",
    "here", "there", "when", "where", "why", "how", "all", "any", "both", "each", "few", "more",
    "most", "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so", "than",
    "too", "very", "s", "t", "can", "will", "just", "don", "don't", "should", "should've", "now",
    "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren", "aren't", "couldn", "couldn't", "didn",
    "didn't", "doesn", "doesn't", "hadn", "hadn't", "hasn", "hasn't", "haven", "haven't", "isn",
    "isn't", "ma", "mightn", "mightn't", "mustn", "mustn't", "needn", "needn't", "shan",
    "shan't", "shouldn", "shouldn't", "wasn", "wasn't", "weren", "weren't", "won", "won't",
    "wouldn", "wouldn't",
];

/// Personal and possessive pronouns, possessive wh-pronouns and
/// existential "there": the closed classes a tagger would mark
/// PRP, PRP$, WP$ and EX.
pub const PRONOUN_LEXICON: &[&str] = &[
    "i", "me", "you", "he", "him", "she", "her", "it", "we", "us", "they", "them", "myself",
    "yourself", "himself", "herself", "itself", "oneself", "ourselves", "yourselves",
    "themselves", "mine", "yours", "hers", "ours", "theirs", "thee", "thou", "ya", "y'all",
    "my", "your", "his", "its", "our", "their", "thy", "whose", "there",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexConfig {
    pub stopwords: BTreeSet<String>,
    /// Logarithm base applied to frequencies.
    pub log_base: f64,
    /// Use counts per million words of the reference corpus instead of raw
    /// counts.
    pub per_million: bool,
}

impl Default for LexConfig {
    fn default() -> Self {
        Self {
            stopwords: ENGLISH_STOPWORDS
                .iter()
                .chain(PRONOUN_LEXICON)
                .map(|s| s.to_string())
                .collect(),
            log_base: std::f64::consts::E,
            per_million: false,
        }
    }
}

impl LexConfig {
    pub fn with_stopwords<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        Self {
            stopwords: words.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    /// Stopword list entries, `n't`, and anything starting with an
    /// apostrophe.
    pub fn is_stopword(&self, token: &str) -> bool {
        token == "n't" || token.starts_with('\'') || self.stopwords.contains(token)
    }
}

fn word_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z0-9]+(?:'[A-Za-z]+)*").expect("valid pattern"))
}

const CLITICS: &[&str] = &["'s", "'m", "'d", "'ll", "'re", "'ve"];

/// Lowercased word tokens. Runs of letters/digits (with internal
/// apostrophes) are words; everything else separates them. Contractions
/// split as `do n't`, `it 's`, `we 're`.
pub fn word_tokenize(text: &str) -> Vec<String> {
    let normalized = text.replace(['\u{2019}', '`'], "'");
    let mut out = Vec::new();
    for m in word_pattern().find_iter(&normalized) {
        let w = m.as_str().to_lowercase();
        if w.len() > 3 && w.ends_with("n't") {
            out.push(w[..w.len() - 3].to_string());
            out.push("n't".to_string());
        } else if let Some(c) = CLITICS.iter().find(|c| w.len() > c.len() && w.ends_with(*c)) {
            out.push(w[..w.len() - c.len()].to_string());
            out.push(c.to_string());
        } else {
            out.push(w);
        }
    }
    out
}

/// Word → occurrence count in a reference corpus, keyed case-insensitively.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    counts: HashMap<String, f64>,
    total: f64,
}

impl FrequencyTable {
    /// Entries differing only in case are summed.
    pub fn from_pairs<I: IntoIterator<Item = (String, f64)>>(pairs: I) -> Result<Self> {
        let mut counts: HashMap<String, f64> = HashMap::new();
        for (w, c) in pairs {
            if c > 0.0 && c.is_finite() {
                *counts.entry(w.to_lowercase()).or_default() += c;
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyFrequencyTable);
        }
        let total = counts.values().sum();
        Ok(Self { counts, total })
    }

    /// Reads a delimited file with a header row. The word column is named
    /// `Word` (any case); the count column is the first of `FREQcount`,
    /// `count`, `freq`, `frequency` present. Tab-delimited when the header
    /// contains a tab, comma-delimited otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header = text.lines().next().ok_or(Error::EmptyFrequencyTable)?;
        let delim = if header.contains('\t') { b'\t' } else { b',' };
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delim)
            .flexible(true)
            .from_reader(text.as_bytes());
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        let find = |names: &[&str]| {
            names.iter().find_map(|n| {
                headers
                    .iter()
                    .position(|h| h.trim().eq_ignore_ascii_case(n))
            })
        };
        let wi = find(&["word"]).ok_or_else(|| parse_err(1, "no `Word` column".into()))?;
        let ci = find(&["freqcount", "count", "freq", "frequency"])
            .ok_or_else(|| parse_err(1, "no count column (FREQcount/count/freq)".into()))?;
        let mut pairs = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
            let (Some(w), Some(c)) = (rec.get(wi), rec.get(ci)) else {
                return Err(parse_err(line, "missing field".into()));
            };
            let c: f64 = c
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("count `{c}` is not a number")))?;
            pairs.push((w.trim().to_string(), c));
        }
        Self::from_pairs(pairs)
    }

    pub fn count(&self, word: &str) -> Option<f64> {
        self.counts.get(&word.to_lowercase()).copied()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Welch {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

/// Welch's unequal-variance t-test of `a` against `b`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<Welch> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::UndefinedStatistic(format!(
            "Welch test needs two values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let moments = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (n1, m1, v1) = moments(a);
    let (n2, m2, v2) = moments(b);
    let (s1, s2) = (v1 / n1, v2 / n2);
    if s1 + s2 == 0.0 {
        return Err(Error::UndefinedStatistic("both groups have zero variance".into()));
    }
    let t = (m1 - m2) / (s1 + s2).sqrt();
    let df = (s1 + s2).powi(2) / (s1 * s1 / (n1 - 1.0) + s2 * s2 / (n2 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::UndefinedStatistic(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(Welch { t, df, p })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLex {
    pub n_texts: usize,
    pub word_tokens: usize,
    pub stopwords_removed: usize,
    pub kept_tokens: usize,
    pub types: usize,
    /// Over kept tokens, OOV included.
    pub ttr: Option<f64>,
    pub oov_count: usize,
    pub mean_log_freq: Option<f64>,
    pub sd_log_freq: Option<f64>,
    #[serde(skip)]
    pub log_freqs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexReport {
    pub base: ModelLex,
    pub degraded: ModelLex,
    pub welch: Option<Welch>,
    pub log_base: f64,
    pub per_million: bool,
    pub notes: Vec<String>,
}

fn model_lex(texts: &[String], table: &FrequencyTable, cfg: &LexConfig) -> ModelLex {
    let mut word_tokens = 0;
    let mut kept = Vec::new();
    for t in texts {
        let toks = word_tokenize(t);
        word_tokens += toks.len();
        kept.extend(toks.into_iter().filter(|w| !cfg.is_stopword(w)));
    }
    let types: BTreeSet<&String> = kept.iter().collect();
    let mut log_freqs = Vec::new();
    let mut oov = 0;
    for w in &kept {
        match table.count(w) {
            Some(c) => {
                let c = if cfg.per_million { c / table.total() * 1e6 } else { c };
                log_freqs.push(c.ln() / cfg.log_base.ln());
            }
            None => oov += 1,
        }
    }
    let n = log_freqs.len() as f64;
    let mean = (!log_freqs.is_empty()).then(|| log_freqs.iter().sum::<f64>() / n);
    let sd = mean.filter(|_| log_freqs.len() > 1).map(|m| {
        (log_freqs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    });
    ModelLex {
        n_texts: texts.len(),
        word_tokens,
        stopwords_removed: word_tokens - kept.len(),
        kept_tokens: kept.len(),
        types: types.len(),
        ttr: (!kept.is_empty()).then(|| types.len() as f64 / kept.len() as f64),
        oov_count: oov,
        mean_log_freq: mean,
        sd_log_freq: sd,
        log_freqs,
    }
}

pub fn lexical_stats(
    base_texts: &[String],
    degraded_texts: &[String],
    table: &FrequencyTable,
    cfg: &LexConfig,
) -> Result<LexReport> {
    if table.is_empty() {
        return Err(Error::EmptyFrequencyTable);
    }
    if base_texts.is_empty() || degraded_texts.is_empty() {
        return Err(Error::InvalidRecord("lexical statistics need texts from both models".into()));
    }
    if !(cfg.log_base > 0.0 && cfg.log_base != 1.0) {
        return Err(Error::InvalidRecord(format!("log base {} is not usable", cfg.log_base)));
    }
    let base = model_lex(base_texts, table, cfg);
    let degraded = model_lex(degraded_texts, table, cfg);
    let mut notes = Vec::new();
    for (name, m) in [("base", &base), ("degraded", &degraded)] {
        if m.mean_log_freq.is_none() {
            notes.push(format!("{name}: every kept token is out of vocabulary; mean frequency undefined"));
        }
    }
    let welch = match welch_t_test(&degraded.log_freqs, &base.log_freqs) {
        Ok(w) => Some(w),
        Err(e) => {
            notes.push(format!("Welch test: {e}"));
            None
        }
    };
    Ok(LexReport {
        base,
        degraded,
        welch,
        log_base: cfg.log_base,
        per_million: cfg.per_million,
        notes,
    })
}

impl LexReport {
    pub fn render(&self) -> String {
        let f = |v: Option<f64>| v.map_or("n/a".into(), |v| format!("{v:.3}"));
        let mut s = format!(
            "{:<9} {:>7} {:>7} {:>7} {:>6} {:>7} {:>7}\n",
            "model", "tokens", "kept", "types", "OOV", "TTR", "LF"
        );
        for (name, m) in [("base", &self.base), ("degraded", &self.degraded)] {
            s.push_str(&format!(
                "{:<9} {:>7} {:>7} {:>7} {:>6} {:>7} {:>7}\n",
                name,
                m.word_tokens,
                m.kept_tokens,
                m.types,
                m.oov_count,
                f(m.ttr),
                f(m.mean_log_freq)
            ));
        }
        match &self.welch {
            Some(w) => s.push_str(&format!("Welch t={:.3} df={:.1} p={:.4}\n", w.t, w.df, w.p)),
            None => s.push_str("Welch test undefined\n"),
        }
        for n in &self.notes {
            s.push_str(&format!("note: {n}\n"));
        }
        s
    }
}
