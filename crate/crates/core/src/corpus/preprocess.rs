//! Transcript cleaning: annotation removal, Unicode-to-ASCII conversion and
//! whitespace normalization.

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Annotation forms removed by default. These follow common CHAT transcript
/// conventions. Each entry is a regular expression; a match is replaced by a
/// space, or by its first capture group when the pattern has one.
pub const DEFAULT_ARTIFACT_PATTERNS: &[&str] = &[
    // bracketed codes: [laughs] [//] [: cookie] [+ exc] [*]
    r"\[[^\]]*\]",
    // media bullets: \x15123_456\x15
    r"\x15[^\x15]*\x15",
    // paralinguistic events: &=coughs &=laughs:multiple
    r"&=[\w:]+",
    // unintelligible / untranscribed speech
    r"\b(?:xxx|yyy|www)\b",
    // timed and untimed pauses: (.) (..) (...) (1.5)
    r"\((?:\.+|\d+(?:\.\d+)?)\)",
    // utterance linkers and special terminators: +... +/. +//? +"
    r#"\+[./!?"<,^]+"#,
    // scope markers around retraced material
    r"[<>]",
    // filler / fragment / omission prefixes: &-uh &+fr &~
    r"&[-+~]?",
    // special-form suffixes: gonna@o
    r"@[a-z:]+",
    // omitted sounds are restored in place: (be)cause -> because
    r"\(([A-Za-z']+)\)",
    r"[()]",
];

const TRANSLITERATIONS: &[(char, &str)] = &[
    ('\u{2018}', "'"),
    ('\u{2019}', "'"),
    ('\u{201A}', "'"),
    ('\u{201B}', "'"),
    ('\u{2032}', "'"),
    ('\u{201C}', "\""),
    ('\u{201D}', "\""),
    ('\u{201E}', "\""),
    ('\u{201F}', "\""),
    ('\u{2033}', "\""),
    ('\u{00AB}', "\""),
    ('\u{00BB}', "\""),
    ('\u{2010}', "-"),
    ('\u{2011}', "-"),
    ('\u{2012}', "-"),
    ('\u{2013}', "-"),
    ('\u{2014}', "-"),
    ('\u{2015}', "-"),
    ('\u{2212}', "-"),
    ('\u{2026}', "..."),
    ('\u{00A0}', " "),
    ('\u{2002}', " "),
    ('\u{2003}', " "),
    ('\u{2009}', " "),
    ('\u{200A}', " "),
    ('\u{202F}', " "),
    ('\u{00E0}', "a"),
    ('\u{00E1}', "a"),
    ('\u{00E2}', "a"),
    ('\u{00E3}', "a"),
    ('\u{00E4}', "a"),
    ('\u{00E5}', "a"),
    ('\u{00E7}', "c"),
    ('\u{00E8}', "e"),
    ('\u{00E9}', "e"),
    ('\u{00EA}', "e"),
    ('\u{00EB}', "e"),
    ('\u{00EC}', "i"),
    ('\u{00ED}', "i"),
    ('\u{00EE}', "i"),
    ('\u{00EF}', "i"),
    ('\u{00F1}', "n"),
    ('\u{00F2}', "o"),
    ('\u{00F3}', "o"),
    ('\u{00F4}', "o"),
    ('\u{00F5}', "o"),
    ('\u{00F6}', "o"),
    ('\u{00F9}', "u"),
    ('\u{00FA}', "u"),
    ('\u{00FB}', "u"),
    ('\u{00FC}', "u"),
    ('\u{00C0}', "A"),
    ('\u{00C1}', "A"),
    ('\u{00C2}', "A"),
    ('\u{00C4}', "A"),
    ('\u{00C7}', "C"),
    ('\u{00C8}', "E"),
    ('\u{00C9}', "E"),
    ('\u{00CA}', "E"),
    ('\u{00D1}', "N"),
    ('\u{00D6}', "O"),
    ('\u{00DC}', "U"),
    ('\u{00DF}', "ss"),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub artifact_patterns: Vec<String>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            artifact_patterns: DEFAULT_ARTIFACT_PATTERNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl PreprocessConfig {
    /// Hex SHA-256 of the canonical JSON form, recorded in corpus manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("serializable");
        let digest = Sha256::digest(json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessor {
    config: PreprocessConfig,
    patterns: Vec<(Regex, &'static str)>,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig) -> std::result::Result<Self, regex::Error> {
        let patterns = config
            .artifact_patterns
            .iter()
            .map(|p| {
                let re = Regex::new(p)?;
                let rep = if re.captures_len() > 1 { "$1" } else { " " };
                Ok((re, rep))
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { config, patterns })
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.config
    }

    /// Cleans raw transcript text. Pattern deletion runs to a fixed point so
    /// the result is stable under re-application.
    pub fn clean(&self, raw: &str) -> String {
        let mut text = transliterate(raw);
        for _ in 0..16 {
            let mut next = text.clone();
            for (re, rep) in &self.patterns {
                next = re.replace_all(&next, *rep).into_owned();
            }
            if next == text {
                break;
            }
            text = next;
        }
        // Unpaired media bullets survive the patterns above.
        text.replace('\x15', " ")
            .split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self::new(PreprocessConfig::default()).expect("default patterns compile")
    }
}

/// Maps known Unicode punctuation and Latin-1 letters to ASCII, replaces
/// control characters with spaces and drops every other non-ASCII char.
pub fn transliterate(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for c in raw.chars() {
        if c.is_ascii() {
            if c.is_ascii_control() && !matches!(c, '\t' | '\n' | '\r' | '\x15') {
                out.push(' ');
            } else {
                out.push(c);
            }
        } else if let Some((_, rep)) = TRANSLITERATIONS.iter().find(|(u, _)| *u == c) {
            out.push_str(rep);
        }
    }
    out
}

/// [`Preprocessor::clean`] with the default pattern list.
pub fn preprocess(raw: &str) -> String {
    thread_local! {
        static DEFAULT: Preprocessor = Preprocessor::default();
    }
    DEFAULT.with(|p| p.clean(raw))
}
