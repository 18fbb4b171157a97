//! Labeled transcript corpora: ingestion from JSON Lines or a CHAT subset,
//! preprocessing, validation and on-disk persistence.
//!
//! # JSON Lines input
//!
//! One object per line:
//!
//! | field            | type                                   | required |
//! |------------------|----------------------------------------|----------|
//! | `transcript_id`  | string, unique within the file         | yes      |
//! | `participant_id` | string                                 | yes      |
//! | `label`          | `"dementia"`, `"control"`, `"unknown"` | yes      |
//! | `mmse`           | integer 0–30 or `null`                 | no       |
//! | `text`           | raw transcript text                    | yes      |
//! | `source`         | free-form provenance tag               | no       |
//!
//! # Persisted layout
//!
//! A saved corpus is a directory with `manifest.json` (id, provenance,
//! preprocessing config and its hash, class counts, exclusions) and
//! `transcripts.jsonl` (one [`Transcript`] per line).

pub mod chat;
pub mod preprocess;
pub mod sanity;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use preprocess::{preprocess, PreprocessConfig, Preprocessor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Dementia,
    Control,
    Unknown,
}

impl Label {
    /// `Some(true)` for cases, `Some(false)` for controls.
    pub fn is_case(self) -> Option<bool> {
        match self {
            Label::Dementia => Some(true),
            Label::Control => Some(false),
            Label::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub participant_id: String,
    pub transcript_id: String,
    pub raw_text: String,
    pub clean_text: String,
    pub label: Label,
    pub mmse: Option<u8>,
    #[serde(default)]
    pub source: String,
}

/// A transcript dropped at ingestion, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub participant_id: String,
    pub transcript_id: String,
    pub reason: String,
}

/// One participant's transcripts, all sharing a label and MMSE.
#[derive(Debug, Clone, PartialEq)]
pub struct Participant<'a> {
    pub id: &'a str,
    pub label: Label,
    pub mmse: Option<u8>,
    pub transcripts: Vec<&'a Transcript>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub dementia: usize,
    pub control: usize,
    pub unknown: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub id: String,
    /// Included transcripts, sorted by (participant, transcript) id.
    pub transcripts: Vec<Transcript>,
    pub excluded: Vec<Exclusion>,
    pub provenance: Vec<String>,
    pub preprocess: PreprocessConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    id: String,
    provenance: Vec<String>,
    preprocess: PreprocessConfig,
    preprocess_hash: String,
    participants: ClassCounts,
    transcripts: usize,
    excluded: Vec<Exclusion>,
    toolkit_version: String,
}

#[derive(Debug, Deserialize)]
struct JsonlRecord {
    transcript_id: String,
    participant_id: String,
    label: Label,
    #[serde(default)]
    mmse: Option<i64>,
    text: String,
    #[serde(default)]
    source: Option<String>,
}

pub(crate) fn check_mmse(v: Option<i64>) -> std::result::Result<Option<u8>, String> {
    match v {
        None => Ok(None),
        Some(m) if (0..=30).contains(&m) => Ok(Some(m as u8)),
        Some(m) => Err(format!("mmse {m} outside 0..=30")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    ChatSubset,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "chat" | "chat-subset" => Ok(Self::ChatSubset),
            other => Err(format!("unknown corpus format `{other}` (jsonl|chat-subset)")),
        }
    }
}

impl Corpus {
    /// Assembles a corpus from transcripts, enforcing unique transcript ids,
    /// non-empty clean text (empty ones move to `excluded`) and a single
    /// label/MMSE per participant.
    pub fn new(
        id: impl Into<String>,
        transcripts: Vec<Transcript>,
        provenance: Vec<String>,
        preprocess: PreprocessConfig,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut kept = Vec::new();
        let mut excluded = Vec::new();
        for t in transcripts {
            if !seen.insert(t.transcript_id.clone()) {
                return Err(Error::DuplicateTranscript(t.transcript_id));
            }
            if let Some(m) = t.mmse {
                if m > 30 {
                    return Err(Error::InvalidRecord(format!(
                        "transcript `{}`: mmse {m} outside 0..=30",
                        t.transcript_id
                    )));
                }
            }
            if !t.clean_text.is_ascii() {
                return Err(Error::InvalidRecord(format!(
                    "transcript `{}`: clean text is not ASCII",
                    t.transcript_id
                )));
            }
            if t.clean_text.trim().is_empty() {
                excluded.push(Exclusion {
                    participant_id: t.participant_id,
                    transcript_id: t.transcript_id,
                    reason: "empty after preprocessing".into(),
                });
            } else {
                kept.push(t);
            }
        }
        kept.sort_by(|a, b| {
            (&a.participant_id, &a.transcript_id).cmp(&(&b.participant_id, &b.transcript_id))
        });
        excluded.sort_by(|a, b| a.transcript_id.cmp(&b.transcript_id));
        let corpus = Self {
            id: id.into(),
            transcripts: kept,
            excluded,
            provenance,
            preprocess,
        };
        corpus.check_participants()?;
        Ok(corpus)
    }

    fn check_participants(&self) -> Result<()> {
        for p in self.participants() {
            for t in &p.transcripts {
                if t.label != p.label || t.mmse != p.mmse {
                    return Err(Error::InvalidRecord(format!(
                        "participant `{}` has inconsistent label or mmse across transcripts",
                        p.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Participants in id order.
    pub fn participants(&self) -> Vec<Participant<'_>> {
        let mut groups: BTreeMap<&str, Vec<&Transcript>> = BTreeMap::new();
        for t in &self.transcripts {
            groups.entry(&t.participant_id).or_default().push(t);
        }
        groups
            .into_iter()
            .map(|(id, transcripts)| Participant {
                id,
                label: transcripts[0].label,
                mmse: transcripts[0].mmse,
                transcripts,
            })
            .collect()
    }

    pub fn class_counts(&self) -> ClassCounts {
        let mut c = ClassCounts::default();
        for p in self.participants() {
            match p.label {
                Label::Dementia => c.dementia += 1,
                Label::Control => c.control += 1,
                Label::Unknown => c.unknown += 1,
            }
        }
        c
    }

    /// Keeps only the listed participants.
    pub fn subset(&self, participant_ids: &BTreeSet<&str>, id: impl Into<String>) -> Corpus {
        Corpus {
            id: id.into(),
            transcripts: self
                .transcripts
                .iter()
                .filter(|t| participant_ids.contains(t.participant_id.as_str()))
                .cloned()
                .collect(),
            excluded: Vec::new(),
            provenance: self.provenance.clone(),
            preprocess: self.preprocess.clone(),
        }
    }

    pub fn load(path: &Path, format: CorpusFormat) -> Result<Corpus> {
        match format {
            CorpusFormat::Jsonl => Self::load_jsonl(path, &Preprocessor::default()),
            CorpusFormat::ChatSubset => chat::load(path, &chat::ChatConfig::default()),
        }
    }

    /// Reads raw records and preprocesses their text.
    pub fn load_jsonl(path: &Path, pre: &Preprocessor) -> Result<Corpus> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut transcripts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |reason: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            let rec: JsonlRecord =
                serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            let mmse = check_mmse(rec.mmse).map_err(parse_err)?;
            transcripts.push(Transcript {
                clean_text: pre.clean(&rec.text),
                raw_text: rec.text,
                participant_id: rec.participant_id,
                transcript_id: rec.transcript_id,
                label: rec.label,
                mmse,
                source: rec.source.unwrap_or_default(),
            });
        }
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".into());
        Corpus::new(
            id,
            transcripts,
            vec![format!("imported from {}", path.display())],
            pre.config().clone(),
        )
    }

    /// Writes `manifest.json` and `transcripts.jsonl` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            id: self.id.clone(),
            provenance: self.provenance.clone(),
            preprocess: self.preprocess.clone(),
            preprocess_hash: self.preprocess.hash(),
            participants: self.class_counts(),
            transcripts: self.transcripts.len(),
            excluded: self.excluded.clone(),
            toolkit_version: crate::VERSION.to_string(),
        };
        let mpath = dir.join("manifest.json");
        write_atomic(&mpath, &serde_json::to_vec_pretty(&manifest)?)?;
        let mut lines = Vec::new();
        for t in &self.transcripts {
            serde_json::to_writer(&mut lines, t)?;
            lines.push(b'\n');
        }
        write_atomic(&dir.join("transcripts.jsonl"), &lines)
    }

    pub fn load_dir(dir: &Path) -> Result<Corpus> {
        let mpath = dir.join("manifest.json");
        let mtext = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&mtext)?;
        let tpath = dir.join("transcripts.jsonl");
        let ttext = std::fs::read_to_string(&tpath).map_err(|e| Error::io(&tpath, e))?;
        let mut transcripts = Vec::new();
        for (i, line) in ttext.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            transcripts.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                path: tpath.clone(),
                line: i + 1,
                reason: e.to_string(),
            })?);
        }
        let mut corpus = Corpus::new(
            manifest.id,
            transcripts,
            manifest.provenance,
            manifest.preprocess,
        )?;
        corpus.excluded = manifest.excluded;
        Ok(corpus)
    }

    /// Loads a saved corpus directory, or imports a `.jsonl` file / CHAT
    /// file or directory depending on what `path` points at.
    pub fn open(path: &Path) -> Result<Corpus> {
        if path.is_dir() && path.join("manifest.json").exists() {
            Self::load_dir(path)
        } else if path.extension().is_some_and(|e| e == "jsonl") {
            Self::load(path, CorpusFormat::Jsonl)
        } else {
            Self::load(path, CorpusFormat::ChatSubset)
        }
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
