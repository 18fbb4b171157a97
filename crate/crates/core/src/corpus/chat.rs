//! Minimal CHAT (`.cha`) importer.
//!
//! Only what is needed to pull participant speech out of picture-description
//! transcripts: `@ID` headers for label/MMSE, `*XXX:` main tiers (with tab
//! continuation lines). Dependent tiers (`%mor`, `%gra`, ...) and tiers from
//! speakers not listed in [`ChatConfig::participant_tiers`] are dropped.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_mmse, Corpus, Label, Preprocessor, Transcript};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatConfig {
    /// Speaker codes whose main tiers are kept.
    pub participant_tiers: Vec<String>,
    /// `@ID` group values mapped to [`Label::Dementia`] (case-insensitive).
    pub dementia_groups: Vec<String>,
    /// `@ID` group values mapped to [`Label::Control`].
    pub control_groups: Vec<String>,
    /// Zero-based `@ID` field holding the MMSE score, if any.
    pub mmse_field: Option<usize>,
    /// Participant id is the file stem up to the first occurrence of this.
    pub participant_separator: char,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            participant_tiers: vec!["PAR".into()],
            dementia_groups: ["probablead", "possiblead", "dementia", "ad", "mci", "vascular"]
                .map(String::from)
                .to_vec(),
            control_groups: vec!["control".into()],
            mmse_field: Some(8),
            participant_separator: '-',
        }
    }
}

#[derive(Debug, Default)]
struct Parsed {
    text: String,
    label: Option<Label>,
    mmse: Option<u8>,
}

fn parse_file(path: &Path, cfg: &ChatConfig) -> Result<Parsed> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Parsed::default();
    let mut utterances: Vec<String> = Vec::new();
    let mut keep = false;
    for (i, line) in body.lines().enumerate() {
        let err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        if let Some(rest) = line.strip_prefix("@ID:") {
            let fields: Vec<&str> = rest.trim().split('|').collect();
            if fields.len() < 3 {
                return Err(err(format!("@ID has {} fields", fields.len())));
            }
            if !cfg.participant_tiers.iter().any(|t| t == fields[2].trim()) {
                continue;
            }
            let group = fields.get(5).map(|g| g.trim().to_lowercase()).unwrap_or_default();
            let label = if cfg.dementia_groups.iter().any(|g| g.eq_ignore_ascii_case(&group)) {
                Label::Dementia
            } else if cfg.control_groups.iter().any(|g| g.eq_ignore_ascii_case(&group)) {
                Label::Control
            } else {
                Label::Unknown
            };
            out.label = Some(label);
            if let Some(raw) = cfg.mmse_field.and_then(|k| fields.get(k)).map(|s| s.trim()) {
                if !raw.is_empty() {
                    let v: i64 = raw
                        .parse()
                        .map_err(|_| err(format!("mmse field `{raw}` is not an integer")))?;
                    out.mmse = check_mmse(Some(v)).map_err(err)?;
                }
            }
        } else if let Some(rest) = line.strip_prefix('*') {
            let (code, speech) = rest
                .split_once(':')
                .ok_or_else(|| err("main tier without `:`".into()))?;
            keep = cfg.participant_tiers.iter().any(|t| t == code.trim());
            if keep {
                utterances.push(speech.trim().to_string());
            }
        } else if line.starts_with('\t') || line.starts_with(' ') {
            if keep {
                if let Some(last) = utterances.last_mut() {
                    last.push(' ');
                    last.push_str(line.trim());
                }
            }
        } else {
            // headers, dependent tiers, blank lines
            keep = false;
        }
    }
    out.text = utterances.join("\n");
    Ok(out)
}

fn chat_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "cha") {
                files.push(p);
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Imports a single `.cha` file or every `.cha` file under a directory.
pub fn load(path: &Path, cfg: &ChatConfig) -> Result<Corpus> {
    load_with(path, cfg, &Preprocessor::default())
}

pub fn load_with(path: &Path, cfg: &ChatConfig, pre: &Preprocessor) -> Result<Corpus> {
    let mut transcripts = Vec::new();
    for file in chat_files(path)? {
        let parsed = parse_file(&file, cfg)?;
        let stem = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let participant = stem
            .split(cfg.participant_separator)
            .next()
            .unwrap_or(&stem)
            .to_string();
        transcripts.push(Transcript {
            participant_id: participant,
            transcript_id: stem,
            clean_text: pre.clean(&parsed.text),
            raw_text: parsed.text,
            label: parsed.label.unwrap_or(Label::Unknown),
            mmse: parsed.mmse,
            source: file.display().to_string(),
        });
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "chat".into());
    let cfg_json = serde_json::to_string(cfg)?;
    Corpus::new(
        id,
        transcripts,
        vec![
            format!("imported from CHAT at {}", path.display()),
            format!("chat importer config {cfg_json}"),
        ],
        pre.config().clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "@UTF8
@Begin
@Languages:\teng
@Participants:\tPAR Participant, INV Investigator
@ID:\teng|Pitt|PAR|57;|male|ProbableAD||Participant|18||
@ID:\teng|Pitt|INV|||||Investigator|||
*INV:\tjust tell me everything you see happening .
*PAR:\tthe boy [//] the boy is &-uh taking cookies .
%mor:\tdet:art|the n|boy
*PAR:\tand the mother is &=laughs washing
\tthe dishes .
*INV:\tanything else ?
*PAR:\tthe water is overflowing .
@End
";

    #[test]
    fn interviewer_tiers_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("001-0.cha");
        std::fs::write(&p, FIXTURE).unwrap();
        let c = load(&p, &ChatConfig::default()).unwrap();
        assert_eq!(c.transcripts.len(), 1);
        let t = &c.transcripts[0];
        assert_eq!(t.participant_id, "001");
        assert_eq!(t.transcript_id, "001-0");
        assert_eq!(t.label, Label::Dementia);
        assert_eq!(t.mmse, Some(18));
        assert!(!t.clean_text.contains("tell me"));
        assert!(!t.clean_text.contains("anything"));
        assert!(!t.clean_text.contains("det:art"));
        assert_eq!(
            t.clean_text,
            "the boy the boy is uh taking cookies . and the mother is washing the dishes . the water is overflowing ."
        );
    }

    #[test]
    fn tier_codes_configurable() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a-1.cha"), FIXTURE).unwrap();
        let cfg = ChatConfig {
            participant_tiers: vec!["INV".into()],
            ..ChatConfig::default()
        };
        let c = load(dir.path(), &cfg).unwrap();
        assert_eq!(c.transcripts[0].clean_text, "just tell me everything you see happening . anything else ?");
        assert_eq!(c.transcripts[0].label, Label::Unknown);
    }

    #[test]
    fn bad_mmse_is_line_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.cha");
        std::fs::write(&p, FIXTURE.replace("|18|", "|35|")).unwrap();
        assert!(matches!(load(&p, &ChatConfig::default()), Err(Error::Parse { line: 5, .. })));
    }
}
