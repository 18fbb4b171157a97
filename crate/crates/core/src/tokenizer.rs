//! Byte-level BPE compatible with the published GPT-2 `vocab.json` /
//! `merges.txt` pair.
//!
//! Text is split with the GPT-2 pre-tokenization pattern, every piece is
//! mapped byte-by-byte onto printable code points, and merges are applied
//! in rank order until no ranked pair remains.

use std::collections::HashMap;
use std::path::Path;

use fancy_regex::Regex;

use crate::error::{Error, Result};

pub const END_OF_TEXT: &str = "<|endoftext|>";

const PRETOKENIZE: &str =
    r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

/// Token ids together with the text they were produced from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub source_text: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// The reversible byte → printable-char table used by GPT-2.
fn byte_encoder() -> [char; 256] {
    let mut printable: Vec<u32> = (b'!' as u32..=b'~' as u32)
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut table = ['\0'; 256];
    for &b in &printable {
        table[b as usize] = char::from_u32(b).expect("latin-1 code point");
    }
    let mut next = 0u32;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            table[b as usize] = char::from_u32(256 + next).expect("valid code point");
            next += 1;
            printable.push(b);
        }
    }
    table
}

#[derive(Debug, Clone)]
pub struct Vocab {
    pub token_to_id: HashMap<String, u32>,
    pub id_to_token: Vec<String>,
    pub merges: Vec<(String, String)>,
    pub byte_encoder: [char; 256],
}

/// GPT-2 tokenizer. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocab,
    ranks: HashMap<(String, String), usize>,
    byte_decoder: HashMap<char, u8>,
    pattern: Regex,
    eot_id: u32,
}

impl Tokenizer {
    pub fn from_files(vocab_path: &Path, merges_path: &Path) -> Result<Self> {
        let vocab_json =
            std::fs::read_to_string(vocab_path).map_err(|e| Error::io(vocab_path, e))?;
        let merges_txt =
            std::fs::read_to_string(merges_path).map_err(|e| Error::io(merges_path, e))?;
        Self::from_strs(&vocab_json, &merges_txt).map_err(|reason| Error::TokenizerFile {
            path: if reason.starts_with("merges") {
                merges_path.to_path_buf()
            } else {
                vocab_path.to_path_buf()
            },
            reason,
        })
    }

    /// The GPT-2 vocabulary and merges compiled into the library.
    pub fn bundled() -> &'static Tokenizer {
        static TOK: std::sync::OnceLock<Tokenizer> = std::sync::OnceLock::new();
        TOK.get_or_init(|| {
            Self::from_strs(
                include_str!("../../../assets/gpt2/vocab.json"),
                include_str!("../../../assets/gpt2/merges.txt"),
            )
            .expect("bundled vocabulary is well formed")
        })
    }

    /// Loads `vocab.json` and `merges.txt` from one directory.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        Self::from_files(&dir.join("vocab.json"), &dir.join("merges.txt"))
    }

    fn from_strs(vocab_json: &str, merges_txt: &str) -> std::result::Result<Self, String> {
        let token_to_id: HashMap<String, u32> =
            serde_json::from_str(vocab_json).map_err(|e| format!("vocab: {e}"))?;
        let n = token_to_id.len();
        let mut id_to_token = vec![None; n];
        for (tok, &id) in &token_to_id {
            let slot = id_to_token
                .get_mut(id as usize)
                .ok_or_else(|| format!("vocab: id {id} is not dense in [0, {n})"))?;
            if slot.replace(tok.clone()).is_some() {
                return Err(format!("vocab: id {id} assigned twice"));
            }
        }
        let id_to_token: Vec<String> = id_to_token.into_iter().map(Option::unwrap).collect();
        let eot_id = *token_to_id
            .get(END_OF_TEXT)
            .ok_or_else(|| format!("vocab: missing {END_OF_TEXT}"))?;

        let mut merges = Vec::new();
        for (lineno, line) in merges_txt.lines().enumerate() {
            if line.starts_with("#version") || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => merges.push((a.to_string(), b.to_string())),
                _ => return Err(format!("merges: line {} is not a pair", lineno + 1)),
            }
        }
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, pair)| (pair.clone(), i))
            .collect();

        let byte_encoder = byte_encoder();
        let byte_decoder = byte_encoder
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();
        Ok(Self {
            vocab: Vocab {
                token_to_id,
                id_to_token,
                merges,
                byte_encoder,
            },
            ranks,
            byte_decoder,
            pattern: Regex::new(PRETOKENIZE).expect("static pattern"),
            eot_id,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.id_to_token.len()
    }

    pub fn eot_id(&self) -> u32 {
        self.eot_id
    }

    /// Encodes `text` literally; an `<|endoftext|>` substring is treated as
    /// ordinary characters, not as the special token.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::new();
        for piece in self.pattern.find_iter(text) {
            let piece = piece.expect("pre-tokenization pattern cannot fail").as_str();
            let mapped: String = piece
                .bytes()
                .map(|b| self.vocab.byte_encoder[b as usize])
                .collect();
            self.bpe(&mapped, &mut ids);
        }
        TokenSequence {
            ids,
            source_text: text.to_string(),
        }
    }

    fn bpe(&self, word: &str, out: &mut Vec<u32>) {
        if let Some(&id) = self.vocab.token_to_id.get(word) {
            out.push(id);
            return;
        }
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (left, right) = &self.vocab.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == left && &symbols[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        for s in symbols {
            // Every single byte symbol is in the vocabulary, and merges only
            // produce vocabulary entries.
            out.push(self.vocab.token_to_id[&s]);
        }
    }

    /// Raw bytes of the concatenated tokens.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        for &id in ids {
            let tok = self
                .vocab
                .id_to_token
                .get(id as usize)
                .ok_or(Error::TokenOutOfRange {
                    id,
                    vocab_size: self.vocab_size(),
                })?;
            if id == self.eot_id {
                bytes.extend_from_slice(tok.as_bytes());
                continue;
            }
            for c in tok.chars() {
                bytes.push(self.byte_decoder[&c]);
            }
        }
        Ok(bytes)
    }

    /// Decodes ids to text. Sequences that split a multi-byte character are
    /// decoded lossily.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::path::PathBuf;
    use std::sync::OnceLock;

    pub(crate) fn assets_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets/gpt2")
    }

    pub(crate) fn gpt2() -> &'static Tokenizer {
        static TOK: OnceLock<Tokenizer> = OnceLock::new();
        TOK.get_or_init(|| Tokenizer::from_dir(&assets_dir()).expect("bundled vocabulary"))
    }

    #[test]
    fn byte_table_is_a_bijection() {
        let t = byte_encoder();
        let mut seen: Vec<char> = t.to_vec();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 256);
        assert_eq!(t[b' ' as usize], 'Ġ');
        assert_eq!(t[b'\n' as usize], 'Ċ');
    }

    #[test]
    fn vocab_shape() {
        let tok = gpt2();
        assert_eq!(tok.vocab_size(), 50257);
        assert_eq!(tok.eot_id(), 50256);
        assert_eq!(tok.vocab().merges.len(), 50000);
    }

    #[test]
    fn known_encodings() {
        let tok = gpt2();
        assert!(tok.encode("").is_empty());
        assert_eq!(tok.encode("Hello").ids, vec![15496]);
        assert_eq!(
            tok.encode("the boy has climbed up").ids,
            vec![1169, 2933, 468, 19952, 510]
        );
    }

    #[test]
    fn decode_edges() {
        let tok = gpt2();
        assert_eq!(tok.decode(&[]).unwrap(), "");
        assert_eq!(tok.decode(&[50256]).unwrap(), END_OF_TEXT);
        assert!(matches!(
            tok.decode(&[50257]),
            Err(Error::TokenOutOfRange { id: 50257, .. })
        ));
    }

    #[test]
    fn whitespace_runs_follow_lookahead_rule() {
        let tok = gpt2();
        for s in ["a  b", "a\n\nb", "  leading", "trailing  ", "tab\there", "x \n y"] {
            assert_eq!(tok.decode(&tok.encode(s).ids).unwrap(), s);
        }
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(Tokenizer::from_strs("{\"a\": 1}", "").is_err());
        assert!(Tokenizer::from_strs("{\"<|endoftext|>\": 0}", "a b c").is_err());
        assert!(Tokenizer::from_strs("{\"<|endoftext|>\": 0}", "#version: 0.2\n").is_ok());
    }
}
