use std::collections::HashMap;
use std::path::Path;

use super::{EncoderError, TokenSequence};
use crate::textprep::CleanText;

/// Ids of the four structural tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
}

const MAX_WORD_CHARS: usize = 100;

/// BERT-style WordPiece vocabulary read from a `vocab.txt` (one token per
/// line, id = line number).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPieceVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    specials: SpecialIds,
}

impl WordPieceVocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<WordPieceVocab, EncoderError> {
        let index: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let special = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| EncoderError::BackendUnavailable(format!("vocabulary has no {name} token")))
        };
        let specials =
            SpecialIds { pad: special("[PAD]")?, unk: special("[UNK]")?, cls: special("[CLS]")?, sep: special("[SEP]")? };
        Ok(WordPieceVocab { tokens, index, specials })
    }

    pub fn from_file(path: &Path) -> Result<WordPieceVocab, EncoderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| EncoderError::Io { path: path.to_path_buf(), source })?;
        WordPieceVocab::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Greedy longest-match-first split of one word into subword ids.
    fn word_pieces(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(self.specials.unk);
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut candidate: String = chars[start..end].iter().collect();
                if start > 0 {
                    candidate.insert_str(0, "##");
                }
                if let Some(&id) = self.index.get(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => pieces.push(id),
                None => {
                    out.push(self.specials.unk);
                    return;
                }
            }
            start = end;
        }
        out.extend(pieces);
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F | 0x2B820..=0x2CEAF | 0xF900..=0xFAFF | 0x2F800..=0x2FA1F)
}

/// How words become token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Vocabulary {
    /// Each word hashes (FNV-1a) into one of `buckets` ids after the four
    /// specials, which occupy ids 0..4 as PAD, UNK, CLS, SEP.
    Hashed { buckets: u32 },
    WordPiece(WordPieceVocab),
}

impl Vocabulary {
    pub fn specials(&self) -> SpecialIds {
        match self {
            Vocabulary::Hashed { .. } => SpecialIds { pad: 0, unk: 1, cls: 2, sep: 3 },
            Vocabulary::WordPiece(v) => v.specials,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Vocabulary::Hashed { buckets } => *buckets as usize + 4,
            Vocabulary::WordPiece(v) => v.len(),
        }
    }

    /// Subword ids of `text`, without specials.
    pub fn encode(&self, text: &CleanText) -> Vec<u32> {
        let mut out = Vec::new();
        match self {
            Vocabulary::Hashed { buckets } => {
                out.extend(text.tokens().map(|w| 4 + (fnv1a(w.as_bytes()) % *buckets as u64) as u32));
            }
            Vocabulary::WordPiece(vocab) => {
                for word in text.tokens() {
                    if word.chars().any(is_cjk) {
                        let mut rest = String::new();
                        for c in word.chars() {
                            if is_cjk(c) {
                                if !rest.is_empty() {
                                    vocab.word_pieces(&rest, &mut out);
                                    rest.clear();
                                }
                                vocab.word_pieces(c.encode_utf8(&mut [0; 4]), &mut out);
                            } else {
                                rest.push(c);
                            }
                        }
                        if !rest.is_empty() {
                            vocab.word_pieces(&rest, &mut out);
                        }
                    } else {
                        vocab.word_pieces(word, &mut out);
                    }
                }
            }
        }
        out
    }

    pub fn tokenize(&self, text: &CleanText, max_len: usize) -> Result<TokenSequence, EncoderError> {
        TokenSequence::build(&self.encode(text), self.specials(), max_len)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}
