//! Comment normalization: link/handle/noise removal, lowercasing and
//! dictionary lemmatization.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)(?:https?://|www\.)\S+").unwrap());
static HANDLE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@\w+").unwrap());

const DEFAULT_LEXICON: &str = include_str!("../data/en_lemmas.tsv");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon file not found: {0}")]
    MissingFile(PathBuf),
    #[error("lexicon line {line}: expected `inflected<TAB>base`")]
    Malformed { line: usize },
    #[error("lexicon line {line}: `{word}` is not a lowercase letter-only token")]
    InvalidToken { line: usize, word: String },
    #[error("lexicon base form `{base}` is itself mapped to `{other}`")]
    NotFixedPoint { base: String, other: String },
    #[error("io error reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// True if `c` survives normalization: a letter that is its own lowercase.
fn is_clean_char(c: char) -> bool {
    c.is_alphabetic() && c.to_lowercase().eq(std::iter::once(c))
}

fn is_clean_token(word: &str) -> bool {
    !word.is_empty() && word.chars().all(is_clean_char)
}

/// Normalized comment text: lowercase letters separated by single spaces.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct CleanText(String);

impl CleanText {
    /// Accepts `s` only if it already satisfies the normalized-text invariants.
    pub fn new(s: impl Into<String>) -> Option<CleanText> {
        let s = s.into();
        let valid = s.is_empty() || s.split(' ').all(is_clean_token);
        valid.then_some(CleanText(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.0.split(' ').filter(|t| !t.is_empty())
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for CleanText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for CleanText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Inflected form → base form table. Every base form is a fixed point.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LemmaLexicon {
    entries: HashMap<String, String>,
}

impl LemmaLexicon {
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<LemmaLexicon, LexiconError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut entries = HashMap::new();
        for (i, (k, v)) in pairs.into_iter().enumerate() {
            let (k, v) = (k.into(), v.into());
            for word in [&k, &v] {
                if !is_clean_token(word) {
                    return Err(LexiconError::InvalidToken { line: i + 1, word: word.clone() });
                }
            }
            if k != v {
                entries.insert(k, v);
            }
        }
        for base in entries.values() {
            if let Some(other) = entries.get(base) {
                return Err(LexiconError::NotFixedPoint { base: base.clone(), other: other.clone() });
            }
        }
        Ok(LemmaLexicon { entries })
    }

    /// Parses the two-column tab-delimited format. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse_tsv(contents: &str) -> Result<LemmaLexicon, LexiconError> {
        let mut pairs = Vec::new();
        for (i, line) in contents.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(k), Some(v), None) => pairs.push((k.trim(), v.trim())),
                _ => return Err(LexiconError::Malformed { line: i + 1 }),
            }
        }
        LemmaLexicon::from_pairs(pairs)
    }

    pub fn from_path(path: &Path) -> Result<LemmaLexicon, LexiconError> {
        if !path.is_file() {
            return Err(LexiconError::MissingFile(path.to_path_buf()));
        }
        let contents =
            std::fs::read_to_string(path).map_err(|source| LexiconError::Io { path: path.to_path_buf(), source })?;
        LemmaLexicon::parse_tsv(&contents)
    }

    /// The bundled English table (WordNet-derived, ~39k entries).
    pub fn english() -> LemmaLexicon {
        static ENGLISH: LazyLock<LemmaLexicon> =
            LazyLock::new(|| LemmaLexicon::parse_tsv(DEFAULT_LEXICON).expect("bundled lexicon is valid"));
        ENGLISH.clone()
    }

    pub fn lookup(&self, word: &str) -> Option<&str> {
        self.entries.get(word).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Removes links, then handles, then digits and every non-letter
/// character; collapses whitespace. Case is preserved.
pub fn strip_noise(text: &str) -> String {
    let text = URL.replace_all(text, "");
    let text = HANDLE.replace_all(&text, "");
    let kept: String = text.chars().filter(|c| c.is_alphabetic() || c.is_whitespace()).collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn lemmatize<S: AsRef<str>>(tokens: &[S], lexicon: &LemmaLexicon) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            lexicon.lookup(t).unwrap_or(t).to_string()
        })
        .collect()
}

pub fn normalize(text: &str, lexicon: &LemmaLexicon) -> CleanText {
    // Lowercasing can expand a letter into a letter plus a combining mark
    // (e.g. U+0130); anything that is not a clean letter is dropped again.
    let lowered: String = strip_noise(text)
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|&c| c == ' ' || is_clean_char(c))
        .collect();
    let tokens: Vec<&str> = lowered.split(' ').filter(|t| !t.is_empty()).collect();
    CleanText(lemmatize(&tokens, lexicon).join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex(pairs: &[(&str, &str)]) -> LemmaLexicon {
        LemmaLexicon::from_pairs(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn strip_noise_examples() {
        assert_eq!(strip_noise("Enna da @user123 paaru http://t.co/xyz 100%!!"), "Enna da paaru");
        assert_eq!(strip_noise(""), "");
        assert_eq!(strip_noise("www.example.com padam super"), "padam super");
    }

    #[test]
    fn lemmatize_examples() {
        let english = LemmaLexicon::english();
        assert_eq!(lemmatize(&["eating"], &english), ["eat"]);
        assert_eq!(lemmatize(&["ate", "eaten", "eating"], &english), ["eat", "eat", "eat"]);
        assert_eq!(lemmatize(&["machan"], &english), ["machan"]);
    }

    #[test]
    fn normalize_examples() {
        let l = lex(&[("eating", "eat")]);
        assert_eq!(normalize("EATING Biryani @anna http://x.io 4ever!!", &l).as_str(), "eat biryani ever");
        assert_eq!(normalize("", &l).as_str(), "");
        let c = normalize("semma padam da", &l);
        assert_eq!(normalize(c.as_str(), &l), c);
    }

    #[test]
    fn lexicon_rejects_chains_and_bad_tokens() {
        let err = LemmaLexicon::from_pairs([("eaten", "ate"), ("ate", "eat")]).unwrap_err();
        assert!(matches!(err, LexiconError::NotFixedPoint { .. }));
        let err = LemmaLexicon::parse_tsv("Eating\teat\n").unwrap_err();
        assert!(matches!(err, LexiconError::InvalidToken { line: 1, .. }));
        assert!(matches!(LemmaLexicon::parse_tsv("a\tb\tc\n"), Err(LexiconError::Malformed { line: 1 })));
        assert!(matches!(
            LemmaLexicon::from_path(Path::new("/no/such/lexicon.tsv")),
            Err(LexiconError::MissingFile(_))
        ));
    }

    #[test]
    fn bundled_lexicon_values_are_fixed_points() {
        let english = LemmaLexicon::english();
        assert!(english.len() > 30_000);
        for base in english.entries.values() {
            assert!(english.lookup(base).is_none(), "{base}");
        }
    }

    #[test]
    fn clean_text_constructor_checks_invariants() {
        assert!(CleanText::new("semma padam").is_some());
        assert!(CleanText::new("").is_some());
        assert!(CleanText::new("Semma").is_none());
        assert!(CleanText::new("a  b").is_none());
        assert!(CleanText::new(" a").is_none());
        assert!(CleanText::new("a1").is_none());
        assert!(CleanText::new("தமிழ மல").is_some());
    }

    #[test]
    fn dotted_capital_i_stays_clean() {
        let out = normalize("İstanbul", &LemmaLexicon::default());
        assert!(CleanText::new(out.as_str()).is_some(), "{out:?}");
    }
}
