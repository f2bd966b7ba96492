//! Token-sequence construction and CLS-pooled sentence embeddings.
//!
//! Two backends implement [`EncoderBackend`]: a hermetic [`StubEncoder`]
//! (random projection of the token histogram) and [`BertEncoder`], a
//! pretrained BERT-family model loaded from local safetensors weights.

mod bert;
mod cache;
mod stub;
mod vocab;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::CleanText;

pub use bert::{resolve_model_dir, write_random_checkpoint, BertEncoder, BertShape, BertWeights};
#[cfg(test)]
pub(crate) use bert::cls_hidden;
pub use cache::EmbeddingCache;
pub use stub::StubEncoder;
pub use vocab::{SpecialIds, Vocabulary, WordPieceVocab};

pub const DEFAULT_MAX_LEN: usize = 128;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("max_len must be at least 2 (got {0})")]
    MaxLenTooSmall(usize),
    #[error("sequence length {got} exceeds the backend limit of {limit}")]
    SequenceTooLong { got: usize, limit: usize },
    #[error("pretrained encoder unavailable: {0}")]
    BackendUnavailable(String),
    #[error("encoder produced a non-finite value")]
    NonFinite,
    #[error("model computation failed: {0}")]
    Model(#[from] candle_core::Error),
    #[error("batch_size must be at least 1")]
    ZeroBatch,
    #[error("text #{index}: {source}")]
    AtIndex { index: usize, source: Box<EncoderError> },
    #[error("embedding cache {path}: {reason}")]
    Cache { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    PretrainedMultilingual,
    #[default]
    DeterministicStub,
}

/// Fixed-length token ids with a prefix attention mask.
///
/// `ids[0]` is CLS, the last unmasked position is SEP and every masked-out
/// position holds PAD.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u32>,
    mask: Vec<u8>,
}

impl TokenSequence {
    /// Wraps `pieces` in CLS/SEP, truncating so SEP survives, and pads to
    /// `max_len`.
    pub fn build(pieces: &[u32], specials: SpecialIds, max_len: usize) -> Result<TokenSequence, EncoderError> {
        if max_len < 2 {
            return Err(EncoderError::MaxLenTooSmall(max_len));
        }
        let kept = pieces.len().min(max_len - 2);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(specials.cls);
        ids.extend_from_slice(&pieces[..kept]);
        ids.push(specials.sep);
        let live = ids.len();
        ids.resize(max_len, specials.pad);
        let mut mask = vec![1u8; live];
        mask.resize(max_len, 0);
        Ok(TokenSequence { ids, mask })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Number of unmasked positions, CLS and SEP included.
    pub fn live_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

/// A sentence vector pooled from the CLS position.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Embedding, EncoderError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Embedding(values))
        } else {
            Err(EncoderError::NonFinite)
        }
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

pub trait EncoderBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Embedding dimension; constant for the lifetime of the instance.
    fn dim(&self) -> usize;

    /// Longest sequence the backend accepts.
    fn max_positions(&self) -> usize {
        usize::MAX
    }

    fn vocabulary(&self) -> &Vocabulary;

    /// Embeds each sequence independently; output order follows input order.
    fn embed_batch(&self, batch: &[TokenSequence]) -> Result<Vec<Embedding>, EncoderError>;

    fn tokenize(&self, text: &CleanText, max_len: usize) -> Result<TokenSequence, EncoderError> {
        self.vocabulary().tokenize(text, max_len)
    }
}

pub fn embed(seq: &TokenSequence, backend: &dyn EncoderBackend) -> Result<Embedding, EncoderError> {
    let mut out = backend.embed_batch(std::slice::from_ref(seq))?;
    Ok(out.remove(0))
}

/// Tokenizes and embeds `texts` in batches of `batch_size`.
pub fn embed_corpus(
    texts: &[CleanText],
    backend: &dyn EncoderBackend,
    max_len: usize,
    batch_size: usize,
) -> Result<Vec<Embedding>, EncoderError> {
    if batch_size == 0 {
        return Err(EncoderError::ZeroBatch);
    }
    let at = |index, source| EncoderError::AtIndex { index, source: Box::new(source) };
    let mut out = Vec::with_capacity(texts.len());
    for (b, chunk) in texts.chunks(batch_size).enumerate() {
        let start = b * batch_size;
        let seqs = chunk
            .iter()
            .enumerate()
            .map(|(i, t)| backend.tokenize(t, max_len).map_err(|e| at(start + i, e)))
            .collect::<Result<Vec<_>, _>>()?;
        match backend.embed_batch(&seqs) {
            Ok(embs) => out.extend(embs),
            Err(batch_err) => {
                // Pin the failure to a single text.
                for (i, seq) in seqs.iter().enumerate() {
                    embed(seq, backend).map_err(|e| at(start + i, e))?;
                }
                return Err(at(start, batch_err));
            }
        }
    }
    Ok(out)
}
