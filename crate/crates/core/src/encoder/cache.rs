//! Binary embedding cache.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! b"EMB1" | count: u32 | dim: u32 | count*dim f32 values | count ids, each '\n'-terminated UTF-8
//! ```

use std::io::Write;
use std::path::Path;

use super::{Embedding, EncoderError};

const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    dim: usize,
    ids: Vec<String>,
    embeddings: Vec<Embedding>,
}

fn invalid(path: &Path, reason: impl Into<String>) -> EncoderError {
    EncoderError::Cache { path: path.to_path_buf(), reason: reason.into() }
}

impl EmbeddingCache {
    /// Pairs ids with embeddings. All embeddings must have dimension `dim`
    /// and ids may not contain a newline.
    pub fn new(dim: usize, ids: Vec<String>, embeddings: Vec<Embedding>) -> Result<EmbeddingCache, String> {
        if ids.len() != embeddings.len() {
            return Err(format!("{} ids for {} embeddings", ids.len(), embeddings.len()));
        }
        if let Some(e) = embeddings.iter().find(|e| e.dim() != dim) {
            return Err(format!("embedding of dimension {} in a dimension-{dim} cache", e.dim()));
        }
        if let Some(id) = ids.iter().find(|id| id.contains('\n')) {
            return Err(format!("id {id:?} contains a newline"));
        }
        Ok(EmbeddingCache { dim, ids, embeddings })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }

    pub fn into_parts(self) -> (Vec<String>, Vec<Embedding>) {
        (self.ids, self.embeddings)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.len() * (self.dim * 4 + 16));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for e in &self.embeddings {
            for v in e.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for id in &self.ids {
            out.extend_from_slice(id.as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<EmbeddingCache, EncoderError> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(invalid(path, "missing EMB1 header"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (count, dim) = (word(4), word(8));
        let floats_end = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(12))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| invalid(path, format!("truncated: header promises {count}x{dim} floats")))?;
        let mut embeddings = Vec::with_capacity(count);
        for row in bytes[12..floats_end].chunks_exact(4 * dim.max(1)).take(count) {
            let values = row.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            embeddings.push(Embedding::new(values).map_err(|e| invalid(path, e.to_string()))?);
        }
        if dim == 0 {
            embeddings = (0..count).map(|_| Embedding(Vec::new())).collect();
        }
        let tail = std::str::from_utf8(&bytes[floats_end..]).map_err(|_| invalid(path, "ids are not UTF-8"))?;
        let ids: Vec<String> = match tail.strip_suffix('\n') {
            Some(body) => body.split('\n').map(str::to_string).collect(),
            None if tail.is_empty() => Vec::new(),
            None => return Err(invalid(path, "id section is not newline-terminated")),
        };
        if ids.len() != count {
            return Err(invalid(path, format!("header count {count} but {} ids", ids.len())));
        }
        Ok(EmbeddingCache { dim, ids, embeddings })
    }

    pub fn write(&self, path: &Path) -> Result<(), EncoderError> {
        let io = |source| EncoderError::Io { path: path.to_path_buf(), source };
        let mut file = std::fs::File::create(path).map_err(io)?;
        file.write_all(&self.to_bytes()).map_err(io)?;
        file.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<EmbeddingCache, EncoderError> {
        let bytes = std::fs::read(path).map_err(|source| EncoderError::Io { path: path.to_path_buf(), source })?;
        EmbeddingCache::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn exact_byte_layout() {
        let cache = EmbeddingCache::new(2, vec!["a".into(), "bc".into()], vec![emb(&[1.0, -2.0]), emb(&[0.5, 0.0])]).unwrap();
        let bytes = cache.to_bytes();
        let mut expected = b"EMB1".to_vec();
        expected.extend([2, 0, 0, 0, 2, 0, 0, 0]);
        for v in [1.0f32, -2.0, 0.5, 0.0] {
            expected.extend(v.to_le_bytes());
        }
        expected.extend(b"a\nbc\n");
        assert_eq!(bytes, expected);
    }

    #[test]
    fn empty_cache() {
        let cache = EmbeddingCache::new(64, vec![], vec![]).unwrap();
        let bytes = cache.to_bytes();
        assert_eq!(bytes.len(), 12);
        let back = EmbeddingCache::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.dim(), 64);
        assert!(back.is_empty());
    }

    #[test]
    fn rejects_corrupt_input() {
        let p = Path::new("x");
        assert!(EmbeddingCache::from_bytes(b"EMB2\0\0\0\0\0\0\0\0", p).is_err());
        let good = EmbeddingCache::new(1, vec!["a".into()], vec![emb(&[1.0])]).unwrap().to_bytes();
        assert!(EmbeddingCache::from_bytes(&good[..good.len() - 1], p).is_err());
        assert!(EmbeddingCache::from_bytes(&good[..14], p).is_err());
        assert!(EmbeddingCache::new(1, vec!["a\nb".into()], vec![emb(&[1.0])]).is_err());
        assert!(EmbeddingCache::new(2, vec!["a".into()], vec![emb(&[1.0])]).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(rows in prop::collection::vec(("[a-z0-9_]{1,8}", prop::collection::vec(-1e6f32..1e6, 3)), 0..20)) {
            let (ids, embs): (Vec<String>, Vec<Embedding>) = rows.into_iter().map(|(id, v)| (id, emb(&v))).unzip();
            let cache = EmbeddingCache::new(3, ids, embs).unwrap();
            let back = EmbeddingCache::from_bytes(&cache.to_bytes(), Path::new("x")).unwrap();
            prop_assert_eq!(back, cache);
        }
    }
}
