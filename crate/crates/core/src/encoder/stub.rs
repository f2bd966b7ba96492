use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{BackendKind, Embedding, EncoderBackend, EncoderError, TokenSequence, Vocabulary};

pub const STUB_BUCKETS: u32 = 1 << 20;

/// Hermetic encoder: the embedding is the mean, over unmasked positions, of
/// a per-token Gaussian vector derived from `(seed, token id)`.
///
/// Equivalent to a seeded random projection of the normalized token-id
/// histogram, without materializing the projection matrix.
#[derive(Debug, Clone)]
pub struct StubEncoder {
    dim: usize,
    seed: u64,
    vocab: Vocabulary,
}

impl StubEncoder {
    pub fn new(dim: usize, seed: u64) -> StubEncoder {
        assert!(dim > 0, "stub dimension must be positive");
        StubEncoder { dim, seed, vocab: Vocabulary::Hashed { buckets: STUB_BUCKETS } }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn token_vector(&self, id: u32, acc: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ splitmix64(id as u64));
        for slot in acc.iter_mut() {
            let x: f64 = StandardNormal.sample(&mut rng);
            *slot += x;
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl EncoderBackend for StubEncoder {
    fn kind(&self) -> BackendKind {
        BackendKind::DeterministicStub
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn embed_batch(&self, batch: &[TokenSequence]) -> Result<Vec<Embedding>, EncoderError> {
        batch
            .iter()
            .map(|seq| {
                let mut acc = vec![0.0f64; self.dim];
                let mut live = 0usize;
                for (&id, &m) in seq.ids().iter().zip(seq.mask()) {
                    if m == 1 {
                        self.token_vector(id, &mut acc);
                        live += 1;
                    }
                }
                let scale = 1.0 / live.max(1) as f64;
                Embedding::new(acc.into_iter().map(|v| (v * scale) as f32).collect())
            })
            .collect()
    }
}
