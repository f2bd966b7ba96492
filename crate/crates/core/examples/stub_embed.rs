//! Tokenizes and embeds a few comments with the deterministic stub encoder,
//! then writes and rereads an embedding cache.

use codemix::encoder::{embed_corpus, EmbeddingCache, EncoderBackend, StubEncoder};
use codemix::textprep::{normalize, LemmaLexicon};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lexicon = LemmaLexicon::english();
    let raw = ["Semma MASS padam 🔥", "loosu da @troll http://t.co/x", "vera level bgm"];
    let texts: Vec<_> = raw.iter().map(|t| normalize(t, &lexicon)).collect();
    let stub = StubEncoder::new(16, 7);

    let seq = stub.tokenize(&texts[0], 8)?;
    println!("ids {:?}\nmask {:?}", seq.ids(), seq.mask());

    let embeddings = embed_corpus(&texts, &stub, 32, 2)?;
    for (t, e) in texts.iter().zip(&embeddings) {
        println!("{:<20} {:?}", t.as_str(), &e.values()[..4]);
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("demo.emb");
    let ids = (0..texts.len()).map(|i| format!("c{i}")).collect();
    EmbeddingCache::new(stub.dim(), ids, embeddings)?.write(&path)?;
    let back = EmbeddingCache::read(&path)?;
    println!("cache: {} rows x {} dims, {} bytes", back.len(), back.dim(), std::fs::metadata(&path)?.len());
    Ok(())
}
