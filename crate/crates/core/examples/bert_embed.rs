//! CLS embeddings from a BERT checkpoint directory (`config.json`,
//! `vocab.txt`, `model.safetensors`). Without an argument a small random
//! checkpoint is generated first.
//!
//! ```text
//! cargo run -p codemix --example bert_embed -- /models/bert-base-multilingual-cased
//! ```

use codemix::encoder::{embed_corpus, write_random_checkpoint, BertEncoder, BertShape, EncoderBackend};
use codemix::textprep::CleanText;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let model = match std::env::args().nth(1) {
        Some(dir) => dir,
        None => {
            let mut vocab: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"].map(String::from).to_vec();
            vocab.extend(('a'..='z').flat_map(|c| [c.to_string(), format!("##{c}")]));
            let shape = BertShape {
                hidden_size: 32,
                num_hidden_layers: 2,
                num_attention_heads: 2,
                intermediate_size: 64,
                max_position_embeddings: 64,
            };
            write_random_checkpoint(scratch.path(), shape, &vocab, 0)?;
            scratch.path().to_string_lossy().into_owned()
        }
    };
    let encoder = BertEncoder::load(&model)?;
    let texts = ["semma padam", "loosu da", ""].map(|t| CleanText::new(t).unwrap());
    let embeddings = embed_corpus(&texts, &encoder, 32, 2)?;
    println!("dim {}", encoder.dim());
    for (t, e) in texts.iter().zip(&embeddings) {
        println!("{:?} -> {:?}", t.as_str(), &e.values()[..4]);
    }
    Ok(())
}
