//! Fine-tunes a small random BERT checkpoint with a classification layer on
//! a handful of comments.

use codemix::encoder::{write_random_checkpoint, BertShape, BertWeights};
use codemix::heads::{fit_finetune_from, FinetuneConfig};
use codemix::textprep::CleanText;
use codemix::Label;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut vocab: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"].map(String::from).to_vec();
    vocab.extend(["semma", "nalla", "mass", "loosu", "fraud", "waste", "padam", "da"].map(String::from));
    vocab.extend(('a'..='z').flat_map(|c| [c.to_string(), format!("##{c}")]));
    let shape = BertShape {
        hidden_size: 32,
        num_hidden_layers: 2,
        num_attention_heads: 2,
        intermediate_size: 64,
        max_position_embeddings: 32,
    };
    write_random_checkpoint(dir.path(), shape, &vocab, 1)?;

    let data = [
        ("semma padam", Label::NotOffensive),
        ("nalla mass", Label::NotOffensive),
        ("loosu da", Label::Offensive),
        ("fraud waste", Label::Offensive),
    ];
    let texts: Vec<CleanText> = data.iter().cycle().take(32).map(|(t, _)| CleanText::new(*t).unwrap()).collect();
    let labels: Vec<Label> = data.iter().cycle().take(32).map(|(_, l)| *l).collect();

    let config = FinetuneConfig { max_len: 16, epochs: 20, batch_size: 8, learning_rate: 5e-3, ..FinetuneConfig::default() };
    let (head, report) = fit_finetune_from(BertWeights::load(dir.path())?, &texts, &labels, &config)?;
    for e in &report.epochs {
        println!("epoch {}  train loss {:.4}", e.epoch, e.train_loss);
    }
    for (t, _) in &data {
        let p = head.predict(&CleanText::new(*t).unwrap())?;
        println!("{t:<12} {} ({:.3})", p.label, p.score);
    }
    Ok(())
}
