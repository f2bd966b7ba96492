//! Trains the dense head (dropout and batch normalization) and prints the
//! per-epoch losses.

use codemix::corpus::{load_dataset, LabelMap, Schema};
use codemix::encoder::{embed_corpus, StubEncoder};
use codemix::heads::{train_mlp, MlpConfig};
use codemix::textprep::{normalize, LemmaLexicon};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let records = load_dataset(&data.join("toy_train.tsv"), &Schema::default(), &LabelMap::default())?;
    let lexicon = LemmaLexicon::english();
    let texts: Vec<_> = records.iter().map(|r| normalize(&r.text, &lexicon)).collect();
    let labels: Vec<_> = records.iter().map(|r| r.label.expect("labeled")).collect();
    let embeddings = embed_corpus(&texts, &StubEncoder::new(64, 1), 128, 32)?;

    let config = MlpConfig { epochs: 15, ..MlpConfig::default() };
    let head = train_mlp(&embeddings, &labels, &config, 0.1)?;
    for e in &head.train_report.epochs {
        println!("epoch {:>2}  train {:.4}  validation {:.4}", e.epoch, e.train_loss, e.validation_loss.unwrap_or(f64::NAN));
    }
    println!("validation weighted F1 {:.3}", head.train_report.validation_weighted_f1.unwrap_or(f64::NAN));
    Ok(())
}
