//! Trains the linear SVM head with 10-fold cross-validation on stub
//! embeddings of the toy corpus.

use codemix::corpus::{load_dataset, LabelMap, Schema};
use codemix::encoder::{embed_corpus, StubEncoder};
use codemix::heads::{make_folds, predict, train_svm, HeadInput, SvmConfig};
use codemix::textprep::{normalize, LemmaLexicon};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let records = load_dataset(&data.join("toy_train.tsv"), &Schema::default(), &LabelMap::default())?;
    let lexicon = LemmaLexicon::english();
    let texts: Vec<_> = records.iter().map(|r| normalize(&r.text, &lexicon)).collect();
    let labels: Vec<_> = records.iter().map(|r| r.label.expect("labeled")).collect();
    let embeddings = embed_corpus(&texts, &StubEncoder::new(64, 1), 128, 32)?;

    let folds = make_folds(labels.len(), 10, 3)?;
    let head = train_svm(&embeddings, &labels, &SvmConfig::default(), &folds)?;
    for f in &head.train_report.folds {
        println!("fold {:>2}  n {:>3}  weighted F1 {:.3}", f.fold, f.n, f.weighted_f1);
    }
    println!("mean {:.3}", head.train_report.mean_fold_f1().unwrap());
    let p = predict(&head, HeadInput::Embedding(&embeddings[0]))?;
    println!("{}: {} ({:.3})", records[0].id, p.label, p.score);
    Ok(())
}
