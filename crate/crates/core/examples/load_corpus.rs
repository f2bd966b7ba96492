//! Loads a labeled TSV file and prints its split summary.
//!
//! ```text
//! cargo run -p codemix --example load_corpus -- path/to/train.tsv
//! ```

use std::path::PathBuf;

use codemix::corpus::{load_dataset, summarize, LabelMap, Schema};

fn main() {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy_train.tsv"));
    let records = match load_dataset(&path, &Schema::default(), &LabelMap::default()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    println!("{}", summarize(&records).to_json_line());
    for r in records.iter().take(3) {
        println!("{}\t{:?}\t{}", r.id, r.label, r.text);
    }
}
