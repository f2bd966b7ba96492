//! Runs prep, embed, train, predict and evaluate on the toy corpus and
//! prints the report table.
//!
//! ```text
//! cargo run -p codemix --example pipeline -- [svm|mlp] [out_dir]
//! ```

use std::path::PathBuf;

use codemix::heads::HeadKind;
use codemix::pipeline::{self, PipelineConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let head: HeadKind = args.next().as_deref().unwrap_or("svm").parse().unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(1);
    });
    let scratch = tempfile::tempdir().unwrap();
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data");

    let out_dir = args.next().map(PathBuf::from).unwrap_or_else(|| scratch.path().to_path_buf());
    let mut config = PipelineConfig { out_dir, ..Default::default() };
    config.dataset.name = "toy".into();
    config.dataset.train = data.join("toy_train.tsv");
    config.dataset.test = Some(data.join("toy_test.tsv"));
    config.head.kind = head;

    match pipeline::run_all(&config) {
        Ok(report) => {
            println!("{}\n{}", codemix::eval::TABLE_HEADER, report.table_row());
            println!("outputs in {}", config.out_dir.display());
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
