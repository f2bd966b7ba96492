//! Confusion matrix, support-weighted metrics and the rendered report for a
//! small gold/prediction pair.

use codemix::eval::{confusion, render_report, weighted_metrics, RunMetadata, TABLE_HEADER};
use codemix::Label::{NotOffensive as Not, Offensive as Off};

fn main() {
    let golds = [Off, Off, Not, Not];
    let preds = [Off, Not, Not, Not];
    let m = confusion(&golds, &preds).unwrap();
    println!("counts [gold][pred] {:?}", m.counts);
    let metrics = weighted_metrics(&m).unwrap();
    let meta = RunMetadata { dataset: "demo".into(), head: "svm".into(), seed: 0, config_digest: "none".into() };
    let report = render_report(&metrics, &meta);
    print!("{}", report.to_json());
    println!("{TABLE_HEADER}\n{}", report.table_row());
}
