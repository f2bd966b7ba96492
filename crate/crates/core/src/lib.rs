//! Offensive-content detection for romanized code-mixed comments
//! (Tamil-English "Tanglish" and Malayalam-English "Manglish").
//!
//! The pipeline runs in five stages, each usable on its own:
//!
//! * [`corpus`] loads delimited dataset files into labeled records,
//! * [`textprep`] strips links, handles and noise and lemmatizes English words,
//! * [`encoder`] turns normalized text into fixed-size sentence embeddings,
//! * [`heads`] trains and applies a classifier (linear SVM, MLP or a
//!   fine-tuned transformer),
//! * [`eval`] computes per-class and support-weighted precision/recall/F1.
//!
//! [`pipeline`] wires the stages together behind a TOML config and backs
//! the `codemix` command-line tool.

pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod heads;
pub mod pipeline;
pub mod textprep;

pub use corpus::{Label, RawRecord};
pub use encoder::{Embedding, EncoderBackend};
pub use eval::{MetricsReport, ReportDocument};
pub use heads::{predict, HeadInput, Prediction, TrainedHead};
pub use textprep::CleanText;
