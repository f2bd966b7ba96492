//! The three classifier heads behind one prediction interface.

mod artifact;
mod finetune;
mod folds;
mod mlp;
mod svm;
mod tunable;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::encoder::{Embedding, EncoderError};
use crate::eval::EvalError;
use crate::textprep::CleanText;

pub use artifact::{from_bytes, load, read_header, save, to_bytes, ArtifactHeader, ARTIFACT_VERSION};
pub use finetune::{fit_finetune_from, FinetuneConfig, FinetuneHead, DEFAULT_FINETUNE_MODEL};
pub use folds::{make_folds, FoldPlan, DEFAULT_FOLDS};
pub use mlp::{MlpConfig, MlpHead};
pub use svm::{fit_linear, LinearModel, PlattScaling, SvmConfig, SvmHead, SvmMode};

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("single-class input: every training label is {0}")]
    SingleClass(Label),
    #[error("no training examples")]
    Empty,
    #[error("{inputs} inputs but {labels} labels")]
    LengthMismatch { inputs: usize, labels: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("backend not fine-tunable")]
    NotFineTunable,
    #[error("{head} head expects {expected} input")]
    WrongInput { head: HeadKind, expected: &'static str },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("model computation failed: {0}")]
    Model(#[from] candle_core::Error),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error("io error on {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    #[default]
    Svm,
    Mlp,
    Finetune,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Svm => "svm",
            HeadKind::Mlp => "mlp",
            HeadKind::Finetune => "finetune",
        }
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for HeadKind {
    type Err = HeadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "svm" => Ok(HeadKind::Svm),
            "mlp" => Ok(HeadKind::Mlp),
            "finetune" => Ok(HeadKind::Finetune),
            other => Err(HeadError::InvalidConfig(format!("unknown head kind `{other}`"))),
        }
    }
}

/// A label with the probability the head assigns to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    /// Probability of `label`; always in `[0.5, 1]`.
    pub score: f64,
    /// Probabilities indexed by [`Label::index`].
    pub probabilities: [f64; 2],
}

impl Prediction {
    pub fn from_offensive_probability(p: f64) -> Prediction {
        let p = p.clamp(0.0, 1.0);
        let probabilities = [p, 1.0 - p];
        let label = if p >= 0.5 { Label::Offensive } else { Label::NotOffensive };
        Prediction { label, score: probabilities[label.index()], probabilities }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    pub n: usize,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

/// Diagnostics from training: cross-validation folds (svm) or per-epoch
/// losses (mlp, finetune).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<FoldScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epochs: Vec<EpochLoss>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_weighted_f1: Option<f64>,
}

impl TrainReport {
    pub fn mean_fold_f1(&self) -> Option<f64> {
        (!self.folds.is_empty()).then(|| self.folds.iter().map(|f| f.weighted_f1).sum::<f64>() / self.folds.len() as f64)
    }
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum HeadModel {
    Svm(SvmHead),
    Mlp(MlpHead),
    Finetune(FinetuneHead),
}

/// A fitted classifier and its training diagnostics. Immutable once built.
#[derive(Debug)]
pub struct TrainedHead {
    pub model: HeadModel,
    pub train_report: TrainReport,
}

#[derive(Debug, Clone, Copy)]
pub enum HeadInput<'a> {
    Embedding(&'a Embedding),
    Text(&'a CleanText),
}

impl TrainedHead {
    pub fn kind(&self) -> HeadKind {
        match self.model {
            HeadModel::Svm(_) => HeadKind::Svm,
            HeadModel::Mlp(_) => HeadKind::Mlp,
            HeadModel::Finetune(_) => HeadKind::Finetune,
        }
    }

    /// Embedding dimension for svm/mlp, sequence length for finetune.
    pub fn input_dim(&self) -> usize {
        match &self.model {
            HeadModel::Svm(h) => h.input_dim(),
            HeadModel::Mlp(h) => h.input_dim(),
            HeadModel::Finetune(h) => h.max_len(),
        }
    }
}

pub(crate) fn check_labels(inputs: usize, labels: &[Label]) -> Result<(), HeadError> {
    if inputs != labels.len() {
        return Err(HeadError::LengthMismatch { inputs, labels: labels.len() });
    }
    let first = *labels.first().ok_or(HeadError::Empty)?;
    if labels.iter().all(|&l| l == first) {
        return Err(HeadError::SingleClass(first));
    }
    Ok(())
}

pub(crate) fn check_training_set(embeddings: &[Embedding], labels: &[Label]) -> Result<(), HeadError> {
    check_labels(embeddings.len(), labels)?;
    let dim = embeddings[0].dim();
    if let Some(e) = embeddings.iter().find(|e| e.dim() != dim) {
        return Err(HeadError::DimensionMismatch { expected: dim, got: e.dim() });
    }
    Ok(())
}

pub fn train_svm(embeddings: &[Embedding], labels: &[Label], config: &SvmConfig, folds: &FoldPlan) -> Result<TrainedHead, HeadError> {
    let (head, train_report) = svm::fit_svm(embeddings, labels, config, folds)?;
    Ok(TrainedHead { model: HeadModel::Svm(head), train_report })
}

pub fn train_mlp(
    embeddings: &[Embedding],
    labels: &[Label],
    config: &MlpConfig,
    validation_fraction: f64,
) -> Result<TrainedHead, HeadError> {
    let (head, train_report) = mlp::fit_mlp(embeddings, labels, config, validation_fraction)?;
    Ok(TrainedHead { model: HeadModel::Mlp(head), train_report })
}

pub fn train_finetune(texts: &[CleanText], labels: &[Label], config: &FinetuneConfig) -> Result<TrainedHead, HeadError> {
    let (head, train_report) = finetune::fit_finetune(texts, labels, config)?;
    Ok(TrainedHead { model: HeadModel::Finetune(head), train_report })
}

pub fn predict(head: &TrainedHead, input: HeadInput<'_>) -> Result<Prediction, HeadError> {
    let check_dim = |expected: usize, e: &Embedding| {
        if e.dim() == expected {
            Ok(())
        } else {
            Err(HeadError::DimensionMismatch { expected, got: e.dim() })
        }
    };
    match (&head.model, input) {
        (HeadModel::Svm(h), HeadInput::Embedding(e)) => {
            check_dim(h.input_dim(), e)?;
            Ok(h.predict(&e.to_f64()))
        }
        (HeadModel::Mlp(h), HeadInput::Embedding(e)) => {
            check_dim(h.input_dim(), e)?;
            Ok(h.predict(&e.to_f64()))
        }
        (HeadModel::Finetune(h), HeadInput::Text(t)) => h.predict(t),
        (HeadModel::Finetune(_), HeadInput::Embedding(_)) => {
            Err(HeadError::WrongInput { head: HeadKind::Finetune, expected: "normalized text" })
        }
        (_, HeadInput::Text(_)) => Err(HeadError::WrongInput { head: head.kind(), expected: "embedding" }),
    }
}
