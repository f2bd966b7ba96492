//! End-to-end fine-tuning: a linear classification layer on the CLS hidden
//! state, trained jointly with every encoder weight.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW, VarBuilder, VarMap};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tunable::TunableBert;
use super::{EpochLoss, HeadError, Prediction, TrainReport};
use crate::corpus::Label;
use crate::encoder::{resolve_model_dir, BackendKind, BertWeights, TokenSequence, Vocabulary, DEFAULT_MAX_LEN};
use crate::textprep::CleanText;

pub const DEFAULT_FINETUNE_MODEL: &str = "bert-base-multilingual-cased";

const CLASSIFIER_W: &str = "classifier.weight";
const CLASSIFIER_B: &str = "classifier.bias";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub kind: BackendKind,
    pub model_id: String,
    pub max_len: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            kind: BackendKind::PretrainedMultilingual,
            model_id: DEFAULT_FINETUNE_MODEL.to_string(),
            max_len: DEFAULT_MAX_LEN,
            epochs: 3,
            learning_rate: 2e-5,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// A fine-tuned encoder plus classification layer.
pub struct FinetuneHead {
    pub config: FinetuneConfig,
    pub(crate) weights: BertWeights,
    pub(crate) classifier_w: Tensor,
    pub(crate) classifier_b: Tensor,
    model: TunableBert,
    vocab: Vocabulary,
}

impl std::fmt::Debug for FinetuneHead {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FinetuneHead").field("config", &self.config).finish_non_exhaustive()
    }
}

fn logits(model: &TunableBert, w: &Tensor, b: &Tensor, batch: &[TokenSequence]) -> candle_core::Result<Tensor> {
    model.cls(batch)?.matmul(&w.t()?)?.broadcast_add(b)
}

impl FinetuneHead {
    pub(crate) fn assemble(
        config: FinetuneConfig,
        weights: BertWeights,
        classifier_w: Tensor,
        classifier_b: Tensor,
    ) -> Result<FinetuneHead, HeadError> {
        let vb = VarBuilder::from_tensors(weights.tensors.clone(), DType::F32, &Device::Cpu);
        let model = TunableBert::load(vb, &weights.config)?;
        let vocab = Vocabulary::WordPiece(weights.vocab.clone());
        Ok(FinetuneHead { config, weights, classifier_w, classifier_b, model, vocab })
    }

    pub fn max_len(&self) -> usize {
        self.config.max_len
    }

    pub fn predict(&self, text: &CleanText) -> Result<Prediction, HeadError> {
        let seq = self.vocab.tokenize(text, self.config.max_len)?;
        let logits = logits(&self.model, &self.classifier_w, &self.classifier_b, std::slice::from_ref(&seq))?;
        let probs = candle_nn::ops::softmax_last_dim(&logits)?.to_vec2::<f32>()?;
        Ok(Prediction::from_offensive_probability(probs[0][Label::Offensive.index()] as f64))
    }
}

fn init_classifier(hidden: usize, seed: u64) -> candle_core::Result<(Tensor, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 0.02).unwrap();
    let w: Vec<f32> = (0..2 * hidden).map(|_| normal.sample(&mut rng)).collect();
    Ok((Tensor::from_vec(w, (2, hidden), &Device::Cpu)?, Tensor::zeros(2, DType::F32, &Device::Cpu)?))
}

/// Fine-tunes the pretrained encoder named by `config.model_id` on
/// `texts`. The deterministic stub has no trainable weights and is rejected.
pub fn fit_finetune(texts: &[CleanText], labels: &[Label], config: &FinetuneConfig) -> Result<(FinetuneHead, TrainReport), HeadError> {
    if config.kind == BackendKind::DeterministicStub {
        return Err(HeadError::NotFineTunable);
    }
    let dir = resolve_model_dir(&config.model_id)?;
    fit_finetune_from(BertWeights::load(&dir)?, texts, labels, config)
}

pub fn fit_finetune_from(
    weights: BertWeights,
    texts: &[CleanText],
    labels: &[Label],
    config: &FinetuneConfig,
) -> Result<(FinetuneHead, TrainReport), HeadError> {
    if config.epochs == 0 {
        return Err(HeadError::InvalidConfig("epochs must be at least 1".into()));
    }
    if config.batch_size == 0 || config.max_len < 2 {
        return Err(HeadError::InvalidConfig("batch_size must be ≥ 1 and max_len ≥ 2".into()));
    }
    if config.max_len > weights.max_positions() {
        return Err(HeadError::InvalidConfig(format!(
            "max_len {} exceeds the model's {} positions",
            config.max_len,
            weights.max_positions()
        )));
    }
    super::check_labels(texts.len(), labels)?;

    let device = Device::Cpu;
    let varmap = VarMap::new();
    {
        let mut data = varmap.data().lock().expect("varmap lock");
        for (name, t) in &weights.tensors {
            data.insert(name.clone(), Var::from_tensor(t)?);
        }
        let (w, b) = init_classifier(weights.hidden_size(), config.seed)?;
        data.insert(CLASSIFIER_W.into(), Var::from_tensor(&w)?);
        data.insert(CLASSIFIER_B.into(), Var::from_tensor(&b)?);
    }
    let model = TunableBert::load(VarBuilder::from_varmap(&varmap, DType::F32, &device), &weights.config)?;
    let (classifier_w, classifier_b) = {
        let data = varmap.data().lock().expect("varmap lock");
        (data[CLASSIFIER_W].as_tensor().clone(), data[CLASSIFIER_B].as_tensor().clone())
    };
    let mut optimizer = AdamW::new(
        varmap.all_vars(),
        ParamsAdamW { lr: config.learning_rate, ..ParamsAdamW::default() },
    )?;

    let vocab = Vocabulary::WordPiece(weights.vocab.clone());
    let seqs = texts
        .iter()
        .map(|t| vocab.tokenize(t, config.max_len))
        .collect::<Result<Vec<_>, _>>()?;
    let targets: Vec<u32> = labels.iter().map(|l| l.index() as u32).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TokenSequence> = chunk.iter().map(|&i| seqs[i].clone()).collect();
            let y: Vec<u32> = chunk.iter().map(|&i| targets[i]).collect();
            let y = Tensor::from_vec(y, chunk.len(), &device)?;
            let out = logits(&model, &classifier_w, &classifier_b, &batch)?;
            let loss = candle_nn::loss::cross_entropy(&out, &y)?;
            optimizer.backward_step(&loss)?;
            total += loss.to_scalar::<f32>()? as f64 * chunk.len() as f64;
        }
        epochs.push(EpochLoss { epoch, train_loss: total / seqs.len() as f64, validation_loss: None });
    }

    let data = varmap.data().lock().expect("varmap lock");
    let mut tensors = HashMap::new();
    for name in weights.tensors.keys() {
        tensors.insert(name.clone(), data[name].as_tensor().copy()?);
    }
    let tuned = BertWeights { tensors, ..weights };
    let head = FinetuneHead::assemble(
        config.clone(),
        tuned,
        data[CLASSIFIER_W].as_tensor().copy()?,
        data[CLASSIFIER_B].as_tensor().copy()?,
    )?;
    Ok((head, TrainReport { epochs, ..TrainReport::default() }))
}

