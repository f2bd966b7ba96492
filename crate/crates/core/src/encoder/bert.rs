//! Pretrained BERT-family encoder on candle.
//!
//! A model directory holds `config.json`, `vocab.txt` and
//! `model.safetensors`, the layout of a Hugging Face hub snapshot.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, IndexOp, Tensor};
use candle_nn::VarBuilder;
use candle_transformers::models::bert::{BertModel, Config};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BackendKind, Embedding, EncoderBackend, EncoderError, TokenSequence, Vocabulary, WordPieceVocab};

const CONFIG_FILE: &str = "config.json";
const VOCAB_FILE: &str = "vocab.txt";
const WEIGHTS_FILE: &str = "model.safetensors";

fn unavailable(msg: impl Into<String>) -> EncoderError {
    EncoderError::BackendUnavailable(msg.into())
}

fn hub_cache_dirs() -> Vec<PathBuf> {
    let mut dirs = Vec::new();
    if let Some(p) = std::env::var_os("HF_HUB_CACHE") {
        dirs.push(PathBuf::from(p));
    }
    if let Some(p) = std::env::var_os("HF_HOME") {
        dirs.push(PathBuf::from(p).join("hub"));
    }
    if let Some(home) = std::env::var_os("HOME") {
        dirs.push(PathBuf::from(home).join(".cache/huggingface/hub"));
    }
    dirs
}

fn has_model_files(dir: &Path) -> bool {
    [CONFIG_FILE, VOCAB_FILE, WEIGHTS_FILE].iter().all(|f| dir.join(f).is_file())
}

/// Finds the weights for `model_id`: either a directory path, or a snapshot
/// in the local Hugging Face hub cache.
pub fn resolve_model_dir(model_id: &str) -> Result<PathBuf, EncoderError> {
    let direct = Path::new(model_id);
    if direct.is_dir() {
        return if has_model_files(direct) {
            Ok(direct.to_path_buf())
        } else {
            Err(unavailable(format!(
                "{} lacks one of {CONFIG_FILE}, {VOCAB_FILE}, {WEIGHTS_FILE}",
                direct.display()
            )))
        };
    }
    let repo = format!("models--{}", model_id.replace('/', "--"));
    let mut tried = Vec::new();
    for cache in hub_cache_dirs() {
        let snapshots = cache.join(&repo).join("snapshots");
        tried.push(snapshots.display().to_string());
        let Ok(entries) = std::fs::read_dir(&snapshots) else { continue };
        let mut candidates: Vec<PathBuf> = entries.flatten().map(|e| e.path()).filter(|p| has_model_files(p)).collect();
        candidates.sort();
        if let Some(dir) = candidates.pop() {
            return Ok(dir);
        }
    }
    Err(unavailable(format!("no local weights for `{model_id}` (searched: {})", tried.join(", "))))
}

/// Encoder configuration, vocabulary and tensors, with tensor names
/// normalized to `embeddings.*` / `encoder.*`.
#[derive(Clone)]
pub struct BertWeights {
    pub(crate) config: Config,
    pub(crate) config_json: String,
    pub(crate) vocab: WordPieceVocab,
    pub(crate) tensors: HashMap<String, Tensor>,
}

fn normalize_name(name: &str) -> Option<String> {
    let name = name.strip_prefix("bert.").unwrap_or(name);
    if !(name.starts_with("embeddings.") || name.starts_with("encoder.")) || name.ends_with("position_ids") {
        return None;
    }
    let name = if let Some(stem) = name.strip_suffix(".gamma") {
        format!("{stem}.weight")
    } else if let Some(stem) = name.strip_suffix(".beta") {
        format!("{stem}.bias")
    } else {
        name.to_string()
    };
    Some(name)
}

impl BertWeights {
    pub fn load(dir: &Path) -> Result<BertWeights, EncoderError> {
        if !has_model_files(dir) {
            return Err(unavailable(format!("{} is not a model directory", dir.display())));
        }
        let config_json = std::fs::read_to_string(dir.join(CONFIG_FILE))
            .map_err(|source| EncoderError::Io { path: dir.join(CONFIG_FILE), source })?;
        let vocab = WordPieceVocab::from_file(&dir.join(VOCAB_FILE))?;
        let raw = candle_core::safetensors::load(dir.join(WEIGHTS_FILE), &Device::Cpu)?;
        BertWeights::from_parts(config_json, vocab, raw)
    }

    pub(crate) fn from_parts(
        config_json: String,
        vocab: WordPieceVocab,
        raw: HashMap<String, Tensor>,
    ) -> Result<BertWeights, EncoderError> {
        let config: Config =
            serde_json::from_str(&config_json).map_err(|e| unavailable(format!("bad {CONFIG_FILE}: {e}")))?;
        if config.vocab_size < vocab.len() {
            return Err(unavailable(format!(
                "vocab.txt has {} tokens but the model embeds only {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let mut tensors = HashMap::new();
        for (name, t) in raw {
            if let Some(name) = normalize_name(&name) {
                tensors.insert(name, t.to_dtype(DType::F32)?);
            }
        }
        Ok(BertWeights { config, config_json, vocab, tensors })
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    pub fn max_positions(&self) -> usize {
        self.config.max_position_embeddings
    }

    pub fn vocab(&self) -> &WordPieceVocab {
        &self.vocab
    }
}

/// Runs `model` on a batch and returns the final hidden state at position 0,
/// shape `[batch, hidden]`.
pub(crate) fn cls_hidden(model: &BertModel, batch: &[TokenSequence], device: &Device) -> candle_core::Result<Tensor> {
    let rows = batch.len();
    let len = batch.first().map(TokenSequence::max_len).unwrap_or(0);
    let ids: Vec<u32> = batch.iter().flat_map(|s| s.ids().iter().copied()).collect();
    let mask: Vec<u32> = batch.iter().flat_map(|s| s.mask().iter().map(|&m| m as u32)).collect();
    let ids = Tensor::from_vec(ids, (rows, len), device)?;
    let mask = Tensor::from_vec(mask, (rows, len), device)?;
    let token_types = ids.zeros_like()?;
    let hidden = model.forward(&ids, &token_types, Some(&mask))?;
    hidden.i((.., 0, ..))?.contiguous()
}

/// Frozen pretrained encoder used for feature extraction.
pub struct BertEncoder {
    model: BertModel,
    dim: usize,
    max_positions: usize,
    vocab: Vocabulary,
    device: Device,
}

impl std::fmt::Debug for BertEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BertEncoder").field("dim", &self.dim).field("max_positions", &self.max_positions).finish_non_exhaustive()
    }
}

impl BertEncoder {
    pub fn load(model_id: &str) -> Result<BertEncoder, EncoderError> {
        let dir = resolve_model_dir(model_id)?;
        BertEncoder::from_weights(&BertWeights::load(&dir)?)
    }

    pub fn from_weights(weights: &BertWeights) -> Result<BertEncoder, EncoderError> {
        let device = Device::Cpu;
        let vb = VarBuilder::from_tensors(weights.tensors.clone(), DType::F32, &device);
        let model = BertModel::load(vb, &weights.config)?;
        Ok(BertEncoder {
            model,
            dim: weights.config.hidden_size,
            max_positions: weights.config.max_position_embeddings,
            vocab: Vocabulary::WordPiece(weights.vocab.clone()),
            device,
        })
    }
}

impl EncoderBackend for BertEncoder {
    fn kind(&self) -> BackendKind {
        BackendKind::PretrainedMultilingual
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn max_positions(&self) -> usize {
        self.max_positions
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn embed_batch(&self, batch: &[TokenSequence]) -> Result<Vec<Embedding>, EncoderError> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        for seq in batch {
            if seq.max_len() > self.max_positions {
                return Err(EncoderError::SequenceTooLong { got: seq.max_len(), limit: self.max_positions });
            }
        }
        // Sequences of unequal length cannot share a tensor.
        if batch.iter().any(|s| s.max_len() != batch[0].max_len()) {
            return batch.iter().map(|s| Ok(self.embed_batch(std::slice::from_ref(s))?.remove(0))).collect();
        }
        let cls = cls_hidden(&self.model, batch, &self.device)?;
        cls.to_vec2::<f32>()?.into_iter().map(Embedding::new).collect()
    }
}

/// Dimensions of a randomly initialized checkpoint.
#[derive(Debug, Clone, Copy)]
pub struct BertShape {
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
}

impl BertShape {
    /// The 12-layer, 12-head, 768-wide base configuration.
    pub const BASE: BertShape = BertShape {
        hidden_size: 768,
        num_hidden_layers: 12,
        num_attention_heads: 12,
        intermediate_size: 3072,
        max_position_embeddings: 512,
    };
}

/// Writes a seeded random BERT checkpoint (`config.json`, `vocab.txt`,
/// `model.safetensors`) into `dir`. Used to exercise the pretrained code
/// path without downloading weights.
pub fn write_random_checkpoint(dir: &Path, shape: BertShape, vocab: &[String], seed: u64) -> Result<(), EncoderError> {
    let io = |path: PathBuf| move |source| EncoderError::Io { path, source };
    std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let config_json = serde_json::json!({
        "model_type": "bert",
        "vocab_size": vocab.len(),
        "hidden_size": shape.hidden_size,
        "num_hidden_layers": shape.num_hidden_layers,
        "num_attention_heads": shape.num_attention_heads,
        "intermediate_size": shape.intermediate_size,
        "hidden_act": "gelu",
        "hidden_dropout_prob": 0.1,
        "attention_probs_dropout_prob": 0.1,
        "max_position_embeddings": shape.max_position_embeddings,
        "type_vocab_size": 2,
        "initializer_range": 0.02,
        "layer_norm_eps": 1e-12,
        "pad_token_id": 0
    });
    let config: Config = serde_json::from_value(config_json.clone()).expect("generated config parses");

    let device = Device::Cpu;
    let varmap = candle_nn::VarMap::new();
    BertModel::load(VarBuilder::from_varmap(&varmap, DType::F32, &device), &config)?;
    let mut shapes: Vec<(String, Vec<usize>)> = varmap
        .data()
        .lock()
        .expect("varmap lock")
        .iter()
        .map(|(name, var)| (name.clone(), var.dims().to_vec()))
        .collect();
    shapes.sort();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 0.02).expect("valid normal");
    let mut tensors = HashMap::new();
    for (name, dims) in shapes {
        let numel: usize = dims.iter().product();
        let values: Vec<f32> = if name.contains("LayerNorm") && name.ends_with("weight") {
            vec![1.0; numel]
        } else if name.ends_with("bias") {
            vec![0.0; numel]
        } else {
            (0..numel).map(|_| normal.sample(&mut rng)).collect()
        };
        tensors.insert(format!("bert.{name}"), Tensor::from_vec(values, dims, &device)?);
    }
    candle_core::safetensors::save(&tensors, dir.join(WEIGHTS_FILE))?;
    std::fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(&config_json).unwrap())
        .map_err(io(dir.join(CONFIG_FILE)))?;
    let mut vocab_text = vocab.join("\n");
    vocab_text.push('\n');
    std::fs::write(dir.join(VOCAB_FILE), vocab_text).map_err(io(dir.join(VOCAB_FILE)))?;
    Ok(())
}
