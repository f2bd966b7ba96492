//! File-mediated pipeline: prep → embed → train → predict/evaluate.
//!
//! Every stage reads its inputs from and writes its outputs to
//! `out_dir`:
//!
//! | stage    | writes                                          |
//! |----------|-------------------------------------------------|
//! | prep     | `train.clean.tsv`, `test.clean.tsv`             |
//! | embed    | `train.emb`, `test.emb`                         |
//! | train    | `model.bin`, `train_report.json`                |
//! | predict  | `predictions.tsv`                               |
//! | evaluate | `report.json` (and `predictions.tsv` if absent) |
//!
//! Timestamps go only to the append-only `pipeline.log`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, CorpusError, DatasetSummary, Delimiter, Label, LabelMap, RawRecord, Schema};
use crate::encoder::{
    embed_corpus, BackendKind, BertEncoder, Embedding, EmbeddingCache, EncoderBackend, EncoderError, StubEncoder,
    DEFAULT_MAX_LEN,
};
use crate::eval::{self, EvalError, ReportDocument, RunMetadata};
use crate::heads::{
    self, FinetuneConfig, HeadError, HeadInput, HeadKind, MlpConfig, Prediction, SvmConfig, SvmMode, TrainedHead,
    DEFAULT_FINETUNE_MODEL, DEFAULT_FOLDS,
};
use crate::textprep::{self, CleanText, LemmaLexicon, LexiconError};

pub const TRAIN_CLEAN: &str = "train.clean.tsv";
pub const TEST_CLEAN: &str = "test.clean.tsv";
pub const TRAIN_CACHE: &str = "train.emb";
pub const TEST_CACHE: &str = "test.emb";
pub const MODEL_FILE: &str = "model.bin";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const REPORT_FILE: &str = "report.json";
pub const LOG_FILE: &str = "pipeline.log";

/// Offsets added to the top-level seed for each randomized stage.
pub mod seed_offset {
    pub const ENCODER: u64 = 1;
    pub const FOLDS: u64 = 2;
    pub const HEAD: u64 = 3;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub schema: Schema,
    pub labels: LabelMap,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: "dataset".into(),
            train: PathBuf::from("train.tsv"),
            test: None,
            schema: Schema::default(),
            labels: LabelMap::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub kind: BackendKind,
    pub model_id: String,
    pub max_len: usize,
    pub batch_size: usize,
    /// Embedding dimension of the deterministic stub.
    pub dim: usize,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        EncoderSettings {
            kind: BackendKind::DeterministicStub,
            model_id: DEFAULT_FINETUNE_MODEL.into(),
            max_len: DEFAULT_MAX_LEN,
            batch_size: 32,
            dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSettings {
    pub c: f64,
    pub mode: SvmMode,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for SvmSettings {
    fn default() -> Self {
        let d = SvmConfig::default();
        SvmSettings { c: d.c, mode: d.mode, max_iter: d.max_iter, tolerance: d.tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSettings {
    pub layer_widths: Vec<usize>,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
}

impl Default for MlpSettings {
    fn default() -> Self {
        let d = MlpConfig::default();
        MlpSettings {
            layer_widths: d.layer_widths,
            dropout_rate: d.dropout_rate,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSettings {
    pub model_id: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        let d = FinetuneConfig::default();
        FinetuneSettings { model_id: d.model_id, epochs: d.epochs, learning_rate: d.learning_rate, batch_size: d.batch_size }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSettings {
    pub kind: HeadKind,
    pub folds: usize,
    pub svm: SvmSettings,
    pub mlp: MlpSettings,
    pub finetune: FinetuneSettings,
}

impl Default for HeadSettings {
    fn default() -> Self {
        HeadSettings {
            kind: HeadKind::Svm,
            folds: DEFAULT_FOLDS,
            svm: SvmSettings::default(),
            mlp: MlpSettings::default(),
            finetune: FinetuneSettings::default(),
        }
    }
}

/// Everything a run depends on. Serialized as TOML; dotted keys
/// (`head.svm.c = 0.5`) and tables are interchangeable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    /// Two-column `inflected TAB lemma` file; the bundled English table when unset.
    pub lexicon: Option<PathBuf>,
    pub encoder: EncoderSettings,
    pub head: HeadSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            lexicon: None,
            encoder: EncoderSettings::default(),
            head: HeadSettings::default(),
        }
    }
}

/// Command-line overrides, applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub head: Option<HeadKind>,
    pub c: Option<f64>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub folds: Option<usize>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::config(format!("bad config: {e}")))
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn from_path(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = PipelineConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut config.out_dir);
        rebase(&mut config.dataset.train);
        config.dataset.test.as_mut().map(rebase);
        config.lexicon.as_mut().map(rebase);
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(dir) = &o.out_dir {
            self.out_dir = dir.clone();
        }
        if let Some(lexicon) = &o.lexicon {
            self.lexicon = Some(lexicon.clone());
        }
        if let Some(kind) = o.head {
            self.head.kind = kind;
        }
        if let Some(c) = o.c {
            self.head.svm.c = c;
        }
        if let Some(folds) = o.folds {
            self.head.folds = folds;
        }
        match self.head.kind {
            HeadKind::Finetune => {
                if let Some(e) = o.epochs {
                    self.head.finetune.epochs = e;
                }
                if let Some(lr) = o.learning_rate {
                    self.head.finetune.learning_rate = lr;
                }
            }
            _ => {
                if let Some(e) = o.epochs {
                    self.head.mlp.epochs = e;
                }
                if let Some(lr) = o.learning_rate {
                    self.head.mlp.learning_rate = lr;
                }
            }
        }
    }

    /// Hex SHA-256 of the canonical JSON form. `out_dir` is excluded and
    /// defaulted fields are spelled out, so only settings that change
    /// results move the digest.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let quoting = canonical.dataset.schema.quoting_enabled();
        canonical.dataset.schema.quoting = Some(quoting);
        let value = serde_json::to_value(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn stage_seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    pub fn svm_config(&self) -> SvmConfig {
        let s = &self.head.svm;
        SvmConfig {
            c: s.c,
            mode: s.mode,
            max_iter: s.max_iter,
            tolerance: s.tolerance,
            seed: self.stage_seed(seed_offset::HEAD),
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        let s = &self.head.mlp;
        MlpConfig {
            layer_widths: s.layer_widths.clone(),
            dropout_rate: s.dropout_rate,
            epochs: s.epochs,
            learning_rate: s.learning_rate,
            batch_size: s.batch_size,
            seed: self.stage_seed(seed_offset::HEAD),
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        let s = &self.head.finetune;
        FinetuneConfig {
            kind: self.encoder.kind,
            model_id: s.model_id.clone(),
            max_len: self.encoder.max_len,
            epochs: s.epochs,
            learning_rate: s.learning_rate,
            batch_size: s.batch_size,
            seed: self.stage_seed(seed_offset::HEAD),
        }
    }

    pub fn load_lexicon(&self) -> Result<LemmaLexicon, PipelineError> {
        match &self.lexicon {
            None => Ok(LemmaLexicon::english()),
            Some(path) => LemmaLexicon::from_path(path).map_err(|e| PipelineError::new(Stage::Prep, e.into())),
        }
    }

    pub fn build_encoder(&self) -> Result<Box<dyn EncoderBackend>, StageError> {
        Ok(match self.encoder.kind {
            BackendKind::DeterministicStub => {
                if self.encoder.dim == 0 {
                    return Err(StageError::Usage("encoder.dim must be at least 1".into()));
                }
                Box::new(StubEncoder::new(self.encoder.dim, self.stage_seed(seed_offset::ENCODER)))
            }
            BackendKind::PretrainedMultilingual => Box::new(BertEncoder::load(&self.encoder.model_id)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Prep,
    Embed,
    Train,
    Predict,
    Evaluate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Prep => "prep",
            Stage::Embed => "embed",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{count} ids do not match between gold and predictions; first {}: {}", .first.len(), .first.join(", "))]
    UnmatchedIds { count: usize, first: Vec<String> },
    #[error("{0}")]
    Data(String),
    #[error("missing input {0}; run the earlier stage first")]
    MissingInput(PathBuf),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// A stage failure, naming the stage.
#[derive(Debug, Error)]
#[error("{stage}: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

fn encoder_exit_code(e: &EncoderError) -> i32 {
    match e {
        EncoderError::BackendUnavailable(_) | EncoderError::Model(_) | EncoderError::NonFinite => EXIT_BACKEND,
        EncoderError::MaxLenTooSmall(_) | EncoderError::ZeroBatch => EXIT_USAGE,
        EncoderError::AtIndex { source, .. } => encoder_exit_code(source),
        EncoderError::SequenceTooLong { .. } | EncoderError::Cache { .. } | EncoderError::Io { .. } => EXIT_DATA,
    }
}

impl PipelineError {
    pub fn new(stage: Stage, source: StageError) -> PipelineError {
        PipelineError { stage, source }
    }

    fn config(msg: String) -> PipelineError {
        PipelineError::new(Stage::Config, StageError::Usage(msg))
    }

    /// 1 usage error, 2 data error, 3 backend error.
    pub fn exit_code(&self) -> i32 {
        match &self.source {
            StageError::Usage(_) => EXIT_USAGE,
            StageError::Encoder(e) => encoder_exit_code(e),
            StageError::Head(h) => match h {
                HeadError::InvalidConfig(_) => EXIT_USAGE,
                HeadError::NotFineTunable | HeadError::Model(_) => EXIT_BACKEND,
                HeadError::Encoder(e) => encoder_exit_code(e),
                _ => EXIT_DATA,
            },
            _ => EXIT_DATA,
        }
    }
}

fn at<E: Into<StageError>>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::new(stage, e.into())
}

fn io_err(stage: Stage, path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::new(stage, StageError::Io { path: path.to_path_buf(), source })
}

fn require(stage: Stage, path: &Path) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::new(stage, StageError::MissingInput(path.to_path_buf())))
    }
}

fn log(config: &PipelineConfig, stage: Stage, message: &str) {
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let line = format!("{ts}\t{stage}\t{message}\n");
    if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(config.out_path(LOG_FILE)) {
        let _ = f.write_all(line.as_bytes());
    }
}

fn ensure_out_dir(config: &PipelineConfig, stage: Stage) -> Result<(), PipelineError> {
    std::fs::create_dir_all(&config.out_dir).map_err(io_err(stage, &config.out_dir))
}

/// A normalized row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanRecord {
    pub id: String,
    pub text: CleanText,
    pub label: Option<Label>,
}

pub fn clean_records(records: &[RawRecord], lexicon: &LemmaLexicon) -> Vec<CleanRecord> {
    records
        .iter()
        .map(|r| CleanRecord { id: r.id.clone(), text: textprep::normalize(&r.text, lexicon), label: r.label })
        .collect()
}

pub fn write_clean(path: &Path, records: &[CleanRecord]) -> Result<(), PipelineError> {
    let raw: Vec<RawRecord> = records
        .iter()
        .map(|r| RawRecord { id: r.id.clone(), text: r.text.as_str().to_string(), label: r.label })
        .collect();
    let file = std::fs::File::create(path).map_err(io_err(Stage::Prep, path))?;
    corpus::write_dataset(std::io::BufWriter::new(file), &raw, Delimiter::Tab)
        .map_err(|e| PipelineError::new(Stage::Prep, StageError::Data(format!("writing {}: {e}", path.display()))))
}

/// Reads a file written by [`write_clean`].
pub fn read_clean(path: &Path, stage: Stage) -> Result<Vec<CleanRecord>, PipelineError> {
    require(stage, path)?;
    let records = corpus::load_dataset(path, &Schema::default(), &LabelMap::default()).map_err(at(stage))?;
    records
        .into_iter()
        .map(|r| match CleanText::new(r.text) {
            Some(text) => Ok(CleanRecord { id: r.id, text, label: r.label }),
            None => Err(PipelineError::new(
                stage,
                StageError::Data(format!("{}: row {} is not normalized text", path.display(), r.id)),
            )),
        })
        .collect()
}

fn is_blank_file(path: &Path, stage: Stage) -> Result<bool, PipelineError> {
    let bytes = std::fs::read(path).map_err(io_err(stage, path))?;
    Ok(bytes.iter().all(u8::is_ascii_whitespace))
}

/// Loads a dataset file; a blank file counts as zero rows.
fn load_raw(path: &Path, schema: &Schema, labels: &LabelMap, stage: Stage) -> Result<Vec<RawRecord>, PipelineError> {
    if path.is_file() && is_blank_file(path, stage)? {
        return Ok(Vec::new());
    }
    corpus::load_dataset(path, schema, labels).map_err(at(stage))
}

fn splits(config: &PipelineConfig) -> Vec<(&Path, &'static str, &'static str)> {
    let mut out = vec![(config.dataset.train.as_path(), TRAIN_CLEAN, TRAIN_CACHE)];
    if let Some(test) = &config.dataset.test {
        out.push((test.as_path(), TEST_CLEAN, TEST_CACHE));
    }
    out
}

/// Normalizes the train (and test, if configured) split, returning each
/// output path with the split's label counts.
pub fn cmd_prep(config: &PipelineConfig) -> Result<Vec<(PathBuf, DatasetSummary)>, PipelineError> {
    let lexicon = config.load_lexicon()?;
    ensure_out_dir(config, Stage::Prep)?;
    let mut written = Vec::new();
    for (input, clean_name, _) in splits(config) {
        let records = load_raw(input, &config.dataset.schema, &config.dataset.labels, Stage::Prep)?;
        let out = config.out_path(clean_name);
        write_clean(&out, &clean_records(&records, &lexicon))?;
        log(config, Stage::Prep, &format!("{} rows {} -> {}", records.len(), input.display(), out.display()));
        written.push((out, corpus::summarize(&records)));
    }
    Ok(written)
}

pub fn embed_records(
    records: &[CleanRecord],
    backend: &dyn EncoderBackend,
    config: &PipelineConfig,
) -> Result<EmbeddingCache, EncoderError> {
    let texts: Vec<CleanText> = records.iter().map(|r| r.text.clone()).collect();
    let embeddings = embed_corpus(&texts, backend, config.encoder.max_len, config.encoder.batch_size)?;
    let ids = records.iter().map(|r| r.id.clone()).collect();
    EmbeddingCache::new(backend.dim(), ids, embeddings)
        .map_err(|reason| EncoderError::Cache { path: PathBuf::new(), reason })
}

/// Embeds every cleaned split into an embedding cache.
pub fn cmd_embed(config: &PipelineConfig) -> Result<Vec<PathBuf>, PipelineError> {
    let backend = config.build_encoder().map_err(at(Stage::Embed))?;
    let mut written = Vec::new();
    for (_, clean_name, cache_name) in splits(config) {
        let records = read_clean(&config.out_path(clean_name), Stage::Embed)?;
        let cache = embed_records(&records, backend.as_ref(), config).map_err(at(Stage::Embed))?;
        let out = config.out_path(cache_name);
        cache.write(&out).map_err(at(Stage::Embed))?;
        log(config, Stage::Embed, &format!("{} x {} -> {}", cache.len(), cache.dim(), out.display()));
        written.push(out);
    }
    Ok(written)
}

fn labeled(records: &[CleanRecord], stage: Stage) -> Result<Vec<Label>, PipelineError> {
    records
        .iter()
        .map(|r| {
            r.label
                .ok_or_else(|| PipelineError::new(stage, StageError::Data(format!("training row {} has no label", r.id))))
        })
        .collect()
}

fn check_cache_matches(cache: &EmbeddingCache, records: &[CleanRecord], stage: Stage) -> Result<(), PipelineError> {
    if cache.len() != records.len() || cache.ids().iter().zip(records).any(|(id, r)| *id != r.id) {
        return Err(PipelineError::new(
            stage,
            StageError::Data("embedding cache rows do not match the cleaned corpus; rerun embed".into()),
        ));
    }
    Ok(())
}

/// Trains the configured head on in-memory data. `embeddings` is needed by
/// svm and mlp, the texts by finetune.
pub fn train_head(
    config: &PipelineConfig,
    records: &[CleanRecord],
    embeddings: Option<&[Embedding]>,
) -> Result<TrainedHead, PipelineError> {
    let labels = labeled(records, Stage::Train)?;
    let need_embeddings = || {
        embeddings.ok_or_else(|| PipelineError::new(Stage::Train, StageError::Usage("head needs embeddings".into())))
    };
    let head = match config.head.kind {
        HeadKind::Svm => {
            let folds = heads::make_folds(labels.len(), config.head.folds, config.stage_seed(seed_offset::FOLDS))
                .map_err(at(Stage::Train))?;
            heads::train_svm(need_embeddings()?, &labels, &config.svm_config(), &folds)
        }
        HeadKind::Mlp => {
            heads::train_mlp(need_embeddings()?, &labels, &config.mlp_config(), config.head.mlp.validation_fraction)
        }
        HeadKind::Finetune => {
            let texts: Vec<CleanText> = records.iter().map(|r| r.text.clone()).collect();
            heads::train_finetune(&texts, &labels, &config.finetune_config())
        }
    };
    head.map_err(at(Stage::Train))
}

/// Trains the configured head from the cleaned train split (and its cache
/// for svm/mlp); writes the model artifact and the train report.
pub fn cmd_train(config: &PipelineConfig) -> Result<TrainedHead, PipelineError> {
    let records = read_clean(&config.out_path(TRAIN_CLEAN), Stage::Train)?;
    let cache = match config.head.kind {
        HeadKind::Finetune => None,
        _ => {
            let path = config.out_path(TRAIN_CACHE);
            require(Stage::Train, &path)?;
            let cache = EmbeddingCache::read(&path).map_err(at(Stage::Train))?;
            check_cache_matches(&cache, &records, Stage::Train)?;
            Some(cache)
        }
    };
    let head = train_head(config, &records, cache.as_ref().map(|c| c.embeddings()))?;
    let model_path = config.out_path(MODEL_FILE);
    heads::save(&head, &model_path).map_err(at(Stage::Train))?;
    let report_path = config.out_path(TRAIN_REPORT);
    let mut report = serde_json::to_string_pretty(&head.train_report).expect("train report serializes");
    report.push('\n');
    std::fs::write(&report_path, report).map_err(io_err(Stage::Train, &report_path))?;
    log(config, Stage::Train, &format!("{} head on {} rows -> {}", head.kind(), records.len(), model_path.display()));
    Ok(head)
}

pub fn predict_records(
    head: &TrainedHead,
    records: &[CleanRecord],
    embeddings: Option<&[Embedding]>,
) -> Result<Vec<Prediction>, HeadError> {
    match (head.kind(), embeddings) {
        (HeadKind::Finetune, _) => records.iter().map(|r| heads::predict(head, HeadInput::Text(&r.text))).collect(),
        (_, Some(embs)) => embs.iter().map(|e| heads::predict(head, HeadInput::Embedding(e))).collect(),
        (kind, None) => Err(HeadError::WrongInput { head: kind, expected: "embedding" }),
    }
}

pub fn format_predictions(ids: &[String], predictions: &[Prediction]) -> String {
    let mut out = String::new();
    for (id, p) in ids.iter().zip(predictions) {
        out.push_str(&format!("{id}\t{}\t{:.6}\n", p.label, p.score));
    }
    out
}

/// Predicts labels with the trained model and writes
/// `id TAB label TAB score` rows.
///
/// With `input` unset the cleaned test split and its cache are used;
/// otherwise `input` is a raw dataset file (labels optional) that is
/// normalized and embedded in memory.
pub fn cmd_predict(config: &PipelineConfig, input: Option<&Path>, out: Option<&Path>) -> Result<PathBuf, PipelineError> {
    predict_to_file(config, input, out).map(|(path, _)| path)
}

fn predict_to_file(
    config: &PipelineConfig,
    input: Option<&Path>,
    out: Option<&Path>,
) -> Result<(PathBuf, HeadKind), PipelineError> {
    let model_path = config.out_path(MODEL_FILE);
    require(Stage::Predict, &model_path)?;
    let head = heads::load(&model_path).map_err(at(Stage::Predict))?;
    let needs_embeddings = head.kind() != HeadKind::Finetune;

    let (records, embeddings) = match input {
        None => {
            let records = read_clean(&config.out_path(TEST_CLEAN), Stage::Predict)?;
            let embeddings = if needs_embeddings {
                let path = config.out_path(TEST_CACHE);
                require(Stage::Predict, &path)?;
                let cache = EmbeddingCache::read(&path).map_err(at(Stage::Predict))?;
                check_cache_matches(&cache, &records, Stage::Predict)?;
                Some(cache.into_parts().1)
            } else {
                None
            };
            (records, embeddings)
        }
        Some(path) => {
            require(Stage::Predict, path)?;
            let schema = Schema { label_column: None, ..config.dataset.schema.clone() };
            let raw = load_raw(path, &schema, &config.dataset.labels, Stage::Predict)?;
            let records = clean_records(&raw, &config.load_lexicon()?);
            let embeddings = if needs_embeddings && !records.is_empty() {
                let backend = config.build_encoder().map_err(at(Stage::Predict))?;
                let cache = embed_records(&records, backend.as_ref(), config).map_err(at(Stage::Predict))?;
                Some(cache.into_parts().1)
            } else {
                needs_embeddings.then(Vec::new)
            };
            (records, embeddings)
        }
    };

    let predictions = predict_records(&head, &records, embeddings.as_deref()).map_err(at(Stage::Predict))?;
    let ids: Vec<String> = records.into_iter().map(|r| r.id).collect();
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| config.out_path(PREDICTIONS_FILE));
    std::fs::write(&out, format_predictions(&ids, &predictions)).map_err(io_err(Stage::Predict, &out))?;
    log(config, Stage::Predict, &format!("{} rows -> {}", ids.len(), out.display()));
    Ok((out, head.kind()))
}

/// Parses a predictions file into `(id, label)` pairs.
pub fn read_predictions(path: &Path, stage: Stage) -> Result<Vec<(String, Label)>, PipelineError> {
    require(stage, path)?;
    let text = std::fs::read_to_string(path).map_err(io_err(stage, path))?;
    let bad = |line: usize, why: &str| {
        PipelineError::new(stage, StageError::Data(format!("{}:{}: {why}", path.display(), line + 1)))
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut cols = l.split('\t');
            let id = cols.next().unwrap_or_default();
            let label = cols.next().ok_or_else(|| bad(i, "expected id TAB label TAB score"))?;
            let label = label.parse::<Label>().map_err(|_| bad(i, &format!("unknown label `{label}`")))?;
            Ok((id.to_string(), label))
        })
        .collect()
}

/// Pairs gold and predicted labels by id, in gold order.
pub fn join_by_id(
    gold: &[(String, Label)],
    pred: &[(String, Label)],
) -> Result<(Vec<Label>, Vec<Label>), StageError> {
    let pred_map: HashMap<&str, Label> = pred.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let gold_ids: HashSet<&str> = gold.iter().map(|(id, _)| id.as_str()).collect();
    let mut unmatched: Vec<&str> = gold.iter().map(|(id, _)| id.as_str()).filter(|id| !pred_map.contains_key(id)).collect();
    let mut seen = HashSet::new();
    unmatched.extend(pred.iter().map(|(id, _)| id.as_str()).filter(|id| !gold_ids.contains(id) && seen.insert(*id)));
    if !unmatched.is_empty() {
        return Err(StageError::UnmatchedIds {
            count: unmatched.len(),
            first: unmatched.iter().take(10).map(|s| s.to_string()).collect(),
        });
    }
    if pred_map.len() != pred.len() {
        return Err(StageError::Data("predictions contain duplicate ids".into()));
    }
    Ok(gold.iter().map(|(id, g)| (*g, pred_map[id.as_str()])).unzip())
}

/// Scores predictions against gold labels and writes the report JSON.
///
/// `gold` defaults to the configured test split. Without `pred`, the test
/// split is predicted first and the report is labeled with the trained
/// model's head kind; otherwise with `head.kind` from the config.
pub fn cmd_evaluate(
    config: &PipelineConfig,
    gold: Option<&Path>,
    pred: Option<&Path>,
    out: Option<&Path>,
) -> Result<ReportDocument, PipelineError> {
    let stage = Stage::Evaluate;
    let gold_path = match gold.or(config.dataset.test.as_deref()) {
        Some(p) => p.to_path_buf(),
        None => {
            return Err(PipelineError::new(stage, StageError::Usage("no gold file: set dataset.test or pass --gold".into())))
        }
    };
    require(stage, &gold_path)?;
    let (pred_path, head_kind) = match pred {
        Some(p) => (p.to_path_buf(), config.head.kind),
        None => predict_to_file(config, None, None)?,
    };
    let gold_records = load_raw(&gold_path, &config.dataset.schema, &config.dataset.labels, stage)?;
    let gold_pairs = gold_records
        .iter()
        .map(|r| {
            r.label.map(|l| (r.id.clone(), l)).ok_or_else(|| {
                PipelineError::new(stage, StageError::Data(format!("gold row {} has no label", r.id)))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pred_pairs = read_predictions(&pred_path, stage)?;
    let (golds, preds) = join_by_id(&gold_pairs, &pred_pairs).map_err(|e| PipelineError::new(stage, e))?;

    let matrix = eval::confusion(&golds, &preds).map_err(at(stage))?;
    let metrics = eval::weighted_metrics(&matrix).map_err(at(stage))?;
    let meta = RunMetadata {
        dataset: config.dataset.name.clone(),
        head: head_kind.to_string(),
        seed: config.seed,
        config_digest: config.digest(),
    };
    let report = eval::render_report(&metrics, &meta);
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| config.out_path(REPORT_FILE));
    std::fs::write(&out, report.to_json()).map_err(io_err(stage, &out))?;
    log(config, stage, &format!("weighted f1 {:.4} over {} rows -> {}", metrics.weighted_f1, metrics.n, out.display()));
    Ok(report)
}

/// Renders report files as a markdown table, one row per report.
pub fn cmd_report(reports: &[PathBuf]) -> Result<String, PipelineError> {
    let mut out = String::from(eval::TABLE_HEADER);
    out.push('\n');
    for path in reports {
        let text = std::fs::read_to_string(path).map_err(io_err(Stage::Report, path))?;
        let doc = ReportDocument::from_json(&text).map_err(|e| {
            PipelineError::new(Stage::Report, StageError::Data(format!("{}: {e}", path.display())))
        })?;
        out.push_str(&doc.table_row());
        out.push('\n');
    }
    Ok(out)
}

/// Runs prep, embed (unless finetuning), train and evaluate in order.
pub fn run_all(config: &PipelineConfig) -> Result<ReportDocument, PipelineError> {
    cmd_prep(config)?;
    if config.head.kind != HeadKind::Finetune {
        cmd_embed(config)?;
    }
    cmd_train(config)?;
    cmd_evaluate(config, None, None, None)
}

/// Flattens a config into sorted `dotted.key = value` lines.
pub fn dotted_keys(config: &PipelineConfig) -> BTreeMap<String, String> {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, String>) {
        match v {
            serde_json::Value::Object(map) => {
                for (k, v) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            other => {
                out.insert(prefix.to_string(), other.to_string());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", &serde_json::to_value(config).expect("config serializes"), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_and_table_forms_agree() {
        let dotted = PipelineConfig::from_toml("seed = 7\nhead.kind = \"mlp\"\nhead.svm.c = 0.5\nencoder.dim = 16\n").unwrap();
        let tables =
            PipelineConfig::from_toml("seed = 7\n[head]\nkind = \"mlp\"\n[head.svm]\nc = 0.5\n[encoder]\ndim = 16\n").unwrap();
        assert_eq!(dotted, tables);
        assert_eq!(dotted.head.kind, HeadKind::Mlp);
        assert_eq!(dotted.head.mlp, MlpSettings::default());
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let err = PipelineConfig::from_toml("head.svm.gamma = 1.0\n").unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = PipelineConfig::default();
        c.dataset.test = Some("test.tsv".into());
        c.lexicon = Some("lemmas.tsv".into());
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn digest_ignores_out_dir_and_spelled_out_defaults() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        b.dataset.schema.quoting = Some(false);
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn every_field_moves_the_digest() {
        let base = PipelineConfig::default();
        let edits: Vec<fn(&mut PipelineConfig)> = vec![
            |c| c.seed = 1,
            |c| c.dataset.name = "x".into(),
            |c| c.dataset.train = "x.tsv".into(),
            |c| c.dataset.test = Some("t.tsv".into()),
            |c| c.dataset.schema.id_column = "cid".into(),
            |c| c.dataset.schema.delimiter = Delimiter::Comma,
            |c| c.dataset.labels.offensive.push("hate".into()),
            |c| c.lexicon = Some("l.tsv".into()),
            |c| c.encoder.kind = BackendKind::PretrainedMultilingual,
            |c| c.encoder.model_id = "m".into(),
            |c| c.encoder.max_len = 64,
            |c| c.encoder.batch_size = 8,
            |c| c.encoder.dim = 32,
            |c| c.head.kind = HeadKind::Mlp,
            |c| c.head.folds = 5,
            |c| c.head.svm.c = 2.0,
            |c| c.head.svm.mode = SvmMode::Logreg,
            |c| c.head.mlp.layer_widths = vec![8],
            |c| c.head.mlp.dropout_rate = 0.1,
            |c| c.head.mlp.epochs = 3,
            |c| c.head.finetune.learning_rate = 1e-4,
            |c| c.head.finetune.model_id = "bert-base-uncased".into(),
        ];
        let mut seen = HashSet::new();
        seen.insert(base.digest());
        for edit in edits {
            let mut c = base.clone();
            edit(&mut c);
            assert!(seen.insert(c.digest()), "edit left the digest unchanged: {c:?}");
        }
    }

    #[test]
    fn overrides_route_epochs_by_head() {
        let mut c = PipelineConfig::default();
        c.apply(&Overrides { head: Some(HeadKind::Finetune), epochs: Some(1), learning_rate: Some(1e-3), ..Default::default() });
        assert_eq!(c.head.finetune.epochs, 1);
        assert_eq!(c.head.mlp.epochs, MlpSettings::default().epochs);
        c.apply(&Overrides { head: Some(HeadKind::Mlp), epochs: Some(9), c: Some(3.0), ..Default::default() });
        assert_eq!((c.head.mlp.epochs, c.head.svm.c), (9, 3.0));
    }

    #[test]
    fn join_reports_first_ten_unmatched() {
        let gold: Vec<(String, Label)> = (0..15).map(|i| (format!("g{i}"), Label::Offensive)).collect();
        let pred: Vec<(String, Label)> = (0..3).map(|i| (format!("g{i}"), Label::Offensive)).collect();
        match join_by_id(&gold, &pred).unwrap_err() {
            StageError::UnmatchedIds { count, first } => {
                assert_eq!(count, 12);
                assert_eq!(first, (3..13).map(|i| format!("g{i}")).collect::<Vec<_>>());
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn join_follows_gold_order() {
        let gold = vec![("a".to_string(), Label::Offensive), ("b".to_string(), Label::NotOffensive)];
        let pred = vec![("b".to_string(), Label::Offensive), ("a".to_string(), Label::Offensive)];
        let (g, p) = join_by_id(&gold, &pred).unwrap();
        assert_eq!(g, vec![Label::Offensive, Label::NotOffensive]);
        assert_eq!(p, vec![Label::Offensive, Label::Offensive]);
    }
}
