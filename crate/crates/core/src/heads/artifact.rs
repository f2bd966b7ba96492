//! Single-file model artifacts: one JSON header line, then a binary payload.
//!
//! Payloads are little-endian. svm stores `weights, bias`, a calibration
//! flag byte and, when set, the Platt slope `a`. mlp stores each hidden layer's
//! `W, gamma, beta, running_mean, running_var` followed by the output `W, b`.
//! finetune stores the length-prefixed `config.json` and `vocab.txt` texts and
//! a safetensors blob holding the tuned encoder and the classifier.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::Params;
use super::{
    FinetuneConfig, FinetuneHead, HeadError, HeadKind, HeadModel, LinearModel, MlpConfig, MlpHead, PlattScaling,
    SvmConfig, SvmHead, TrainReport, TrainedHead,
};
use crate::encoder::{BertWeights, WordPieceVocab};

pub const ARTIFACT_VERSION: u32 = 1;

const CLASSIFIER_W: &str = "classifier.weight";
const CLASSIFIER_B: &str = "classifier.bias";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub format_version: u32,
    pub kind: HeadKind,
    pub input_dim: usize,
    pub config: serde_json::Value,
    pub train_report: TrainReport,
    pub payload_len: u64,
}

fn bad(msg: impl Into<String>) -> HeadError {
    HeadError::Artifact(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HeadError> {
        if self.bytes.len() < n {
            return Err(bad("payload truncated"));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, HeadError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| bad("payload size overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u8(&mut self) -> Result<u8, HeadError> {
        Ok(self.take(1)?[0])
    }

    fn text(&mut self) -> Result<String, HeadError> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| bad("payload text is not UTF-8"))
    }

    fn array1(&mut self, n: usize) -> Result<Array1<f64>, HeadError> {
        Ok(Array1::from(self.f64s(n)?))
    }

    fn array2(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>, HeadError> {
        Array2::from_shape_vec((rows, cols), self.f64s(rows * cols)?).map_err(|e| bad(e.to_string()))
    }
}

fn put_f64s<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_text(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn svm_payload(h: &SvmHead) -> Vec<u8> {
    let mut out = Vec::new();
    put_f64s(&mut out, &h.model.weights);
    put_f64s(&mut out, [&h.model.bias]);
    match &h.calibration {
        Some(p) => {
            out.push(1);
            put_f64s(&mut out, [&p.a]);
        }
        None => out.push(0),
    }
    out
}

fn mlp_payload(h: &MlpHead) -> Vec<u8> {
    let mut out = Vec::new();
    let p = &h.params;
    for i in 0..p.weights.len() {
        put_f64s(&mut out, p.weights[i].iter());
        put_f64s(&mut out, p.gammas[i].iter());
        put_f64s(&mut out, p.betas[i].iter());
        put_f64s(&mut out, h.running_mean[i].iter());
        put_f64s(&mut out, h.running_var[i].iter());
    }
    put_f64s(&mut out, p.out_w.iter());
    put_f64s(&mut out, p.out_b.iter());
    out
}

fn finetune_payload(h: &FinetuneHead) -> Result<Vec<u8>, HeadError> {
    let mut out = Vec::new();
    put_text(&mut out, &h.weights.config_json);
    put_text(&mut out, &(h.weights.vocab.tokens().join("\n") + "\n"));
    let mut tensors: Vec<(&str, &Tensor)> = h.weights.tensors.iter().map(|(k, v)| (k.as_str(), v)).collect();
    tensors.push((CLASSIFIER_W, &h.classifier_w));
    tensors.push((CLASSIFIER_B, &h.classifier_b));
    tensors.sort_by(|a, b| a.0.cmp(b.0));
    let blob = safetensors::tensor::serialize(tensors, None).map_err(|e| bad(e.to_string()))?;
    out.extend_from_slice(&blob);
    Ok(out)
}

fn config_json<T: Serialize>(config: &T) -> serde_json::Value {
    serde_json::to_value(config).expect("head configs serialize")
}

/// Serializes a trained head to artifact bytes.
pub fn to_bytes(head: &TrainedHead) -> Result<Vec<u8>, HeadError> {
    let (config, payload) = match &head.model {
        HeadModel::Svm(h) => (config_json(&h.config), svm_payload(h)),
        HeadModel::Mlp(h) => (config_json(&h.config), mlp_payload(h)),
        HeadModel::Finetune(h) => (config_json(&h.config), finetune_payload(h)?),
    };
    let header = ArtifactHeader {
        format_version: ARTIFACT_VERSION,
        kind: head.kind(),
        input_dim: head.input_dim(),
        config,
        train_report: head.train_report.clone(),
        payload_len: payload.len() as u64,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn read_header(bytes: &[u8]) -> Result<(ArtifactHeader, &[u8]), HeadError> {
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line"))?;
    let header: ArtifactHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| bad(format!("bad header: {e}")))?;
    if header.format_version != ARTIFACT_VERSION {
        return Err(bad(format!("unsupported format version {}", header.format_version)));
    }
    let payload = &bytes[newline + 1..];
    if payload.len() as u64 != header.payload_len {
        return Err(bad(format!("payload is {} bytes, header says {}", payload.len(), header.payload_len)));
    }
    Ok((header, payload))
}

fn parse_config<T: for<'de> Deserialize<'de>>(value: serde_json::Value) -> Result<T, HeadError> {
    serde_json::from_value(value).map_err(|e| bad(format!("bad config: {e}")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainedHead, HeadError> {
    let (header, payload) = read_header(bytes)?;
    let mut r = Reader { bytes: payload };
    let dim = header.input_dim;
    let model = match header.kind {
        HeadKind::Svm => {
            let config: SvmConfig = parse_config(header.config)?;
            let weights = r.f64s(dim)?;
            let bias = r.f64s(1)?[0];
            let calibration = match r.u8()? {
                0 => None,
                1 => Some(PlattScaling { a: r.f64s(1)?[0] }),
                _ => return Err(bad("bad calibration flag")),
            };
            HeadModel::Svm(SvmHead { config, model: LinearModel { weights, bias }, calibration })
        }
        HeadKind::Mlp => {
            let config: MlpConfig = parse_config(header.config)?;
            let (mut weights, mut gammas, mut betas, mut means, mut vars) =
                (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let mut fan_in = dim;
            for &w in &config.layer_widths {
                weights.push(r.array2(fan_in, w)?);
                gammas.push(r.array1(w)?);
                betas.push(r.array1(w)?);
                means.push(r.array1(w)?);
                vars.push(r.array1(w)?);
                fan_in = w;
            }
            let out_w = r.array2(fan_in, 2)?;
            let out_b = r.array1(2)?;
            let params = Params { weights, gammas, betas, out_w, out_b };
            HeadModel::Mlp(MlpHead { config, input_dim: dim, params, running_mean: means, running_var: vars })
        }
        HeadKind::Finetune => {
            let config: FinetuneConfig = parse_config(header.config)?;
            let config_json = r.text()?;
            let vocab = WordPieceVocab::from_tokens(r.text()?.lines().map(str::to_string).collect())?;
            let mut raw: HashMap<String, Tensor> = candle_core::safetensors::load_buffer(r.bytes, &Device::Cpu)?;
            r.bytes = &[];
            let w = raw.remove(CLASSIFIER_W).ok_or_else(|| bad("classifier weight missing"))?;
            let b = raw.remove(CLASSIFIER_B).ok_or_else(|| bad("classifier bias missing"))?;
            let weights = BertWeights::from_parts(config_json, vocab, raw)?;
            HeadModel::Finetune(FinetuneHead::assemble(config, weights, w, b)?)
        }
    };
    if !r.bytes.is_empty() {
        return Err(bad(format!("{} trailing payload bytes", r.bytes.len())));
    }
    Ok(TrainedHead { model, train_report: header.train_report })
}

pub fn save(head: &TrainedHead, path: &Path) -> Result<(), HeadError> {
    std::fs::write(path, to_bytes(head)?).map_err(|source| HeadError::Io { path: path.to_path_buf(), source })
}

pub fn load(path: &Path) -> Result<TrainedHead, HeadError> {
    let bytes = std::fs::read(path).map_err(|source| HeadError::Io { path: path.to_path_buf(), source })?;
    from_bytes(&bytes)
}
