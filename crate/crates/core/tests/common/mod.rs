#![allow(dead_code)]

pub mod checks;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use codemix::corpus::{self, Label, LabelMap, RawRecord, Schema};
use codemix::encoder::{write_random_checkpoint, BertShape, Embedding};
use codemix::heads::HeadKind;
use codemix::pipeline::PipelineConfig;
use codemix::textprep::{self, LemmaLexicon};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const OFF: Label = Label::Offensive;
pub const NOT: Label = Label::NotOffensive;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn toy_train() -> PathBuf {
    data_dir().join("toy_train.tsv")
}

pub fn toy_test() -> PathBuf {
    data_dir().join("toy_test.tsv")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn load_toy(path: &Path) -> Vec<RawRecord> {
    corpus::load_dataset(path, &Schema::default(), &LabelMap::default()).expect("toy corpus loads")
}

pub fn toy_config(out_dir: &Path, head: HeadKind, seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig { seed, out_dir: out_dir.to_path_buf(), ..Default::default() };
    c.dataset.name = "toy".into();
    c.dataset.train = toy_train();
    c.dataset.test = Some(toy_test());
    c.head.kind = head;
    c
}

/// Per-class precision, recall, F1 and support straight from the
/// definitions, plus support-weighted averages. Shares no code with the
/// crate's metrics.
#[derive(Debug, Clone, Copy)]
pub struct OracleMetrics {
    pub per_class: [(f64, f64, f64, u64); 2],
    pub weighted: (f64, f64, f64),
}

pub fn oracle_metrics(golds: &[Label], preds: &[Label]) -> OracleMetrics {
    let n = golds.len() as f64;
    let mut per_class = [(0.0, 0.0, 0.0, 0u64); 2];
    let mut weighted = (0.0, 0.0, 0.0);
    for (slot, class) in [OFF, NOT].into_iter().enumerate() {
        let mut tp = 0u64;
        let mut predicted = 0u64;
        let mut actual = 0u64;
        for (g, p) in golds.iter().zip(preds) {
            if *g == class && *p == class {
                tp += 1;
            }
            if *p == class {
                predicted += 1;
            }
            if *g == class {
                actual += 1;
            }
        }
        let p = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let r = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        per_class[slot] = (p, r, f, actual);
        let w = actual as f64 / n;
        weighted.0 += w * p;
        weighted.1 += w * r;
        weighted.2 += w * f;
    }
    OracleMetrics { per_class, weighted }
}

/// Brute-force token-count classifier: a token votes for the only class
/// whose training documents contain it; the document takes the majority.
/// Ties and vote-less documents count as failures.
pub struct TokenCountOracle {
    exclusive: HashMap<String, Label>,
}

impl TokenCountOracle {
    pub fn fit(docs: &[(Vec<String>, Label)]) -> TokenCountOracle {
        let mut seen: HashMap<String, [bool; 2]> = HashMap::new();
        for (tokens, label) in docs {
            for t in tokens {
                seen.entry(t.clone()).or_default()[label.index()] = true;
            }
        }
        let exclusive = seen
            .into_iter()
            .filter_map(|(t, [off, not])| match (off, not) {
                (true, false) => Some((t, OFF)),
                (false, true) => Some((t, NOT)),
                _ => None,
            })
            .collect();
        TokenCountOracle { exclusive }
    }

    pub fn predict(&self, tokens: &[String]) -> Option<Label> {
        let mut votes = [0usize; 2];
        for t in tokens {
            if let Some(l) = self.exclusive.get(t) {
                votes[l.index()] += 1;
            }
        }
        match votes[0].cmp(&votes[1]) {
            std::cmp::Ordering::Greater => Some(OFF),
            std::cmp::Ordering::Less => Some(NOT),
            std::cmp::Ordering::Equal => None,
        }
    }
}

pub fn toy_tokens(records: &[RawRecord]) -> Vec<(Vec<String>, Label)> {
    let lexicon = LemmaLexicon::english();
    records
        .iter()
        .map(|r| {
            let clean = textprep::normalize(&r.text, &lexicon);
            (clean.tokens().map(str::to_string).collect(), r.label.expect("toy rows are labeled"))
        })
        .collect()
}

/// Accuracy of the token-count oracle fit on `train` and applied to `eval`.
pub fn token_oracle_accuracy(train: &[RawRecord], eval: &[RawRecord]) -> f64 {
    let oracle = TokenCountOracle::fit(&toy_tokens(train));
    let docs = toy_tokens(eval);
    let hits = docs.iter().filter(|(tokens, label)| oracle.predict(tokens) == Some(*label)).count();
    hits as f64 / docs.len() as f64
}

/// Two Gaussian clusters with unit variance: OFFENSIVE centered at
/// `+separation/2` on the first axis, NOT_OFFENSIVE at `-separation/2`.
pub fn gaussian_clusters(per_class: usize, dim: usize, separation: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..2 * per_class {
        let label = if i % 2 == 0 { OFF } else { NOT };
        let sign = if label == OFF { 1.0 } else { -1.0 };
        let mut x: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        x[0] += sign * separation / 2.0;
        xs.push(x);
        ys.push(label);
    }
    (xs, ys)
}

/// Appends the reflection `-x` of every point with the opposite label.
pub fn mirrored(xs: &[Vec<f64>], ys: &[Label]) -> (Vec<Vec<f64>>, Vec<Label>) {
    let mut out_x = xs.to_vec();
    let mut out_y = ys.to_vec();
    for (x, y) in xs.iter().zip(ys) {
        out_x.push(x.iter().map(|v| -v).collect());
        out_y.push(if *y == OFF { NOT } else { OFF });
    }
    (out_x, out_y)
}

/// Brute-force linear scan: is there an axis and threshold that splits the
/// two labels perfectly?
pub fn axis_separable(xs: &[Vec<f64>], ys: &[Label]) -> bool {
    let dim = xs[0].len();
    (0..dim).any(|d| {
        let mut proj: Vec<(f64, Label)> = xs.iter().zip(ys).map(|(x, y)| (x[d], *y)).collect();
        proj.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let changes = proj.windows(2).filter(|w| w[0].1 != w[1].1).count();
        changes == 1
    })
}

pub fn to_embeddings(xs: &[Vec<f64>]) -> Vec<Embedding> {
    xs.iter().map(|x| Embedding::new(x.iter().map(|&v| v as f32).collect()).unwrap()).collect()
}

pub fn random_fixture(n: usize, dim: usize, scale: f64, seed: u64) -> Vec<Embedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Embedding::new((0..dim).map(|_| (rng.random::<f64>() * 2.0 - 1.0) as f32 * scale as f32).collect()).unwrap())
        .collect()
}

pub const TINY_SHAPE: BertShape = BertShape {
    hidden_size: 32,
    num_hidden_layers: 2,
    num_attention_heads: 2,
    intermediate_size: 64,
    max_position_embeddings: 64,
};

pub fn tiny_vocab() -> Vec<String> {
    let mut vocab: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"].iter().map(|s| s.to_string()).collect();
    for c in 'a'..='z' {
        vocab.push(c.to_string());
    }
    for c in 'a'..='z' {
        vocab.push(format!("##{c}"));
    }
    for w in ["semma", "nalla", "mass", "super", "loosu", "waste", "fraud", "padam", "movie", "da", "##da", "##ing"] {
        vocab.push(w.to_string());
    }
    vocab
}

/// Writes a small random BERT checkpoint into `dir` and returns `dir`.
pub fn tiny_checkpoint(dir: &Path, seed: u64) -> PathBuf {
    write_random_checkpoint(dir, TINY_SHAPE, &tiny_vocab(), seed).expect("checkpoint writes");
    dir.to_path_buf()
}
