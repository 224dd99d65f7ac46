//! Twin-network similarity model.
//!
//! Both arms run the same twin chain against one [`Parameters`] value; the
//! head maps `|embed(a) − embed(b)|` through `dense(1) → sigmoid`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container;
use crate::dataset::{generate_pairs, labels_of, stratified_split, Pair, PairMode, Sample};
use crate::dsp::{DspConfig, LogMelSpectrogram, Matrix};
use crate::error::{Error, Result};
use crate::nn::{
    backward, bce_loss, decode_chain, encode_chain, forward, init_parameters, sgd_step, shape_chain, Adam,
    LayerSpec, Parameters, Tensor,
};
use crate::seeds;

pub const MODEL_MAGIC: &[u8; 4] = b"SNNP";
pub const MODEL_VERSION: u32 = 1;

/// Anything that scores a pair of spectrograms in `[0, 1]`.
pub trait Scorer: Sync {
    fn score(&self, a: &LogMelSpectrogram, b: &LogMelSpectrogram) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ThreeConv,
    FourConv,
}

impl Variant {
    pub fn conv_count(self) -> usize {
        match self {
            Variant::ThreeConv => 3,
            Variant::FourConv => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiameseArch {
    pub variant: Variant,
    pub convs: Vec<ConvLayer>,
    pub embedding_dim: usize,
}

impl SiameseArch {
    /// Default widths: 16@7×7, 32@5×5, 64@3×3 (+128@3×3 for four convs),
    /// embedding 1024.
    pub fn new(variant: Variant) -> Self {
        let c = |filters, kernel| ConvLayer { filters, kernel };
        let convs = match variant {
            Variant::ThreeConv => vec![c(16, 7), c(32, 5), c(64, 3)],
            Variant::FourConv => vec![c(16, 7), c(32, 5), c(64, 3), c(128, 3)],
        };
        Self {
            variant,
            convs,
            embedding_dim: 1024,
        }
    }

    /// Narrow widths sized for 32×32 inputs on a CPU: 8@5, 16@3, 16@3
    /// (+16@2), embedding 64.
    pub fn compact(variant: Variant) -> Self {
        let c = |filters, kernel| ConvLayer { filters, kernel };
        let convs = match variant {
            Variant::ThreeConv => vec![c(8, 5), c(16, 3), c(16, 3)],
            Variant::FourConv => vec![c(8, 3), c(16, 3), c(16, 3), c(16, 2)],
        };
        Self {
            variant,
            convs,
            embedding_dim: 64,
        }
    }

    pub fn custom(variant: Variant, convs: Vec<ConvLayer>, embedding_dim: usize) -> Result<Self> {
        if convs.len() != variant.conv_count() {
            return Err(Error::Config(format!(
                "{variant:?} needs {} conv layers, got {}",
                variant.conv_count(),
                convs.len()
            )));
        }
        if embedding_dim == 0 || convs.iter().any(|c| c.filters == 0 || c.kernel == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(Self {
            variant,
            convs,
            embedding_dim,
        })
    }

    /// conv → ReLU → pool for every conv but the last, which is followed by
    /// ReLU → flatten → dense(embedding).
    pub fn twin_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            specs.push(LayerSpec::Conv {
                out_channels: c.filters,
                kernel_h: c.kernel,
                kernel_w: c.kernel,
            });
            specs.push(LayerSpec::Relu);
            if i + 1 < self.convs.len() {
                specs.push(LayerSpec::MaxPool);
            }
        }
        specs.push(LayerSpec::Flatten);
        specs.push(LayerSpec::Dense {
            out_units: self.embedding_dim,
        });
        specs
    }

    pub fn head_specs(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::Dense { out_units: 1 }, LayerSpec::Sigmoid]
    }

    fn from_twin_specs(specs: &[LayerSpec]) -> Result<Self> {
        let convs: Vec<ConvLayer> = specs
            .iter()
            .filter_map(|s| match *s {
                LayerSpec::Conv {
                    out_channels,
                    kernel_h,
                    ..
                } => Some(ConvLayer {
                    filters: out_channels,
                    kernel: kernel_h,
                }),
                _ => None,
            })
            .collect();
        let variant = match convs.len() {
            3 => Variant::ThreeConv,
            4 => Variant::FourConv,
            n => return Err(Error::Config(format!("twin chain has {n} conv layers"))),
        };
        let embedding_dim = match specs.last() {
            Some(LayerSpec::Dense { out_units }) => *out_units,
            _ => return Err(Error::Config("twin chain must end in a dense layer".into())),
        };
        let arch = Self::custom(variant, convs, embedding_dim)?;
        if arch.twin_specs() != specs {
            return Err(Error::Config("twin chain does not follow the conv/pool layout".into()));
        }
        Ok(arch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub minibatch: usize,
    /// Size of the balanced validation pair batch.
    pub test_batch: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    /// `None` = 10 × training-set size, capped at 5000.
    pub pairs_per_epoch: Option<usize>,
    pub seed: u64,
    pub threshold: f64,
    pub optimizer: Optimizer,
    /// Per-class share of the training set held out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 6e-5,
            max_epochs: 2000,
            minibatch: 50,
            test_batch: 300,
            patience: 50,
            pairs_per_epoch: None,
            seed: 0,
            threshold: 0.5,
            optimizer: Optimizer::Adam,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    /// 44.1 kHz nocturnal recordings: minibatch 50.
    pub fn nocturnal() -> Self {
        Self::default()
    }

    /// 32 kHz field recordings: minibatch 100.
    pub fn field() -> Self {
        Self {
            minibatch: 100,
            ..Self::default()
        }
    }

    /// Held-out-class runs: 1200 epochs.
    pub fn nonstationary() -> Self {
        Self {
            max_epochs: 1200,
            minibatch: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if self.max_epochs == 0 || self.minibatch == 0 || self.test_batch == 0 || self.patience == 0 {
            return bad("max_epochs, minibatch, test_batch and patience must be positive");
        }
        if self.pairs_per_epoch == Some(0) {
            return bad("pairs_per_epoch must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Threshold(self.threshold));
        }
        Ok(())
    }

    pub fn pairs_for(&self, train_size: usize) -> usize {
        self.pairs_per_epoch
            .unwrap_or_else(|| (10 * train_size).min(5000))
            .max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Loss, score and gradients of one labelled pair.
#[derive(Debug, Clone)]
pub struct PairGradients {
    pub loss: f64,
    pub score: f64,
    pub twin: Parameters,
    pub head: Parameters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseNetwork {
    pub arch: SiameseArch,
    input_shape: Vec<usize>,
    twin_specs: Vec<LayerSpec>,
    head_specs: Vec<LayerSpec>,
    twin: Parameters,
    head: Parameters,
    pub history: Vec<EpochRecord>,
    pub threshold: f64,
    /// Feature settings the network was trained on, when known.
    pub dsp: Option<DspConfig>,
}

fn subgradient_sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl SiameseNetwork {
    /// Network for `(channels, n_mels, frames)` inputs, initialized from `seed`.
    pub fn build(arch: SiameseArch, input_shape: [usize; 3], seed: u64) -> Result<Self> {
        let twin_specs = arch.twin_specs();
        let head_specs = arch.head_specs();
        let twin = init_parameters(&twin_specs, &input_shape, seeds::derive(seed, seeds::TRAIN, 0))?;
        let mut head = init_parameters(&head_specs, &[arch.embedding_dim], seeds::derive(seed, seeds::TRAIN, 1))?;
        for w in &mut head.layers[0].weight {
            *w = -w.abs();
        }
        Ok(Self {
            arch,
            input_shape: input_shape.to_vec(),
            twin_specs,
            head_specs,
            twin,
            head,
            history: Vec::new(),
            threshold: 0.5,
            dsp: None,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn twin_specs(&self) -> &[LayerSpec] {
        &self.twin_specs
    }

    pub fn twin_params(&self) -> &Parameters {
        &self.twin
    }

    pub fn head_params(&self) -> &Parameters {
        &self.head
    }

    /// The parameter sets the two arms read; always the same storage.
    pub fn arms(&self) -> (&Parameters, &Parameters) {
        (&self.twin, &self.twin)
    }

    /// SHA-256 over every twin and head parameter, hex encoded.
    pub fn parameter_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self.twin.iter().chain(self.head.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn input_tensor(&self, spec: &LogMelSpectrogram) -> Result<Tensor> {
        let expected = (self.input_shape[1], self.input_shape[2]);
        if self.input_shape[0] != 1 || spec.shape() != expected {
            return Err(Error::Shape {
                layer: 0,
                message: format!(
                    "spectrogram is {:?}, network expects {:?}",
                    spec.shape(),
                    self.input_shape
                ),
            });
        }
        Tensor::new(self.input_shape.clone(), spec.values.clone())
    }

    pub fn embed(&self, spec: &LogMelSpectrogram) -> Result<Vec<f64>> {
        let (out, _) = forward(&self.twin_specs, &self.twin, &self.input_tensor(spec)?)?;
        Ok(out.data)
    }

    /// Head output for two embeddings.
    pub fn score_embeddings(&self, ea: &[f64], eb: &[f64]) -> Result<f64> {
        let d: Vec<f64> = ea.iter().zip(eb).map(|(x, y)| (x - y).abs()).collect();
        let (out, _) = forward(&self.head_specs, &self.head, &Tensor::new(vec![d.len()], d)?)?;
        Ok(out.data[0])
    }

    pub fn similarity(&self, a: &LogMelSpectrogram, b: &LogMelSpectrogram) -> Result<f64> {
        self.score_embeddings(&self.embed(a)?, &self.embed(b)?)
    }

    /// BCE loss of one pair and its gradients; both arms accumulate into a
    /// single twin gradient.
    pub fn pair_gradients(&self, a: &LogMelSpectrogram, b: &LogMelSpectrogram, target: f64) -> Result<PairGradients> {
        let (ea, cache_a) = forward(&self.twin_specs, &self.twin, &self.input_tensor(a)?)?;
        let (eb, cache_b) = forward(&self.twin_specs, &self.twin, &self.input_tensor(b)?)?;
        let d: Vec<f64> = ea.data.iter().zip(&eb.data).map(|(x, y)| (x - y).abs()).collect();
        let (out, head_cache) = forward(&self.head_specs, &self.head, &Tensor::new(vec![d.len()], d)?)?;
        let score = out.data[0];
        let (loss, dloss) = bce_loss(score, target);
        let head_grads = backward(&self.head_specs, &self.head, &head_cache, &Tensor::new(vec![1], vec![dloss])?)?;

        let gd = &head_grads.input.data;
        let ga: Vec<f64> = gd
            .iter()
            .zip(ea.data.iter().zip(&eb.data))
            .map(|(g, (x, y))| g * subgradient_sign(x - y))
            .collect();
        let gb: Vec<f64> = ga.iter().map(|g| -g).collect();
        let shape = ea.shape.clone();
        let mut twin = backward(&self.twin_specs, &self.twin, &cache_a, &Tensor::new(shape.clone(), ga)?)?.params;
        twin.add_assign(&backward(&self.twin_specs, &self.twin, &cache_b, &Tensor::new(shape, gb)?)?.params);
        Ok(PairGradients {
            loss,
            score,
            twin,
            head: head_grads.params,
        })
    }

    /// Channel-mean post-ReLU map of every conv layer, first to last.
    pub fn export_activations(&self, spec: &LogMelSpectrogram) -> Result<Vec<Matrix>> {
        let (_, cache) = forward(&self.twin_specs, &self.twin, &self.input_tensor(spec)?)?;
        let mut maps = Vec::new();
        for (i, s) in self.twin_specs.iter().enumerate() {
            if let LayerSpec::Conv { .. } = s {
                let act = &cache.activations[i + 2];
                let (c, h, w) = (act.shape[0], act.shape[1], act.shape[2]);
                let mut m = Matrix::zeros(h, w);
                for ch in 0..c {
                    for (k, v) in act.data[ch * h * w..(ch + 1) * h * w].iter().enumerate() {
                        m.values[k] += v / c as f64;
                    }
                }
                maps.push(m);
            }
        }
        Ok(maps)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.push(match self.arch.variant {
            Variant::ThreeConv => 0,
            Variant::FourConv => 1,
        });
        out.extend_from_slice(&self.twin.seed.to_le_bytes());
        out.extend_from_slice(&self.head.seed.to_le_bytes());
        encode_chain(&mut out, &self.input_shape, &self.twin_specs, &self.twin);
        encode_chain(&mut out, &[self.arch.embedding_dim], &self.head_specs, &self.head);
        out
    }

    /// Decode a model; `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fmt = |m: String| Error::format(origin, m);
        if bytes.len() < 25 || &bytes[..4] != MODEL_MAGIC {
            return Err(fmt("not a model file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(fmt(format!(
                "model format version {version} is not supported (expected {MODEL_VERSION})"
            )));
        }
        let variant = match bytes[8] {
            0 => Variant::ThreeConv,
            1 => Variant::FourConv,
            v => return Err(fmt(format!("unknown variant code {v}"))),
        };
        let twin_seed = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        let head_seed = u64::from_le_bytes(bytes[17..25].try_into().unwrap());
        let wrap = |e: Error| fmt(e.to_string());
        let (twin, used) = decode_chain(&bytes[25..], twin_seed).map_err(wrap)?;
        let (head, used2) = decode_chain(&bytes[25 + used..], head_seed).map_err(wrap)?;
        if 25 + used + used2 != bytes.len() {
            return Err(fmt("trailing bytes after model data".into()));
        }
        let arch = SiameseArch::from_twin_specs(&twin.specs).map_err(wrap)?;
        if arch.variant != variant || head.specs != arch.head_specs() || head.input_shape != [arch.embedding_dim] {
            return Err(fmt("head or variant does not match the twin chain".into()));
        }
        if twin.input_shape.len() != 3 {
            return Err(fmt(format!("input shape {:?} is not (C, H, W)", twin.input_shape)));
        }
        Ok(Self {
            arch,
            input_shape: twin.input_shape,
            twin_specs: twin.specs,
            head_specs: head.specs,
            twin: twin.params,
            head: head.params,
            history: Vec::new(),
            threshold: 0.5,
            dsp: None,
        })
    }

    /// Write the binary model plus a JSON sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>, train: Option<&TrainConfig>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let sidecar = ModelSidecar {
            format_version: MODEL_VERSION,
            arch: self.arch.clone(),
            input_shape: self.input_shape.clone(),
            threshold: self.threshold,
            dsp: self.dsp.clone(),
            train: train.cloned(),
            epochs_trained: self.history.len(),
            parameter_hash: self.parameter_hash(),
        };
        let side = sidecar_path(path);
        fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))
    }

    /// Load a model; the sidecar, when present, restores threshold and
    /// feature settings.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut net = Self::from_bytes(&bytes, path)?;
        let side = sidecar_path(path);
        if side.exists() {
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let meta: ModelSidecar =
                serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
            net.threshold = meta.threshold;
            net.dsp = meta.dsp;
        }
        Ok(net)
    }
}

impl Scorer for SiameseNetwork {
    fn score(&self, a: &LogMelSpectrogram, b: &LogMelSpectrogram) -> Result<f64> {
        self.similarity(a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub format_version: u32,
    pub arch: SiameseArch,
    pub input_shape: Vec<usize>,
    pub threshold: f64,
    pub dsp: Option<DspConfig>,
    pub train: Option<TrainConfig>,
    pub epochs_trained: usize,
    pub parameter_hash: String,
}

/// `model.snnp` → `model.json`.
pub fn sidecar_path(model: &Path) -> PathBuf {
    model.with_extension("json")
}

/// Owns a frozen network and computes each distinct spectrogram's embedding
/// once.
pub struct CachedScorer {
    net: SiameseNetwork,
    cache: Mutex<HashMap<u64, Arc<Vec<f64>>>>,
}

impl CachedScorer {
    pub fn new(net: SiameseNetwork) -> Self {
        Self {
            net,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn network(&self) -> &SiameseNetwork {
        &self.net
    }

    pub fn into_network(self) -> SiameseNetwork {
        self.net
    }

    fn embedding(&self, spec: &LogMelSpectrogram) -> Result<Arc<Vec<f64>>> {
        let key = spec.content_hash();
        if let Some(e) = self.cache.lock().unwrap().get(&key) {
            return Ok(e.clone());
        }
        let e = Arc::new(self.net.embed(spec)?);
        self.cache.lock().unwrap().insert(key, e.clone());
        Ok(e)
    }
}

impl Scorer for CachedScorer {
    fn score(&self, a: &LogMelSpectrogram, b: &LogMelSpectrogram) -> Result<f64> {
        let (ea, eb) = (self.embedding(a)?, self.embedding(b)?);
        self.net.score_embeddings(&ea, &eb)
    }
}

/// Write each map as `{stem}_conv{k}.lms` and `{stem}_conv{k}.pgm`.
pub fn write_activation_maps(dir: impl AsRef<Path>, stem: &str, maps: &[Matrix], pgm: bool) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (k, m) in maps.iter().enumerate() {
        let p = dir.join(format!("{stem}_conv{}.lms", k + 1));
        container::write_matrix(&p, m, 0)?;
        written.push(p);
        if pgm {
            let p = dir.join(format!("{stem}_conv{}.pgm", k + 1));
            container::write_pgm(&p, m)?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Mean loss and accuracy (score ≥ threshold ⇔ similar) over `pairs`.
pub fn evaluate_pairs(net: &SiameseNetwork, samples: &[Sample], pairs: &[Pair], threshold: f64) -> Result<(f64, f64)> {
    let mut needed: Vec<usize> = pairs.iter().flat_map(|p| [p.a, p.b]).collect();
    needed.sort_unstable();
    needed.dedup();
    let embeddings = needed
        .par_iter()
        .map(|&i| net.embed(&samples[i].spec).map(|e| (i, e)))
        .collect::<Result<HashMap<_, _>>>()?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for p in pairs {
        let s = net.score_embeddings(&embeddings[&p.a], &embeddings[&p.b])?;
        loss += bce_loss(s, p.target()).0;
        if (s >= threshold) == p.similar {
            correct += 1;
        }
    }
    let n = pairs.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mean loss and summed gradients over a minibatch; per-pair work runs in
/// parallel, reduction is in pair order.
fn minibatch_gradients(
    net: &SiameseNetwork,
    samples: &[Sample],
    pairs: &[Pair],
) -> Result<(f64, Parameters, Parameters)> {
    let per_pair = pairs
        .par_iter()
        .map(|p| net.pair_gradients(&samples[p.a].spec, &samples[p.b].spec, p.target()))
        .collect::<Result<Vec<_>>>()?;
    let mut twin = Parameters::zeros_like(&net.twin);
    let mut head = Parameters::zeros_like(&net.head);
    let mut loss = 0.0;
    for g in &per_pair {
        twin.add_assign(&g.twin);
        head.add_assign(&g.head);
        loss += g.loss;
    }
    let scale = 1.0 / pairs.len() as f64;
    twin.scale(scale);
    head.scale(scale);
    Ok((loss * scale, twin, head))
}

/// Head weights stay non-positive, so the logit is the bias minus a weighted
/// L1 distance and never rises as any embedding component moves apart.
fn project_head(head: &mut Parameters) {
    for w in &mut head.layers[0].weight {
        *w = w.min(0.0);
    }
}

/// Train on `train_set`, holding out `validation_fraction` of each class
/// for early stopping (the whole set is used for validation when the
/// hold-out cannot form balanced pairs).
pub fn train(net: &mut SiameseNetwork, train_set: &[Sample], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let labels = labels_of(train_set);
    let (fit_idx, val_idx) = if config.validation_fraction > 0.0 {
        stratified_split(
            &labels,
            1.0 - config.validation_fraction,
            2,
            seeds::derive(config.seed, seeds::VALIDATION, 0),
        )
    } else {
        ((0..train_set.len()).collect(), Vec::new())
    };
    let pick = |idx: &[usize]| idx.iter().map(|&i| train_set[i].clone()).collect::<Vec<_>>();
    let fit_set = pick(&fit_idx);
    let val_set = pick(&val_idx);
    let usable = generate_pairs(&labels_of(&val_set), 2, PairMode::Balanced, 0).is_ok();
    if usable {
        fit(net, &fit_set, &val_set, config)
    } else {
        fit(net, train_set, train_set, config)
    }
}

/// Train on `fit_set`, early-stopping on validation loss over a fixed
/// balanced batch drawn from `val_set`; the best parameters are restored.
pub fn fit(net: &mut SiameseNetwork, fit_set: &[Sample], val_set: &[Sample], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let fit_labels = labels_of(fit_set);
    let val_pairs = generate_pairs(
        &labels_of(val_set),
        config.test_batch,
        PairMode::Balanced,
        seeds::derive(config.seed, seeds::VALIDATION, 1),
    )?;
    let n_pairs = config.pairs_for(fit_set.len());
    let mut adam = Adam::new(config.lr);
    let mut best = (f64::INFINITY, net.twin.clone(), net.head.clone(), 0usize);
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let batch = generate_pairs(
            &fit_labels,
            n_pairs,
            PairMode::Balanced,
            seeds::derive(config.seed, seeds::EPOCH_PAIRS, epoch as u64),
        )?;
        let mut loss_sum = 0.0;
        for chunk in batch.pairs.chunks(config.minibatch) {
            let (loss, twin_g, head_g) = minibatch_gradients(net, fit_set, chunk).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                },
                e => e,
            })?;
            if !loss.is_finite() || !twin_g.is_finite() || !head_g.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            match config.optimizer {
                Optimizer::Sgd => {
                    sgd_step(&mut net.twin, &twin_g, config.lr)?;
                    sgd_step(&mut net.head, &head_g, config.lr)?;
                }
                Optimizer::Adam => {
                    let mut params = joined(&net.twin, &net.head);
                    adam.step(&mut params, &joined(&twin_g, &head_g))?;
                    split_into(params, &mut net.twin, &mut net.head);
                }
            }
            project_head(&mut net.head);
        }
        let train_loss = loss_sum / batch.len() as f64;
        let (val_loss, val_acc) = evaluate_pairs(net, val_set, &val_pairs.pairs, config.threshold)
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                },
                e => e,
            })?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: train_loss,
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        });
        if val_loss < best.0 {
            best = (val_loss, net.twin.clone(), net.head.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    net.twin = best.1;
    net.head = best.2;
    net.threshold = config.threshold;
    net.history.extend_from_slice(&history);
    Ok(TrainReport {
        history,
        best_epoch: best.3,
        stopped_early,
    })
}

fn joined(a: &Parameters, b: &Parameters) -> Parameters {
    let mut layers = a.layers.clone();
    layers.extend(b.layers.iter().cloned());
    Parameters { layers, seed: a.seed }
}

fn split_into(all: Parameters, twin: &mut Parameters, head: &mut Parameters) {
    let mut layers = all.layers;
    let rest = layers.split_off(twin.layers.len());
    twin.layers = layers;
    head.layers = rest;
}

/// Shape check without building parameters.
pub fn check_input(arch: &SiameseArch, input_shape: [usize; 3]) -> Result<()> {
    shape_chain(&arch.twin_specs(), &input_shape).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::samples_from_clips;
    use crate::synth::ToneSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> SiameseArch {
        let c = |filters, kernel| ConvLayer { filters, kernel };
        SiameseArch::custom(Variant::ThreeConv, vec![c(4, 5), c(6, 3), c(8, 3)], 16).unwrap()
    }

    fn random_spec(rng: &mut ChaCha8Rng, n: usize) -> LogMelSpectrogram {
        let values = (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        LogMelSpectrogram::from_values(n, n, values, 0).unwrap()
    }

    #[test]
    fn default_three_conv_on_full_input() {
        let arch = SiameseArch::new(Variant::ThreeConv);
        let specs = arch.twin_specs();
        let shapes = shape_chain(&specs, &[1, 128, 256]).unwrap();
        assert_eq!(shapes.last().unwrap(), &vec![1024]);
        assert_eq!(specs.iter().filter(|s| matches!(s, LayerSpec::MaxPool)).count(), 2);
        assert!(matches!(specs[specs.len() - 3], LayerSpec::Relu));
    }

    #[test]
    fn four_conv_on_tiny_input_fails() {
        let arch = SiameseArch::new(Variant::FourConv);
        assert!(matches!(
            SiameseNetwork::build(arch, [1, 8, 8], 0),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn wrong_conv_count_is_rejected() {
        let c = ConvLayer { filters: 2, kernel: 3 };
        assert!(SiameseArch::custom(Variant::FourConv, vec![c; 3], 8).is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = SiameseNetwork::build(small_arch(), [1, 24, 24], 5).unwrap();
        let b = SiameseNetwork::build(small_arch(), [1, 24, 24], 5).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = SiameseNetwork::build(small_arch(), [1, 24, 24], 6).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn arms_share_storage() {
        let net = SiameseNetwork::build(small_arch(), [1, 24, 24], 0).unwrap();
        let (a, b) = net.arms();
        assert!(std::ptr::eq(a, b));
    }

    #[test]
    fn self_similarity_is_sigmoid_of_head_bias() {
        let net = SiameseNetwork::build(small_arch(), [1, 24, 24], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_spec(&mut rng, 24);
        let bias = net.head_params().layers[0].bias[0];
        let expected = 1.0 / (1.0 + (-bias).exp());
        assert!((net.similarity(&x, &x).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.5).abs() < 0.05);
    }

    #[test]
    fn similarity_is_symmetric_and_rejects_bad_shapes() {
        let net = SiameseNetwork::build(small_arch(), [1, 24, 24], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (a, b) = (random_spec(&mut rng, 24), random_spec(&mut rng, 24));
            let d = net.similarity(&a, &b).unwrap() - net.similarity(&b, &a).unwrap();
            assert!(d.abs() < 1e-12);
        }
        let wrong = random_spec(&mut rng, 20);
        assert!(matches!(net.similarity(&wrong, &wrong), Err(Error::Shape { .. })));
    }

    #[test]
    fn swapped_pair_gives_identical_loss_and_gradients() {
        let net = SiameseNetwork::build(small_arch(), [1, 24, 24], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random_spec(&mut rng, 24), random_spec(&mut rng, 24));
        for y in [0.0, 1.0] {
            let g1 = net.pair_gradients(&a, &b, y).unwrap();
            let g2 = net.pair_gradients(&b, &a, y).unwrap();
            assert!((g1.loss - g2.loss).abs() < 1e-12);
            for (x, z) in g1.twin.iter().zip(g2.twin.iter()).chain(g1.head.iter().zip(g2.head.iter())) {
                assert!((x - z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pair_gradient_matches_finite_differences_on_sampled_parameters() {
        let mut net = SiameseNetwork::build(small_arch(), [1, 20, 20], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random_spec(&mut rng, 20), random_spec(&mut rng, 20));
        let g = net.pair_gradients(&a, &b, 1.0).unwrap();
        let analytic: Vec<f64> = g.twin.iter().copied().collect();
        let n = analytic.len();
        let eps = 1e-6;
        for _ in 0..40 {
            let k = rng.gen_range(0..n);
            let orig = *net.twin.iter().nth(k).unwrap();
            *net.twin.iter_mut().nth(k).unwrap() = orig + eps;
            let lp = bce_loss(net.similarity(&a, &b).unwrap(), 1.0).0;
            *net.twin.iter_mut().nth(k).unwrap() = orig - eps;
            let lm = bce_loss(net.similarity(&a, &b).unwrap(), 1.0).0;
            *net.twin.iter_mut().nth(k).unwrap() = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            // loss is O(1), so central differences carry ~1e-10 of rounding noise
            let tol = 1e-3 * numeric.abs().max(analytic[k].abs()) + 1e-9;
            assert!((numeric - analytic[k]).abs() < tol, "param {k}: {numeric} vs {}", analytic[k]);
        }
    }

    #[test]
    fn activation_maps_shrink_layer_by_layer() {
        let net = SiameseNetwork::build(small_arch(), [1, 24, 24], 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let maps = net.export_activations(&random_spec(&mut rng, 24)).unwrap();
        assert_eq!(maps.len(), 3);
        for w in maps.windows(2) {
            assert!(w[1].rows < w[0].rows && w[1].cols < w[0].cols);
        }
    }

    #[test]
    fn zero_input_maps_follow_bias_responses() {
        // oracle: on a zero input the first conv outputs its bias, so the map
        // is the channel mean of relu(bias); later layers see constant maps
        let net = SiameseNetwork::build(small_arch(), [1, 24, 24], 6).unwrap();
        let zero = LogMelSpectrogram::from_values(24, 24, vec![0.0; 576], 0).unwrap();
        let maps = net.export_activations(&zero).unwrap();
        let b = &net.twin_params().layers[0].bias;
        let expected = b.iter().map(|v| v.max(0.0)).sum::<f64>() / b.len() as f64;
        assert!(maps[0].values.iter().all(|v| (v - expected).abs() < 1e-15));
        for m in &maps[1..] {
            let first = m.values[0];
            assert!(m.values.iter().all(|v| (v - first).abs() < 1e-12));
        }
    }

    #[test]
    fn model_roundtrip_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.snnp");
        let mut net = SiameseNetwork::build(small_arch(), [1, 24, 24], 7).unwrap();
        net.threshold = 0.6;
        net.save(&path, Some(&TrainConfig::default())).unwrap();
        let back = SiameseNetwork::load(&path).unwrap();
        assert_eq!(back.to_bytes(), net.to_bytes());
        assert_eq!(back.threshold, 0.6);
        assert!(sidecar_path(&path).exists());

        let mut bytes = net.to_bytes();
        bytes[4] = 9;
        let err = SiameseNetwork::from_bytes(&bytes, &path).unwrap_err();
        assert!(err.to_string().contains("version 9"));
        assert!(SiameseNetwork::from_bytes(&bytes[..30], &path).is_err());
    }

    fn two_tone_samples() -> Vec<Sample> {
        let set = ToneSet {
            fundamentals: vec![400.0, 1600.0],
            clips_per_class: 8,
            ..ToneSet::default()
        };
        samples_from_clips(&set.generate(11), &set.dsp_config()).unwrap()
    }

    fn tiny_arch() -> SiameseArch {
        let c = |filters, kernel| ConvLayer { filters, kernel };
        SiameseArch::custom(Variant::ThreeConv, vec![c(4, 5), c(8, 3), c(8, 3)], 16).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let samples = two_tone_samples();
        let mut net = SiameseNetwork::build(tiny_arch(), [1, 32, 32], 0).unwrap();
        let before = net.to_bytes();
        for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
            let cfg = TrainConfig {
                lr: 0.0,
                max_epochs: 3,
                pairs_per_epoch: Some(20),
                minibatch: 10,
                test_batch: 20,
                optimizer,
                ..TrainConfig::default()
            };
            train(&mut net, &samples, &cfg).unwrap();
            assert_eq!(net.to_bytes(), before);
        }
    }

    #[test]
    fn head_weights_stay_non_positive() {
        let samples = two_tone_samples();
        let mut net = SiameseNetwork::build(tiny_arch(), [1, 32, 32], 3).unwrap();
        assert!(net.head_params().layers[0].weight.iter().all(|&w| w <= 0.0));
        for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
            let cfg = TrainConfig {
                lr: 5e-2,
                max_epochs: 4,
                pairs_per_epoch: Some(40),
                minibatch: 10,
                test_batch: 20,
                optimizer,
                ..TrainConfig::default()
            };
            train(&mut net, &samples, &cfg).unwrap();
            assert!(net.head_params().layers[0].weight.iter().all(|&w| w <= 0.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ea: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut eb = ea.clone();
        let mut prev = net.score_embeddings(&ea, &eb).unwrap();
        for i in 0..16 {
            eb[i] += rng.gen_range(0.1..2.0);
            let s = net.score_embeddings(&ea, &eb).unwrap();
            assert!(s <= prev);
            prev = s;
        }
    }

    #[test]
    fn training_is_reproducible_and_best_loss_never_rises() {
        let samples = two_tone_samples();
        let cfg = TrainConfig {
            lr: 1e-3,
            max_epochs: 6,
            pairs_per_epoch: Some(40),
            minibatch: 10,
            test_batch: 40,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let mut net = SiameseNetwork::build(tiny_arch(), [1, 32, 32], 1).unwrap();
            let report = train(&mut net, &samples, &cfg).unwrap();
            (report, net.to_bytes())
        };
        let (r1, b1) = run();
        let (r2, b2) = run();
        assert_eq!(r1, r2);
        assert_eq!(b1, b2);
        let mut best = f64::INFINITY;
        let mut prev_best = f64::INFINITY;
        for rec in &r1.history {
            best = best.min(rec.val_loss);
            assert!(best <= prev_best);
            prev_best = best;
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = TrainConfig {
            minibatch: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            threshold: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Threshold(_))));
        assert_eq!(TrainConfig::default().pairs_for(100), 1000);
        assert_eq!(TrainConfig::default().pairs_for(1000), 5000);
    }
}
