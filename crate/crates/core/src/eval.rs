//! Figures of merit and evaluation protocols.
//!
//! Every protocol derives its randomness from one master seed through
//! [`crate::seeds`], so any iteration can be replayed on its own.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{class_index, generate_pairs, labels_of, stratified_split, Pair, PairMode, Sample};
use crate::dsp::LogMelSpectrogram;
use crate::error::{Error, Result};
use crate::openset::{classify, monitor, Dictionary, OpenSetConfig};
use crate::seeds;
use crate::siamese::{train, CachedScorer, Scorer, SiameseArch, SiameseNetwork, TrainConfig};

/// Similar (1.0) iff both spectrograms carry the same label in a lookup
/// keyed by content hash.
#[derive(Debug, Clone, Default)]
pub struct OracleScorer {
    labels: HashMap<u64, String>,
}

impl OracleScorer {
    pub fn from_samples(samples: &[Sample]) -> Self {
        Self {
            labels: samples
                .iter()
                .map(|s| (s.spec.content_hash(), s.label.clone()))
                .collect(),
        }
    }

    fn label(&self, spec: &LogMelSpectrogram) -> Result<&str> {
        self.labels
            .get(&spec.content_hash())
            .map(String::as_str)
            .ok_or_else(|| Error::Config("oracle scorer queried with an unknown spectrogram".into()))
    }
}

impl Scorer for OracleScorer {
    fn score(&self, a: &LogMelSpectrogram, b: &LogMelSpectrogram) -> Result<f64> {
        Ok(if self.label(a)? == self.label(b)? { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn score(&self, _: &LogMelSpectrogram, _: &LogMelSpectrogram) -> Result<f64> {
        Ok(self.0)
    }
}

/// Something that can be fitted on a training portion and then scores pairs.
pub trait Learner: Sync {
    type Model: Scorer + Send;
    fn fit(&self, train: &[Sample], seed: u64) -> Result<Self::Model>;
}

/// Trains a fresh network per fit.
#[derive(Debug, Clone)]
pub struct SiameseLearner {
    pub arch: SiameseArch,
    pub input_shape: [usize; 3],
    pub train: TrainConfig,
}

impl Learner for SiameseLearner {
    type Model = CachedScorer;

    fn fit(&self, train_set: &[Sample], seed: u64) -> Result<CachedScorer> {
        let mut net = SiameseNetwork::build(self.arch.clone(), self.input_shape, seed)?;
        let config = TrainConfig {
            seed,
            ..self.train.clone()
        };
        train(&mut net, train_set, &config)?;
        Ok(CachedScorer::new(net))
    }
}

/// Ignores the training portion.
impl Learner for OracleScorer {
    type Model = OracleScorer;

    fn fit(&self, _: &[Sample], _: u64) -> Result<OracleScorer> {
        Ok(self.clone())
    }
}

/// Row-normalized 2×2 matrix: rows are presented similar / dissimilar,
/// columns judged similar / dissimilar, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairConfusion {
    pub s11: f64,
    pub s12: f64,
    pub s21: f64,
    pub s22: f64,
    /// Raw counts in the same layout.
    pub counts: [[usize; 2]; 2],
    pub precision: f64,
    pub recall: f64,
}

impl PairConfusion {
    pub fn from_counts(counts: [[usize; 2]; 2]) -> Self {
        let row = |r: [usize; 2]| {
            let n = (r[0] + r[1]).max(1) as f64;
            (100.0 * r[0] as f64 / n, 100.0 * r[1] as f64 / n)
        };
        let (s11, s12) = row(counts[0]);
        let (s21, s22) = row(counts[1]);
        let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
        Self {
            s11,
            s12,
            s21,
            s22,
            counts,
            precision: ratio(counts[0][0], counts[1][0]),
            recall: ratio(counts[0][0], counts[0][1]),
        }
    }

    pub fn rows(&self) -> [[f64; 2]; 2] {
        [[self.s11, self.s12], [self.s21, self.s22]]
    }
}

fn other_class_sample(rng: &mut ChaCha8Rng, labels: &[&str], label: &str) -> Option<usize> {
    let others: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != label).collect();
    others.choose(rng).copied()
}

/// `tests_per_class` similar and dissimilar pairs anchored on every class,
/// judged at `threshold`.
pub fn pair_confusion<S: Scorer + ?Sized>(
    scorer: &S,
    test_set: &[Sample],
    tests_per_class: usize,
    threshold: f64,
    seed: u64,
) -> Result<PairConfusion> {
    let labels = labels_of(test_set);
    let classes = class_index(&labels);
    if classes.len() < 2 {
        return Err(Error::Sampling("pair confusion needs at least 2 classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for (label, members) in &classes {
        if members.len() < 2 {
            return Err(Error::Sampling(format!("class {label} has fewer than 2 test samples")));
        }
        for _ in 0..tests_per_class {
            let pick: Vec<usize> = members.choose_multiple(&mut rng, 2).copied().collect();
            pairs.push(Pair {
                a: pick[0],
                b: pick[1],
                similar: true,
            });
            let a = *members.choose(&mut rng).unwrap();
            let b = other_class_sample(&mut rng, &labels, label).unwrap();
            pairs.push(Pair { a, b, similar: false });
        }
    }
    let judged = judge(scorer, test_set, &pairs, threshold)?;
    let mut counts = [[0usize; 2]; 2];
    for (p, similar) in pairs.iter().zip(judged) {
        counts[usize::from(!p.similar)][usize::from(!similar)] += 1;
    }
    Ok(PairConfusion::from_counts(counts))
}

fn judge<S: Scorer + ?Sized>(scorer: &S, samples: &[Sample], pairs: &[Pair], threshold: f64) -> Result<Vec<bool>> {
    pairs
        .par_iter()
        .map(|p| scorer.score(&samples[p.a].spec, &samples[p.b].spec).map(|s| s >= threshold))
        .collect()
}

/// Fraction of balanced pairs judged correctly at `threshold`.
pub fn balanced_pair_accuracy<S: Scorer + ?Sized>(
    scorer: &S,
    samples: &[Sample],
    count: usize,
    threshold: f64,
    seed: u64,
) -> Result<f64> {
    let batch = generate_pairs(&labels_of(samples), count, PairMode::Balanced, seed)?;
    let judged = judge(scorer, samples, &batch.pairs, threshold)?;
    let correct = batch.pairs.iter().zip(judged).filter(|(p, j)| p.similar == *j).count();
    Ok(correct as f64 / batch.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Similar,
    Dissimilar,
}

/// Per class-pair percentages; `None` marks cells that could not be sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub kind: MatrixKind,
    pub class_ids: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl SimilarityMatrix {
    /// Elementwise `100 − x`.
    pub fn complement(&self) -> Self {
        Self {
            kind: match self.kind {
                MatrixKind::Similar => MatrixKind::Dissimilar,
                MatrixKind::Dissimilar => MatrixKind::Similar,
            },
            class_ids: self.class_ids.clone(),
            cells: self
                .cells
                .iter()
                .map(|r| r.iter().map(|c| c.map(|v| 100.0 - v)).collect())
                .collect(),
        }
    }

    /// CSV with a class-id header row and column; absent cells as `-`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let mut header = vec![String::new()];
        header.extend(self.class_ids.iter().cloned());
        w.write_record(&header).map_err(|e| Error::format(path, e.to_string()))?;
        for (id, row) in self.class_ids.iter().zip(&self.cells) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|c| c.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))));
            w.write_record(&rec).map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Mˢ over every unordered class pair, `tests_per_pair` draws per cell; the
/// matching Mᵈ is [`SimilarityMatrix::complement`].
pub fn class_similarity_matrix<S: Scorer + ?Sized>(
    scorer: &S,
    test_set: &[Sample],
    tests_per_pair: usize,
    threshold: f64,
    seed: u64,
) -> Result<SimilarityMatrix> {
    let labels = labels_of(test_set);
    let classes: Vec<(String, Vec<usize>)> = class_index(&labels).into_iter().collect();
    let m = classes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs: Vec<(usize, usize, Vec<Pair>)> = Vec::new();
    for j in 0..m {
        for k in j..m {
            let (a, b) = (&classes[j].1, &classes[k].1);
            if tests_per_pair == 0 || (j == k && a.len() < 2) {
                continue;
            }
            let pairs = (0..tests_per_pair)
                .map(|_| {
                    if j == k {
                        let pick: Vec<usize> = a.choose_multiple(&mut rng, 2).copied().collect();
                        Pair {
                            a: pick[0],
                            b: pick[1],
                            similar: true,
                        }
                    } else {
                        Pair {
                            a: *a.choose(&mut rng).unwrap(),
                            b: *b.choose(&mut rng).unwrap(),
                            similar: false,
                        }
                    }
                })
                .collect();
            jobs.push((j, k, pairs));
        }
    }
    let mut cells = vec![vec![None; m]; m];
    for (j, k, pairs) in jobs {
        let judged = judge(scorer, test_set, &pairs, threshold)?;
        let pct = 100.0 * judged.iter().filter(|&&s| s).count() as f64 / pairs.len() as f64;
        cells[j][k] = Some(pct);
        cells[k][j] = Some(pct);
    }
    Ok(SimilarityMatrix {
        kind: MatrixKind::Similar,
        class_ids: classes.into_iter().map(|c| c.0).collect(),
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub protocol: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Accuracy in percent, one entry per iteration.
    pub per_iteration: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (0 for a single iteration).
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl ProtocolResult {
    fn new(protocol: &str, config: serde_json::Value, seeds: Vec<u64>, per_iteration: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_iteration);
        Self {
            protocol: protocol.into(),
            config,
            seeds,
            per_iteration,
            mean,
            std,
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    /// `iteration,seed,accuracy` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let err = |e: csv::Error| Error::format(path, e.to_string());
        w.write_record(["iteration", "seed", "accuracy"]).map_err(err)?;
        for (i, (seed, acc)) in self.seeds.iter().zip(&self.per_iteration).enumerate() {
            w.write_record([i.to_string(), seed.to_string(), format!("{acc}")])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Train/test indices for one iteration; a 100 % split tests on the
/// training data.
pub fn split_indices(labels: &[&str], split_percent: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(split_percent > 0.0 && split_percent <= 100.0) {
        return Err(Error::Protocol(format!("split {split_percent}% outside (0, 100]")));
    }
    if class_index(labels).len() < 2 {
        return Err(Error::Protocol("at least 2 classes are required".into()));
    }
    if split_percent >= 100.0 {
        let all: Vec<usize> = (0..labels.len()).collect();
        return Ok((all.clone(), all));
    }
    let (train, test) = stratified_split(labels, split_percent / 100.0, 1, seed);
    if test.is_empty() {
        return Err(Error::Protocol(format!("split {split_percent}% leaves no test data")));
    }
    Ok((train, test))
}

fn pick(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

/// Percentage of `test` classified to its own label with every `train`
/// sample as an exemplar.
pub fn one_shot_accuracy<S: Scorer + ?Sized>(scorer: &S, train: &[Sample], test: &[Sample]) -> Result<f64> {
    let dict = Dictionary::from_samples(train);
    let hits = test
        .iter()
        .map(|t| classify(&t.spec, scorer, &dict).map(|p| p.class_id == t.label))
        .collect::<Result<Vec<_>>>()?;
    Ok(100.0 * hits.iter().filter(|&&h| h).count() as f64 / test.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub split_percent: f64,
    pub iterations: usize,
    pub master_seed: u64,
}

/// Stratified random split per iteration, fit, then one-shot accuracy over
/// the test portion.
pub fn split_protocol<L: Learner>(samples: &[Sample], learner: &L, opts: &SplitOptions) -> Result<ProtocolResult> {
    split_protocol_inspect(samples, learner, opts, |_, _, _| Ok(()))
}

/// [`split_protocol`] that also hands each fitted model and its test portion
/// to `inspect`.
pub fn split_protocol_inspect<L, F>(samples: &[Sample], learner: &L, opts: &SplitOptions, inspect: F) -> Result<ProtocolResult>
where
    L: Learner,
    F: Fn(usize, &L::Model, &[Sample]) -> Result<()> + Sync,
{
    let labels = labels_of(samples);
    let seeds: Vec<u64> = (0..opts.iterations as u64)
        .map(|i| seeds::derive(opts.master_seed, seeds::SPLIT, i))
        .collect();
    for &s in &seeds {
        split_indices(&labels, opts.split_percent, s)?;
    }
    let acc = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let (tr, te) = split_indices(&labels, opts.split_percent, s)?;
            let (train_set, test_set) = (pick(samples, &tr), pick(samples, &te));
            let model = learner.fit(&train_set, seeds::derive(opts.master_seed, seeds::TRAIN, i as u64))?;
            inspect(i, &model, &test_set)?;
            one_shot_accuracy(&model, &train_set, &test_set)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtocolResult::new("split", serde_json::to_value(opts)?, seeds, acc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownMetric {
    /// Balanced similar/dissimilar pair accuracy anchored on held-out clips.
    PairAccuracy,
    /// Monitor held-out clips against a dictionary of the known classes.
    OpenSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownOptions {
    pub n_unknown: usize,
    pub iterations: usize,
    pub master_seed: u64,
    pub metric: UnknownMetric,
    /// Pairs per iteration for the pair metric.
    pub pairs: usize,
    pub threshold: f64,
}

impl Default for UnknownOptions {
    fn default() -> Self {
        Self {
            n_unknown: 1,
            iterations: 50,
            master_seed: 0,
            metric: UnknownMetric::PairAccuracy,
            pairs: 300,
            threshold: 0.5,
        }
    }
}

/// Hold out `n_unknown` random classes, fit on the rest, score on held-out
/// data.
pub fn nonstationary_protocol<L: Learner>(samples: &[Sample], learner: &L, opts: &UnknownOptions) -> Result<ProtocolResult> {
    let labels = labels_of(samples);
    let classes: Vec<String> = class_index(&labels).into_keys().collect();
    if opts.n_unknown == 0 || classes.len() < opts.n_unknown + 2 {
        return Err(Error::Protocol(format!(
            "{} unknown of {} classes leaves fewer than 2 training classes",
            opts.n_unknown,
            classes.len()
        )));
    }
    let seeds: Vec<u64> = (0..opts.iterations as u64)
        .map(|i| seeds::derive(opts.master_seed, seeds::HOLDOUT, i))
        .collect();
    let acc = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut order = classes.clone();
            order.shuffle(&mut rng);
            let unknown: Vec<&String> = order[..opts.n_unknown].iter().collect();
            let is_unknown = |l: &str| unknown.iter().any(|u| u.as_str() == l);
            let known_idx: Vec<usize> = (0..samples.len()).filter(|&k| !is_unknown(&labels[k])).collect();
            let known = pick(samples, &known_idx);
            let model = learner.fit(&known, seeds::derive(opts.master_seed, seeds::TRAIN, i as u64))?;
            let eval_seed = seeds::derive(opts.master_seed, seeds::EVAL_PAIRS, i as u64);
            match opts.metric {
                UnknownMetric::PairAccuracy => {
                    unknown_pair_accuracy(&model, samples, &is_unknown, opts.pairs, opts.threshold, eval_seed)
                }
                UnknownMetric::OpenSet => {
                    let stream_idx: Vec<usize> = {
                        let mut v: Vec<usize> = (0..samples.len()).filter(|&k| is_unknown(&labels[k])).collect();
                        v.shuffle(&mut ChaCha8Rng::seed_from_u64(eval_seed));
                        v
                    };
                    open_set_accuracy(&model, &known, samples, &stream_idx, opts.threshold)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtocolResult::new("nonstationary", serde_json::to_value(opts)?, seeds, acc))
}

/// Similar pairs within a held-out class; dissimilar pairs join a held-out
/// clip with a clip of any other class.
fn unknown_pair_accuracy<S: Scorer + ?Sized>(
    scorer: &S,
    samples: &[Sample],
    is_unknown: &dyn Fn(&str) -> bool,
    count: usize,
    threshold: f64,
    seed: u64,
) -> Result<f64> {
    let labels = labels_of(samples);
    let unknown: Vec<Vec<usize>> = class_index(&labels)
        .into_iter()
        .filter(|(l, _)| is_unknown(l))
        .map(|(_, v)| v)
        .collect();
    let multi: Vec<&Vec<usize>> = unknown.iter().filter(|v| v.len() >= 2).collect();
    if multi.is_empty() {
        return Err(Error::Sampling("no held-out class has two clips".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    for n in 0..count {
        if n % 2 == 0 {
            let members = multi[rng.gen_range(0..multi.len())];
            let pick: Vec<usize> = members.choose_multiple(&mut rng, 2).copied().collect();
            pairs.push(Pair {
                a: pick[0],
                b: pick[1],
                similar: true,
            });
        } else {
            let members = &unknown[rng.gen_range(0..unknown.len())];
            let a = *members.choose(&mut rng).unwrap();
            let b = other_class_sample(&mut rng, &labels, labels[a]).unwrap();
            pairs.push(Pair { a, b, similar: false });
        }
    }
    let judged = judge(scorer, samples, &pairs, threshold)?;
    let correct = pairs.iter().zip(judged).filter(|(p, j)| p.similar == *j).count();
    Ok(100.0 * correct as f64 / count.max(1) as f64)
}

/// Monitor `stream_idx` against the known classes. A clip counts as correct
/// when it lands in the novel class spawned by the first clip of its own
/// label (the spawning clip itself counts when it raised the change).
pub fn open_set_accuracy<S: Scorer + ?Sized>(
    scorer: &S,
    known: &[Sample],
    samples: &[Sample],
    stream_idx: &[usize],
    threshold: f64,
) -> Result<f64> {
    let mut dict = Dictionary::from_samples(known);
    let stream: Vec<LogMelSpectrogram> = stream_idx.iter().map(|&k| samples[k].spec.clone()).collect();
    let config = OpenSetConfig {
        threshold,
        accumulate_exemplars: false,
    };
    let log = monitor(&stream, None, scorer, &mut dict, &config)?;
    let mut owner: BTreeMap<String, String> = BTreeMap::new();
    let mut correct = 0usize;
    for (&k, pred) in stream_idx.iter().zip(&log.predictions) {
        let truth = &samples[k].label;
        if pred.is_change && !owner.contains_key(truth) {
            owner.insert(truth.clone(), pred.class_id.clone());
            correct += 1;
        } else if owner.get(truth) == Some(&pred.class_id) {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / stream_idx.len().max(1) as f64)
}

/// Nearest-neighbour vote over time-averaged MFCC vectors; vote ties go to
/// the label with the smallest summed distance, then the smallest label.
pub fn knn_classify(train: &[(Vec<f64>, String)], query: &[f64], k: usize) -> Result<String> {
    if train.is_empty() {
        return Err(Error::Config("k-NN needs a non-empty training set".into()));
    }
    if k == 0 || k > train.len() {
        return Err(Error::Config(format!("k = {k} with {} training points", train.len())));
    }
    let mut dist: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, (x, _))| (x.iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), i))
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for &(d, i) in &dist[..k] {
        let e = votes.entry(train[i].1.as_str()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d;
    }
    let best = votes
        .iter()
        .min_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.total_cmp(&b.1 .1)).then(a.0.cmp(b.0)))
        .unwrap();
    Ok(best.0.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnOptions {
    pub k: usize,
    pub split: SplitOptions,
}

/// Same splits as [`split_protocol`] with the same master seed.
pub fn knn_baseline(features: &[(Vec<f64>, String)], opts: &KnnOptions) -> Result<ProtocolResult> {
    let labels: Vec<&str> = features.iter().map(|f| f.1.as_str()).collect();
    let seeds: Vec<u64> = (0..opts.split.iterations as u64)
        .map(|i| seeds::derive(opts.split.master_seed, seeds::SPLIT, i))
        .collect();
    let acc = seeds
        .iter()
        .map(|&s| {
            let (tr, te) = split_indices(&labels, opts.split.split_percent, s)?;
            let train: Vec<(Vec<f64>, String)> = tr.iter().map(|&i| features[i].clone()).collect();
            let mut hits = 0usize;
            for &i in &te {
                if knn_classify(&train, &features[i].0, opts.k)? == features[i].1 {
                    hits += 1;
                }
            }
            Ok(100.0 * hits as f64 / te.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtocolResult::new("knn", serde_json::to_value(opts)?, seeds, acc))
}

/// Published reference accuracies (percent) for side-by-side reports.
pub const REFERENCE_TARGETS: &[(&str, f64)] = &[
    ("nocturnal 70% split, four conv", 97.44),
    ("nocturnal 10% split, k-NN", 89.26),
    ("field 60% split, three conv", 94.92),
    ("field 60% split, k-NN", 91.72),
    ("nocturnal held-out classes, four conv", 70.7),
    ("field held-out classes, three conv", 72.36),
];
