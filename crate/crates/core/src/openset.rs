//! One-shot classification against a growing class dictionary, with change
//! detection for inputs that match no known class.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::dataset::{class_index, Sample};
use crate::dsp::LogMelSpectrogram;
use crate::error::{Error, Result};
use crate::siamese::Scorer;

pub const DICT_FILE: &str = "dict.json";

#[derive(Debug, Clone, PartialEq)]
pub struct DictClass {
    pub id: String,
    pub exemplars: Vec<LogMelSpectrogram>,
    /// Input index that spawned the class; `None` for seeded classes.
    pub created_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dictionary {
    pub classes: Vec<DictClass>,
    /// Next `k` for `novel-k`.
    pub next_novel: usize,
    /// Inputs processed by monitoring so far.
    pub inputs_seen: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DictFile {
    next_novel: usize,
    inputs_seen: usize,
    classes: Vec<DictFileClass>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DictFileClass {
    id: String,
    created_at: Option<usize>,
    exemplars: Vec<String>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// One class per label (sorted), exemplars in sample order.
    pub fn from_samples(samples: &[Sample]) -> Self {
        let labels: Vec<&str> = samples.iter().map(|s| s.label.as_str()).collect();
        let classes = class_index(&labels)
            .into_iter()
            .map(|(id, idx)| DictClass {
                id,
                exemplars: idx.iter().map(|&i| samples[i].spec.clone()).collect(),
                created_at: None,
            })
            .collect();
        Self {
            classes,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_ids(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.id.as_str()).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.id == id)
    }

    pub fn add_class(&mut self, id: impl Into<String>, exemplars: Vec<LogMelSpectrogram>) -> Result<usize> {
        let id = id.into();
        if self.position(&id).is_some() {
            return Err(Error::Config(format!("class {id} already exists")));
        }
        if exemplars.is_empty() {
            return Err(Error::Config(format!("class {id} needs at least one exemplar")));
        }
        self.classes.push(DictClass {
            id,
            exemplars,
            created_at: None,
        });
        Ok(self.classes.len() - 1)
    }

    fn spawn_novel(&mut self, spec: LogMelSpectrogram, at: usize) -> usize {
        let mut id = format!("novel-{}", self.next_novel);
        while self.position(&id).is_some() {
            self.next_novel += 1;
            id = format!("novel-{}", self.next_novel);
        }
        self.next_novel += 1;
        self.classes.push(DictClass {
            id,
            exemplars: vec![spec],
            created_at: Some(at),
        });
        self.classes.len() - 1
    }

    /// Write `dict.json` and one LMS1 file per exemplar into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Ok(entries) = fs::read_dir(dir) {
            for e in entries.flatten() {
                let name = e.file_name().to_string_lossy().into_owned();
                if name.starts_with('c') && name.ends_with(".lms") && name.contains("_e") {
                    let _ = fs::remove_file(e.path());
                }
            }
        }
        let mut classes = Vec::with_capacity(self.classes.len());
        for (j, c) in self.classes.iter().enumerate() {
            let mut files = Vec::with_capacity(c.exemplars.len());
            for (i, ex) in c.exemplars.iter().enumerate() {
                let name = format!("c{j:04}_e{i:04}.lms");
                container::write_spectrogram(dir.join(&name), ex)?;
                files.push(name);
            }
            classes.push(DictFileClass {
                id: c.id.clone(),
                created_at: c.created_at,
                exemplars: files,
            });
        }
        let file = DictFile {
            next_novel: self.next_novel,
            inputs_seen: self.inputs_seen,
            classes,
        };
        let path = dir.join(DICT_FILE);
        fs::write(&path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(DICT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: DictFile = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut dict = Self {
            classes: Vec::with_capacity(file.classes.len()),
            next_novel: file.next_novel,
            inputs_seen: file.inputs_seen,
        };
        for c in file.classes {
            if c.exemplars.is_empty() || dict.position(&c.id).is_some() {
                return Err(Error::format(&path, format!("class {} is empty or duplicated", c.id)));
            }
            let exemplars = c
                .exemplars
                .iter()
                .map(|f| container::read_spectrogram(dir.join(f)))
                .collect::<Result<Vec<_>>>()?;
            dict.classes.push(DictClass {
                id: c.id,
                exemplars,
                created_at: c.created_at,
            });
        }
        Ok(dict)
    }
}

/// `scores[j][i]` = similarity of the input to exemplar `i` of class `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityVector {
    pub scores: Vec<Vec<f64>>,
}

impl SimilarityVector {
    /// Maximal entry; ties go to the lowest class, then the lowest exemplar.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (j, row) in self.scores.iter().enumerate() {
            for (i, &s) in row.iter().enumerate() {
                if best.map_or(true, |(_, _, b)| s > b) {
                    best = Some((j, i, s));
                }
            }
        }
        best.map(|(j, i, _)| (j, i))
    }

    pub fn class_max(&self) -> Vec<f64> {
        self.scores
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_id: String,
    pub class_index: usize,
    /// Best score over the dictionary at decision time (−∞ when it was empty).
    pub score: f64,
    pub class_max: Vec<f64>,
    pub is_change: bool,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEvent {
    /// Running input index at which the change fired.
    pub event_index: usize,
    pub class_id: String,
    /// Caller-supplied reference to the triggering input.
    pub source: String,
    pub class_max: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpenSetConfig {
    pub threshold: f64,
    /// Add inputs matched to a known class as further exemplars.
    pub accumulate_exemplars: bool,
}

impl Default for OpenSetConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            accumulate_exemplars: false,
        }
    }
}

impl OpenSetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold > 0.0 && self.threshold < 1.0 {
            Ok(())
        } else {
            Err(Error::Threshold(self.threshold))
        }
    }
}

pub fn score_all<S: Scorer + ?Sized>(spec: &LogMelSpectrogram, scorer: &S, dict: &Dictionary) -> Result<SimilarityVector> {
    if dict.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let scores = dict
        .classes
        .par_iter()
        .map(|c| c.exemplars.iter().map(|e| scorer.score(spec, e)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityVector { scores })
}

/// Class of the globally best exemplar, without change logic.
pub fn classify<S: Scorer + ?Sized>(spec: &LogMelSpectrogram, scorer: &S, dict: &Dictionary) -> Result<Prediction> {
    let v = score_all(spec, scorer, dict)?;
    Ok(prediction_from(&v, dict, f64::NAN))
}

fn prediction_from(v: &SimilarityVector, dict: &Dictionary, threshold: f64) -> Prediction {
    let (j, i) = v.argmax().expect("non-empty dictionary has an entry");
    Prediction {
        class_id: dict.classes[j].id.clone(),
        class_index: j,
        score: v.scores[j][i],
        class_max: v.class_max(),
        is_change: false,
        threshold,
    }
}

/// Classify, or spawn `novel-k` when every score is below the threshold.
pub fn detect_and_classify<S: Scorer + ?Sized>(
    spec: &LogMelSpectrogram,
    source: &str,
    scorer: &S,
    dict: &mut Dictionary,
    config: &OpenSetConfig,
) -> Result<(Prediction, Option<ChangeEvent>)> {
    config.validate()?;
    let at = dict.inputs_seen;
    dict.inputs_seen += 1;
    let v = if dict.is_empty() {
        SimilarityVector { scores: Vec::new() }
    } else {
        score_all(spec, scorer, dict)?
    };
    let class_max = v.class_max();
    let best = class_max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if best < config.threshold {
        let j = dict.spawn_novel(spec.clone(), at);
        let id = dict.classes[j].id.clone();
        let event = ChangeEvent {
            event_index: at,
            class_id: id.clone(),
            source: source.to_string(),
            class_max: class_max.clone(),
        };
        let pred = Prediction {
            class_id: id,
            class_index: j,
            score: best,
            class_max,
            is_change: true,
            threshold: config.threshold,
        };
        return Ok((pred, Some(event)));
    }
    let pred = prediction_from(&v, dict, config.threshold);
    if config.accumulate_exemplars {
        dict.classes[pred.class_index].exemplars.push(spec.clone());
    }
    Ok((pred, None))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonitorLog {
    pub predictions: Vec<Prediction>,
    pub events: Vec<ChangeEvent>,
}

/// Run [`detect_and_classify`] over a stream in order. `sources[k]` labels
/// input `k` in change events (its index is used when absent).
pub fn monitor<S: Scorer + ?Sized>(
    stream: &[LogMelSpectrogram],
    sources: Option<&[String]>,
    scorer: &S,
    dict: &mut Dictionary,
    config: &OpenSetConfig,
) -> Result<MonitorLog> {
    config.validate()?;
    let mut log = MonitorLog::default();
    for (k, spec) in stream.iter().enumerate() {
        let source = sources
            .and_then(|s| s.get(k).cloned())
            .unwrap_or_else(|| format!("stream[{k}]"));
        let (pred, event) = detect_and_classify(spec, &source, scorer, dict, config)?;
        log.predictions.push(pred);
        log.events.extend(event);
    }
    Ok(log)
}

/// Append one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T], append: bool) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for item in items {
        let line = serde_json::to_string(item)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
