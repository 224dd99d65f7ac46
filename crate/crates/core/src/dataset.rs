//! Labelled spectrogram collections and the pair/split samplers built on them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp::{log_mel, DspConfig, LogMelSpectrogram};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: String,
    pub spec: LogMelSpectrogram,
}

/// Extract a log-Mel spectrogram per labelled clip.
pub fn samples_from_clips(clips: &[AudioClip], config: &DspConfig) -> Result<Vec<Sample>> {
    clips
        .iter()
        .map(|c| {
            let label = c
                .label
                .clone()
                .ok_or_else(|| Error::Config(format!("{} has no label", c.source_id)))?;
            Ok(Sample {
                label,
                spec: log_mel(c, config)?,
            })
        })
        .collect()
}

/// Label → indices, labels in sorted order.
pub fn class_index<S: AsRef<str>>(labels: &[S]) -> BTreeMap<String, Vec<usize>> {
    let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        map.entry(l.as_ref().to_string()).or_default().push(i);
    }
    map
}

pub fn labels_of(samples: &[Sample]) -> Vec<&str> {
    samples.iter().map(|s| s.label.as_str()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Half similar pairs, half dissimilar pairs.
    Balanced,
    /// Two distinct samples drawn uniformly; the label follows.
    Uniform,
}

/// Indices into a sample list plus the target (1 = same class).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub similar: bool,
}

impl Pair {
    pub fn target(&self) -> f64 {
        if self.similar {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    pub pairs: Vec<Pair>,
}

impl PairBatch {
    pub fn similar_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.similar).count()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Draw `count` pairs over `labels`.
///
/// Balanced mode picks a class uniformly (among those with ≥ 2 samples) and
/// two distinct members for each similar pair, and two distinct classes
/// uniformly with one member each for each dissimilar pair. The result is
/// shuffled.
pub fn generate_pairs<S: AsRef<str>>(labels: &[S], count: usize, mode: PairMode, seed: u64) -> Result<PairBatch> {
    let classes: Vec<Vec<usize>> = class_index(labels).into_values().collect();
    if classes.len() < 2 {
        return Err(Error::Sampling(format!(
            "need at least 2 classes, found {}",
            classes.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    match mode {
        PairMode::Balanced => {
            let n_similar = count / 2;
            let multi: Vec<&Vec<usize>> = classes.iter().filter(|c| c.len() >= 2).collect();
            if n_similar > 0 && multi.is_empty() {
                return Err(Error::Sampling(
                    "similar pairs requested but no class has two samples".into(),
                ));
            }
            for _ in 0..n_similar {
                let members = multi[rng.gen_range(0..multi.len())];
                let i = rng.gen_range(0..members.len());
                let mut j = rng.gen_range(0..members.len() - 1);
                if j >= i {
                    j += 1;
                }
                pairs.push(Pair {
                    a: members[i],
                    b: members[j],
                    similar: true,
                });
            }
            for _ in n_similar..count {
                let ca = rng.gen_range(0..classes.len());
                let mut cb = rng.gen_range(0..classes.len() - 1);
                if cb >= ca {
                    cb += 1;
                }
                let a = classes[ca][rng.gen_range(0..classes[ca].len())];
                let b = classes[cb][rng.gen_range(0..classes[cb].len())];
                pairs.push(Pair {
                    a,
                    b,
                    similar: false,
                });
            }
        }
        PairMode::Uniform => {
            let n = labels.len();
            for _ in 0..count {
                let a = rng.gen_range(0..n);
                let mut b = rng.gen_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                pairs.push(Pair {
                    a,
                    b,
                    similar: labels[a].as_ref() == labels[b].as_ref(),
                });
            }
        }
    }
    pairs.shuffle(&mut rng);
    Ok(PairBatch { pairs })
}

/// Per-class random split: `round(fraction × n_c)` members of each class go
/// to the first part, clamped so that each class keeps at least `min_first`
/// there and (when it has more) at least one in the second part.
pub fn stratified_split<S: AsRef<str>>(
    labels: &[S],
    fraction: f64,
    min_first: usize,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (_, mut members) in class_index(labels) {
        members.shuffle(&mut rng);
        let n = members.len();
        let mut k = (fraction * n as f64).round() as usize;
        k = k.max(min_first.min(n));
        if n > min_first.max(1) {
            k = k.min(n - 1);
        }
        first.extend_from_slice(&members[..k.min(n)]);
        second.extend_from_slice(&members[k.min(n)..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(classes: usize, per: usize) -> Vec<String> {
        (0..classes * per).map(|i| format!("c{}", i % classes)).collect()
    }

    #[test]
    fn balanced_counts() {
        let l = labels(2, 10);
        let batch = generate_pairs(&l, 100, PairMode::Balanced, 1).unwrap();
        assert_eq!(batch.len(), 100);
        assert_eq!(batch.similar_count(), 50);
        for p in &batch.pairs {
            assert_ne!(p.a, p.b);
            assert_eq!(p.similar, l[p.a] == l[p.b]);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let l = labels(1, 10);
        assert!(matches!(
            generate_pairs(&l, 10, PairMode::Balanced, 0),
            Err(Error::Sampling(_))
        ));
        let singletons = labels(3, 1);
        assert!(generate_pairs(&singletons, 4, PairMode::Balanced, 0).is_err());
        // dissimilar-only request is satisfiable
        assert!(generate_pairs(&singletons, 1, PairMode::Balanced, 0).is_ok());
    }

    #[test]
    fn class_participation_is_uniform() {
        // chi-square goodness of fit over 10^4 pairs, 5 classes, df = 4
        let l = labels(5, 8);
        let batch = generate_pairs(&l, 10_000, PairMode::Balanced, 99).unwrap();
        let mut counts = [0f64; 5];
        for p in &batch.pairs {
            counts[p.a % 5] += 1.0;
            counts[p.b % 5] += 1.0;
        }
        let expected = 20_000.0 / 5.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // chi-square(4) critical value at alpha = 0.001
        assert!(chi2 < 18.467, "chi2 = {chi2}");
    }

    #[test]
    fn uniform_mode_labels_follow_classes() {
        let l = labels(3, 4);
        let batch = generate_pairs(&l, 200, PairMode::Uniform, 5).unwrap();
        for p in &batch.pairs {
            assert_ne!(p.a, p.b);
            assert_eq!(p.similar, l[p.a] == l[p.b]);
        }
    }

    #[test]
    fn pairs_are_reproducible() {
        let l = labels(3, 5);
        assert_eq!(
            generate_pairs(&l, 50, PairMode::Balanced, 8).unwrap(),
            generate_pairs(&l, 50, PairMode::Balanced, 8).unwrap()
        );
    }

    #[test]
    fn stratified_split_keeps_every_class() {
        let l = labels(4, 10);
        let (train, test) = stratified_split(&l, 0.1, 1, 3);
        assert_eq!(train.len() + test.len(), 40);
        assert_eq!(class_index(&train.iter().map(|&i| l[i].clone()).collect::<Vec<_>>()).len(), 4);
        assert_eq!(class_index(&test.iter().map(|&i| l[i].clone()).collect::<Vec<_>>()).len(), 4);

        let (train, test) = stratified_split(&l, 0.5, 1, 3);
        assert_eq!((train.len(), test.len()), (20, 20));
    }
}
