//! On-disk feature cache: one LMS1 spectrogram and one LMS1 MFCC matrix per
//! manifest clip, plus `index.json`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{segment, DatasetManifest};
use crate::container;
use crate::dataset::Sample;
use crate::dsp::{log_mel, mfcc, DspConfig};
use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.json";
pub const CACHE_ENV: &str = "ONESHOT_BIRDS_CACHE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    /// SHA-256 over audio bytes, bounds, segment and feature settings.
    pub key: String,
    pub source: PathBuf,
    pub label: String,
    pub start_s: Option<f64>,
    pub end_s: Option<f64>,
    pub segment: usize,
    pub spectrogram: String,
    pub mfcc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheIndex {
    pub dsp: DspConfig,
    pub segment_seconds: Option<f64>,
    pub entries: Vec<CacheEntry>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExtractSummary {
    pub extracted: usize,
    pub skipped: usize,
    /// Source path and message of every clip that failed.
    pub failures: Vec<(PathBuf, String)>,
}

/// Cache directory from an explicit path, else `$ONESHOT_BIRDS_CACHE`, else
/// `./cache`.
pub fn resolve_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("cache"))
}

pub fn read_index(dir: &Path) -> Result<CacheIndex> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

fn clip_key(audio: &[u8], start: Option<f64>, end: Option<f64>, seg: Option<f64>, dsp: &DspConfig) -> String {
    let mut h = Sha256::new();
    h.update(audio);
    h.update(format!("{start:?}|{end:?}|{seg:?}|{}", dsp.config_id()).as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Extract every manifest clip not already cached with identical inputs.
/// Per-clip failures are collected, not fatal.
pub fn extract(
    manifest: &DatasetManifest,
    dsp: &DspConfig,
    segment_seconds: Option<f64>,
    dir: &Path,
) -> Result<ExtractSummary> {
    dsp.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let previous: HashMap<(String, usize), CacheEntry> = read_index(dir)
        .map(|idx| {
            idx.entries
                .into_iter()
                .map(|e| ((e.key.clone(), e.segment), e))
                .collect()
        })
        .unwrap_or_default();
    let mut summary = ExtractSummary::default();
    let mut entries = Vec::new();
    for (row, entry) in manifest.entries.iter().enumerate() {
        let result = (|| -> Result<()> {
            let bytes = fs::read(&entry.path).map_err(|e| Error::io(&entry.path, e))?;
            let key = clip_key(&bytes, entry.start_s, entry.end_s, segment_seconds, dsp);
            let cached: Vec<CacheEntry> = (0..)
                .map_while(|s| previous.get(&(key.clone(), s)).cloned())
                .collect();
            if !cached.is_empty()
                && cached
                    .iter()
                    .all(|c| dir.join(&c.spectrogram).exists() && dir.join(&c.mfcc).exists())
            {
                summary.skipped += 1;
                entries.extend(cached);
                return Ok(());
            }
            let clip = entry.load()?;
            let parts = match segment_seconds {
                Some(s) => segment(&clip, s)?,
                None => vec![clip],
            };
            for (s, part) in parts.iter().enumerate() {
                let stem = format!("{row:05}_{s:03}_{}", &key[..12]);
                let spec_file = format!("{stem}.lms");
                let mfcc_file = format!("{stem}.mfcc.lms");
                container::write_spectrogram(dir.join(&spec_file), &log_mel(part, dsp)?)?;
                container::write_matrix(dir.join(&mfcc_file), &mfcc(part, dsp)?.values, dsp.config_id())?;
                entries.push(CacheEntry {
                    key: key.clone(),
                    source: entry.path.clone(),
                    label: entry.label.clone(),
                    start_s: entry.start_s,
                    end_s: entry.end_s,
                    segment: s,
                    spectrogram: spec_file,
                    mfcc: mfcc_file,
                });
            }
            summary.extracted += 1;
            Ok(())
        })();
        if let Err(e) = result {
            summary.failures.push((entry.path.clone(), e.to_string()));
        }
    }
    let index = CacheIndex {
        dsp: dsp.clone(),
        segment_seconds,
        entries,
    };
    let path = dir.join(INDEX_FILE);
    fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// Every cached spectrogram with its label, in index order.
pub fn load_samples(dir: &Path) -> Result<(CacheIndex, Vec<Sample>)> {
    let index = read_index(dir)?;
    let samples = index
        .entries
        .iter()
        .map(|e| {
            Ok(Sample {
                label: e.label.clone(),
                spec: container::read_spectrogram(dir.join(&e.spectrogram))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((index, samples))
}

/// Time-averaged MFCC vector per cached clip, with its label.
pub fn load_mfcc_means(dir: &Path) -> Result<Vec<(Vec<f64>, String)>> {
    let index = read_index(dir)?;
    index
        .entries
        .iter()
        .map(|e| {
            let (m, _) = container::read_matrix(dir.join(&e.mfcc))?;
            let mean = crate::dsp::MfccMatrix { values: m }.time_mean();
            Ok((mean, e.label.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, ManifestEntry};
    use crate::synth::ToneSet;

    fn fixture(dir: &Path, n: usize) -> (DatasetManifest, DspConfig) {
        let set = ToneSet {
            clips_per_class: n,
            fundamentals: vec![400.0, 1200.0],
            ..ToneSet::default()
        };
        let mut entries = Vec::new();
        for (i, clip) in set.generate(3).iter().enumerate() {
            let p = dir.join(format!("clip{i}.wav"));
            write_wav(&p, clip, false).unwrap();
            entries.push(ManifestEntry {
                path: p,
                label: clip.label.clone().unwrap(),
                start_s: None,
                end_s: None,
            });
        }
        (
            DatasetManifest {
                dataset_id: "t".into(),
                entries,
            },
            set.dsp_config(),
        )
    }

    #[test]
    fn rerun_skips_everything() {
        let tmp = tempfile::tempdir().unwrap();
        let (manifest, dsp) = fixture(tmp.path(), 2);
        let cache = tmp.path().join("cache");
        let first = extract(&manifest, &dsp, None, &cache).unwrap();
        assert_eq!((first.extracted, first.skipped), (4, 0));
        let second = extract(&manifest, &dsp, None, &cache).unwrap();
        assert_eq!((second.extracted, second.skipped), (0, 4));
        let (_, samples) = load_samples(&cache).unwrap();
        assert_eq!(samples.len(), 4);
        assert_eq!(load_mfcc_means(&cache).unwrap()[0].0.len(), 13);
    }

    #[test]
    fn failures_are_collected_and_corruption_names_the_file() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut manifest, dsp) = fixture(tmp.path(), 1);
        manifest.entries.push(ManifestEntry {
            path: tmp.path().join("missing.wav"),
            label: "x".into(),
            start_s: None,
            end_s: None,
        });
        let cache = tmp.path().join("cache");
        let s = extract(&manifest, &dsp, None, &cache).unwrap();
        assert_eq!(s.extracted, 2);
        assert_eq!(s.failures.len(), 1);

        let idx = read_index(&cache).unwrap();
        let victim = cache.join(&idx.entries[0].spectrogram);
        fs::write(&victim, b"LMS1garbage").unwrap();
        let err = load_samples(&cache).unwrap_err().to_string();
        assert!(err.contains(&idx.entries[0].spectrogram), "{err}");
    }
}
