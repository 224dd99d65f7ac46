//! Audio ingestion: WAV decoding, DC removal, fixed-length segmentation and
//! CSV dataset manifests.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A mono waveform with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
    pub label: Option<String>,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Config("audio clip has no samples".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Cut `[start_s, end_s)` out of the clip. `end_s = None` runs to the end.
    pub fn slice_seconds(&self, start_s: f64, end_s: Option<f64>) -> Result<AudioClip> {
        let rate = self.sample_rate as f64;
        let start = ((start_s * rate).floor() as usize).min(self.samples.len());
        let end = end_s
            .map(|e| ((e * rate).floor() as usize).min(self.samples.len()))
            .unwrap_or(self.samples.len());
        if end <= start {
            return Err(Error::Config(format!(
                "{}: segment [{start_s}, {end_s:?}) s is empty",
                self.source_id
            )));
        }
        Ok(AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
            source_id: self.source_id.clone(),
            label: self.label.clone(),
        })
    }
}

/// Decode a PCM WAV file (8/16/24/32-bit integer or 32-bit float), averaging
/// channels down to mono.
pub fn load_clip(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let reader = WavReader::new(std::io::Cursor::new(bytes)).map_err(|e| match e {
        hound::Error::Unsupported | hound::Error::FormatError(_) => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
        other => Error::Audio {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    let interleaved = decode_samples(reader, spec, path)?;

    let channels = spec.channels.max(1) as usize;
    if interleaved.len() < channels {
        return Err(Error::EmptyAudio {
            path: path.to_path_buf(),
        });
    }
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();

    AudioClip::new(mono, spec.sample_rate, path.display().to_string()).map_err(|e| match e {
        Error::NonFinite(_) => Error::Audio {
            path: path.to_path_buf(),
            message: "non-finite sample".into(),
        },
        other => other,
    })
}

fn decode_samples<R: std::io::Read>(
    mut reader: WavReader<R>,
    spec: WavSpec,
    path: &Path,
) -> Result<Vec<f64>> {
    let audio_err = |e: hound::Error| Error::Audio {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64).map_err(audio_err))
            .collect(),
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale).map_err(audio_err))
                .collect()
        }
        (format, bits) => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            message: format!("{bits}-bit {format:?} samples"),
        }),
    }
}

/// Write a mono clip as 16-bit PCM or 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, float: bool) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: if float { 32 } else { 16 },
        sample_format: if float {
            SampleFormat::Float
        } else {
            SampleFormat::Int
        },
    };
    let wrap = |e: hound::Error| Error::Audio {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &clip.samples {
        if float {
            writer.write_sample(s as f32).map_err(wrap)?;
        } else {
            let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
            writer.write_sample(v).map_err(wrap)?;
        }
    }
    writer.finalize().map_err(wrap)
}

/// Subtract the mean amplitude.
pub fn remove_dc_offset(clip: &AudioClip) -> AudioClip {
    let mean = clip.samples.iter().sum::<f64>() / clip.samples.len() as f64;
    let mut out = clip.clone();
    out.samples.iter_mut().for_each(|s| *s -= mean);
    out
}

/// Split into consecutive non-overlapping segments of `seg_seconds`.
///
/// A trailing remainder shorter than half a segment is dropped; a longer one
/// is zero-padded to full length.
pub fn segment(clip: &AudioClip, seg_seconds: f64) -> Result<Vec<AudioClip>> {
    let seg_len = (seg_seconds * clip.sample_rate as f64).round() as usize;
    if !(seg_seconds > 0.0) || seg_len < 1 {
        return Err(Error::Config(format!(
            "segment length {seg_seconds} s is below one sample"
        )));
    }
    let mut out = Vec::new();
    for (i, chunk) in clip.samples.chunks(seg_len).enumerate() {
        if chunk.len() < seg_len && 2 * chunk.len() < seg_len {
            break;
        }
        let mut samples = chunk.to_vec();
        samples.resize(seg_len, 0.0);
        out.push(AudioClip {
            samples,
            sample_rate: clip.sample_rate,
            source_id: format!("{}#{i}", clip.source_id),
            label: clip.label.clone(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub start_s: Option<f64>,
    pub end_s: Option<f64>,
}

impl ManifestEntry {
    /// Load the referenced audio, cut to the entry bounds and labelled.
    pub fn load(&self) -> Result<AudioClip> {
        let clip = load_clip(&self.path)?.with_label(self.label.clone());
        match (self.start_s, self.end_s) {
            (None, None) => Ok(clip),
            (start, end) => clip.slice_seconds(start.unwrap_or(0.0), end),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Species label → number of entries, in label order.
    pub fn species_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.label.as_str()).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Debug, Deserialize)]
struct ManifestRecord {
    path: String,
    label: String,
    #[serde(default)]
    start_s: Option<String>,
    #[serde(default)]
    end_s: Option<String>,
}

/// Parse a `path,label,start_s,end_s` CSV manifest. Relative paths resolve
/// against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| Error::ManifestRow {
            path: path.to_path_buf(),
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.get(0) != Some("path") || headers.get(1) != Some("label") {
        return Err(Error::ManifestRow {
            path: path.to_path_buf(),
            row: 1,
            message: "expected header `path,label,start_s,end_s`".into(),
        });
    }

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for raw in reader.records() {
        let row_err = |row: usize, message: String| Error::ManifestRow {
            path: path.to_path_buf(),
            row,
            message,
        };
        let raw = raw.map_err(|e| {
            let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
            row_err(row, e.to_string())
        })?;
        let row = raw.position().map(|p| p.line() as usize).unwrap_or(0);
        let record: ManifestRecord = raw
            .deserialize(Some(&headers))
            .map_err(|e| row_err(row, e.to_string()))?;
        if record.path.is_empty() {
            return Err(row_err(row, "empty path".into()));
        }
        if record.label.is_empty() {
            return Err(row_err(row, "empty label".into()));
        }
        let parse_bound = |field: &Option<String>, name: &str| -> Result<Option<f64>> {
            match field.as_deref() {
                None | Some("") => Ok(None),
                Some(s) => {
                    let v: f64 = s
                        .parse()
                        .map_err(|_| row_err(row, format!("{name} `{s}` is not a number")))?;
                    if !v.is_finite() || v < 0.0 {
                        return Err(row_err(row, format!("{name} must be non-negative, got {s}")));
                    }
                    Ok(Some(v))
                }
            }
        };
        let start_s = parse_bound(&record.start_s, "start_s")?;
        let end_s = parse_bound(&record.end_s, "end_s")?;
        if let (Some(s), Some(e)) = (start_s, end_s) {
            if e <= s {
                return Err(row_err(row, format!("end_s {e} is not after start_s {s}")));
            }
        }
        let entry_path = base.join(&record.path);
        let key = (
            entry_path.clone(),
            start_s.map(f64::to_bits),
            end_s.map(f64::to_bits),
        );
        if !seen.insert(key) {
            return Err(row_err(
                row,
                format!("duplicate entry for {} with identical bounds", record.path),
            ));
        }
        entries.push(ManifestEntry {
            path: entry_path,
            label: record.label,
            start_s,
            end_s,
        });
    }

    if entries.is_empty() {
        return Err(Error::EmptyManifest {
            path: path.to_path_buf(),
        });
    }
    let dataset_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(DatasetManifest {
        dataset_id,
        entries,
    })
}
