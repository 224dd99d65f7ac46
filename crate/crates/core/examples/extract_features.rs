//! Synthesize a small tone corpus, write it as WAV files with a manifest,
//! and extract the feature cache.
//!
//! cargo run --example extract_features [out_dir]

use std::fs;
use std::path::PathBuf;

use oneshot_birds::audio::{load_manifest, write_wav};
use oneshot_birds::cache;
use oneshot_birds::container::write_pgm;
use oneshot_birds::dsp::Matrix;
use oneshot_birds::synth::ToneSet;

fn main() -> oneshot_birds::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("oneshot-extract"));
    fs::create_dir_all(&out).map_err(|e| oneshot_birds::Error::Config(e.to_string()))?;

    let set = ToneSet {
        clips_per_class: 4,
        ..ToneSet::default()
    };
    let mut rows = String::from("path,label,start_s,end_s\n");
    for (i, clip) in set.generate(1).iter().enumerate() {
        let name = format!("clip{i:02}.wav");
        write_wav(out.join(&name), clip, false)?;
        rows += &format!("{name},{},,\n", clip.label.as_deref().unwrap_or("?"));
    }
    let manifest_path = out.join("manifest.csv");
    fs::write(&manifest_path, rows).map_err(|e| oneshot_birds::Error::Config(e.to_string()))?;

    let manifest = load_manifest(&manifest_path)?;
    println!("species: {:?}", manifest.species_counts());
    let dir = out.join("cache");
    let summary = cache::extract(&manifest, &set.dsp_config(), None, &dir)?;
    println!("{} extracted, {} skipped", summary.extracted, summary.skipped);

    let (index, samples) = cache::load_samples(&dir)?;
    let first = &samples[0];
    println!(
        "{} spectrograms of {}×{} (config {:016x})",
        samples.len(),
        first.spec.n_mels,
        first.spec.n_frames,
        index.dsp.config_id()
    );
    let image = Matrix {
        rows: first.spec.n_mels,
        cols: first.spec.n_frames,
        values: first.spec.values.clone(),
    };
    write_pgm(out.join("first.pgm"), &image)?;

    let mfcc = cache::load_mfcc_means(&dir)?;
    println!("mfcc mean of {}: {:.2?}", mfcc[0].1, &mfcc[0].0[..4]);
    println!("wrote {}", out.display());
    Ok(())
}
