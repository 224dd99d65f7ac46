//! Per-conv-layer activation maps (channel means after ReLU) for a few
//! synthetic calls, as LMS1 files and PGM images.
//!
//! cargo run --example activation_maps [out_dir]

use std::path::PathBuf;

use oneshot_birds::dataset::samples_from_clips;
use oneshot_birds::siamese::{write_activation_maps, SiameseArch, SiameseNetwork, Variant};
use oneshot_birds::synth::ToneSet;

fn main() -> oneshot_birds::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("oneshot-activations"));
    let set = ToneSet {
        clips_per_class: 1,
        ..ToneSet::default()
    };
    let samples = samples_from_clips(&set.generate(2), &set.dsp_config())?;
    let net = SiameseNetwork::build(SiameseArch::new(Variant::FourConv), [1, 32, 32], 2);
    let net = match net {
        Ok(n) => n,
        Err(e) => {
            println!("default four-conv widths do not fit 32×32 ({e}); using compact widths");
            SiameseNetwork::build(SiameseArch::compact(Variant::FourConv), [1, 32, 32], 2)?
        }
    };
    for s in &samples {
        let maps = net.export_activations(&s.spec)?;
        let shapes: Vec<_> = maps.iter().map(|m| (m.rows, m.cols)).collect();
        let files = write_activation_maps(&out, &s.label, &maps, true)?;
        println!("{}: {:?} -> {} files", s.label, shapes, files.len());
    }
    println!("wrote {}", out.display());
    Ok(())
}
