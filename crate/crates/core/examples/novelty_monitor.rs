//! Train on three tone classes, then stream a mix that includes a fourth.
//! The monitor spawns a novel class the first time nothing in the
//! dictionary scores above the threshold.
//!
//! cargo run --release --example novelty_monitor [max_epochs]

use oneshot_birds::dataset::samples_from_clips;
use oneshot_birds::dsp::LogMelSpectrogram;
use oneshot_birds::openset::{monitor, Dictionary, OpenSetConfig};
use oneshot_birds::siamese::{train, CachedScorer, SiameseArch, SiameseNetwork, TrainConfig, Variant};
use oneshot_birds::synth::ToneSet;

fn main() -> oneshot_birds::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(150);
    let set = ToneSet::default();
    let samples = samples_from_clips(&set.generate(5), &set.dsp_config())?;
    let novel = ToneSet::label(3);
    let known: Vec<_> = samples.iter().filter(|s| s.label != novel).cloned().collect();

    let config = TrainConfig {
        max_epochs: epochs,
        seed: 5,
        ..TrainConfig::default()
    };
    let mut net = SiameseNetwork::build(SiameseArch::compact(Variant::ThreeConv), [1, 32, 32], 5)?;
    train(&mut net, &known, &config)?;
    let scorer = CachedScorer::new(net);

    let fresh = samples_from_clips(&set.generate(6), &set.dsp_config())?;
    let stream: Vec<(String, LogMelSpectrogram)> = (0..12)
        .map(|i| &fresh[(i * 7 + i / 4) % fresh.len()])
        .map(|s| (s.label.clone(), s.spec.clone()))
        .collect();
    let (truth, specs): (Vec<String>, Vec<LogMelSpectrogram>) = stream.into_iter().unzip();

    let mut dict = Dictionary::from_samples(&known);
    let log = monitor(&specs, Some(&truth), &scorer, &mut dict, &OpenSetConfig::default())?;
    for (t, p) in truth.iter().zip(&log.predictions) {
        let flag = if p.is_change { "  <- change" } else { "" };
        println!("{t:8} -> {:10} {:.3}{flag}", p.class_id, p.score);
    }
    println!("{} events; dictionary now {:?}", log.events.len(), dict.class_ids());
    Ok(())
}
