//! One exemplar per class in the dictionary, then classify everything else.
//!
//! cargo run --release --example one_shot_classify [max_epochs]

use oneshot_birds::dataset::{samples_from_clips, Sample};
use oneshot_birds::openset::{classify, Dictionary};
use oneshot_birds::siamese::{train, CachedScorer, SiameseArch, SiameseNetwork, TrainConfig, Variant};
use oneshot_birds::synth::ToneSet;

fn main() -> oneshot_birds::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(80);
    let set = ToneSet::default();
    let samples = samples_from_clips(&set.generate(3), &set.dsp_config())?;
    let part = |keep: bool| -> Vec<Sample> {
        samples
            .iter()
            .enumerate()
            .filter(|(i, _)| (i % set.clips_per_class < 12) == keep)
            .map(|(_, s)| s.clone())
            .collect()
    };
    let (train_set, rest) = (part(true), part(false));

    let config = TrainConfig {
        max_epochs: epochs,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut net = SiameseNetwork::build(SiameseArch::compact(Variant::ThreeConv), [1, 32, 32], 3)?;
    train(&mut net, &train_set, &config)?;
    let scorer = CachedScorer::new(net);

    let mut dict = Dictionary::new();
    for k in 0..set.fundamentals.len() {
        let label = ToneSet::label(k);
        let one = train_set.iter().find(|s| s.label == label).unwrap();
        dict.add_class(label, vec![one.spec.clone()])?;
    }

    let mut correct = 0;
    for s in &rest {
        let p = classify(&s.spec, &scorer, &dict)?;
        correct += usize::from(p.class_id == s.label);
    }
    println!(
        "one exemplar per class: {correct}/{} correct ({:.1}%)",
        rest.len(),
        100.0 * correct as f64 / rest.len() as f64
    );
    let p = classify(&rest[0].spec, &scorer, &dict)?;
    println!("{} -> {} (score {:.3}, per class {:.3?})", rest[0].label, p.class_id, p.score, p.class_max);
    Ok(())
}
