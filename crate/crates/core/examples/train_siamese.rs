//! Train a compact Siamese network on synthetic tones and save it.
//!
//! cargo run --release --example train_siamese [max_epochs]

use oneshot_birds::dataset::{labels_of, samples_from_clips, Sample};
use oneshot_birds::eval::{balanced_pair_accuracy, split_indices};
use oneshot_birds::siamese::{train, SiameseArch, SiameseNetwork, TrainConfig, Variant};
use oneshot_birds::synth::ToneSet;

fn main() -> oneshot_birds::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(80);
    let set = ToneSet::default();
    let samples = samples_from_clips(&set.generate(7), &set.dsp_config())?;
    let (tr, te) = split_indices(&labels_of(&samples), 50.0, 7)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<Sample>>();
    let (train_set, test_set) = (pick(&tr), pick(&te));

    let config = TrainConfig {
        max_epochs: epochs,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut net = SiameseNetwork::build(SiameseArch::compact(Variant::ThreeConv), [1, 32, 32], config.seed)?;
    net.dsp = Some(set.dsp_config());
    let report = train(&mut net, &train_set, &config)?;
    for r in report.history.iter().step_by(10) {
        println!(
            "epoch {:4}  train {:.4}  val {:.4}  acc {:.3}",
            r.epoch, r.train_loss, r.val_loss, r.val_acc
        );
    }
    println!("best epoch {} (stopped early: {})", report.best_epoch, report.stopped_early);
    let acc = balanced_pair_accuracy(&net, &test_set, 300, net.threshold, 1)?;
    println!("held-out pair accuracy {:.1}%", 100.0 * acc);

    let path = std::env::temp_dir().join("oneshot-train").join("model.snnp");
    std::fs::create_dir_all(path.parent().unwrap()).ok();
    net.save(&path, Some(&config))?;
    let back = SiameseNetwork::load(&path)?;
    assert_eq!(back.parameter_hash(), net.parameter_hash());
    println!("saved {}", path.display());
    Ok(())
}
