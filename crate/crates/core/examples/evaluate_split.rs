//! Repeated stratified splits with one-shot accuracy, plus the pair
//! confusion and class similarity matrices of one model.
//!
//! cargo run --release --example evaluate_split [iterations] [max_epochs]

use oneshot_birds::dataset::samples_from_clips;
use oneshot_birds::eval::{
    class_similarity_matrix, pair_confusion, split_protocol, split_protocol_inspect, OracleScorer, SiameseLearner,
    SplitOptions,
};
use oneshot_birds::siamese::{SiameseArch, TrainConfig, Variant};
use oneshot_birds::synth::ToneSet;

fn main() -> oneshot_birds::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let iterations = args.next().flatten().unwrap_or(3);
    let epochs = args.next().flatten().unwrap_or(40);
    let set = ToneSet {
        clips_per_class: 12,
        ..ToneSet::default()
    };
    let samples = samples_from_clips(&set.generate(11), &set.dsp_config())?;
    let opts = SplitOptions {
        split_percent: 50.0,
        iterations,
        master_seed: 11,
    };

    let oracle = split_protocol(&samples, &OracleScorer::from_samples(&samples), &opts)?;
    println!("oracle: {:.2} ± {:.2}", oracle.mean, oracle.std);

    let learner = SiameseLearner {
        arch: SiameseArch::compact(Variant::ThreeConv),
        input_shape: [1, 32, 32],
        train: TrainConfig {
            max_epochs: epochs,
            ..TrainConfig::default()
        },
    };
    let result = split_protocol_inspect(&samples, &learner, &opts, |i, model, test| {
        if i == 0 {
            let conf = pair_confusion(model, test, 15, 0.5, 0)?;
            println!("pair confusion (%): {:?}", conf.rows());
            let ms = class_similarity_matrix(model, test, 15, 0.5, 0)?;
            for (id, row) in ms.class_ids.iter().zip(&ms.cells) {
                let cells: Vec<String> = row.iter().map(|c| c.map_or("-".into(), |v| format!("{v:5.1}"))).collect();
                println!("{id:8} {}", cells.join(" "));
            }
        }
        Ok(())
    })?;
    println!("siamese: {:.2} ± {:.2} over {:?}", result.mean, result.std, result.per_iteration);
    Ok(())
}
