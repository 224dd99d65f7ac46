//! k-nearest-neighbour baseline on time-averaged MFCCs, with the same
//! split seeds as the Siamese protocol.
//!
//! cargo run --example knn_baseline [k]

use oneshot_birds::dsp::mfcc;
use oneshot_birds::eval::{knn_baseline, KnnOptions, SplitOptions};
use oneshot_birds::synth::ToneSet;

fn main() -> oneshot_birds::Result<()> {
    let k = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    let set = ToneSet::default();
    let dsp = set.dsp_config();
    let features = set
        .generate(13)
        .iter()
        .map(|clip| Ok((mfcc(clip, &dsp)?.time_mean(), clip.label.clone().unwrap_or_default())))
        .collect::<oneshot_birds::Result<Vec<_>>>()?;

    for split in [10.0, 30.0, 50.0, 70.0] {
        let r = knn_baseline(
            &features,
            &KnnOptions {
                k,
                split: SplitOptions {
                    split_percent: split,
                    iterations: 10,
                    master_seed: 13,
                },
            },
        )?;
        println!("{k}-NN at {split:>4}% train: {:6.2} ± {:.2}", r.mean, r.std);
    }
    Ok(())
}
