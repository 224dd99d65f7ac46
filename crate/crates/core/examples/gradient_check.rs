//! Central-difference check of every twin parameter against backprop.
//! Steps that move a ReLU or max-pool decision are counted separately:
//! there the difference quotient straddles a corner and disagrees with
//! the one-sided derivative backprop returns.
//!
//! cargo run --release --example gradient_check

use oneshot_birds::nn::{check_gradients, Tensor};
use oneshot_birds::siamese::{SiameseArch, SiameseNetwork, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> oneshot_birds::Result<()> {
    let net = SiameseNetwork::build(SiameseArch::compact(Variant::ThreeConv), [1, 32, 32], 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::new(vec![1, 32, 32], (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let direction: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();

    for eps in [1e-3, 1e-4, 1e-5, 1e-6, 1e-7] {
        let r = check_gradients(&net.twin_specs(), net.twin_params(), &x, &direction, eps)?;
        let kinks = r.crosses_kink.iter().filter(|&&k| k).count();
        let over = r.errors().filter(|&e| e >= 1e-4).count();
        println!(
            "eps {eps:.0e}: max rel {:.2e}, {over:5} >= 1e-4, {kinks:5} kink windows, off-kink max {:.2e}",
            r.max_rel_error,
            r.max_rel_error_smooth()
        );
    }
    Ok(())
}
