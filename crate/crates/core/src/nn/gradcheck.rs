use rayon::prelude::*;

use super::{backward, forward, forward_pattern, LayerSpec, Parameters, Tensor};
use crate::error::{Error, Result};

/// Analytic versus central-difference gradients of `Σ direction_k · f(x)_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(layer, index)` of the worst parameter; weights come before biases.
    pub worst: Option<(usize, usize)>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Whether the ±eps window changed a ReLU sign or max-pool choice.
    pub crosses_kink: Vec<bool>,
}

impl GradCheck {
    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.analytic.iter().zip(&self.numeric).map(|(&a, &n)| relative_error(a, n))
    }

    /// Largest relative error over parameters whose window stays on one
    /// linear piece.
    pub fn max_rel_error_smooth(&self) -> f64 {
        self.errors()
            .zip(&self.crosses_kink)
            .filter(|(_, &k)| !k)
            .fold(0.0, |m, (e, _)| m.max(e))
    }
}

/// `|a - n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Check every parameter of `specs`. Perturbed passes restart at the
/// perturbed layer from the cached activation entering it.
pub fn check_gradients(
    specs: &[LayerSpec],
    params: &Parameters,
    input: &Tensor,
    direction: &[f64],
    eps: f64,
) -> Result<GradCheck> {
    let (out, cache) = forward(specs, params, input)?;
    if direction.len() != out.len() {
        return Err(Error::Shape {
            layer: specs.len(),
            message: format!("direction has {} entries, output has {}", direction.len(), out.len()),
        });
    }
    let seed = Tensor::new(out.shape.clone(), direction.to_vec())?;
    let grads = backward(specs, params, &cache, &seed)?.params;
    let objective = |t: &Tensor| t.data.iter().zip(direction).map(|(a, b)| a * b).sum::<f64>();

    let slots: Vec<(usize, usize)> = params
        .layers
        .iter()
        .enumerate()
        .flat_map(|(l, p)| (0..p.len()).map(move |j| (l, j)))
        .collect();
    let measured = slots
        .par_iter()
        .map_init(
            || params.clone(),
            |local, &(l, j)| -> Result<(f64, bool)> {
                let start = &cache.activations[l];
                let base = cache.pattern_from(specs, l);
                let mut at = |delta: f64| -> Result<(f64, bool)> {
                    let p = &mut local.layers[l];
                    let nw = p.weight.len();
                    let slot = if j < nw { &mut p.weight[j] } else { &mut p.bias[j - nw] };
                    let orig = *slot;
                    *slot = orig + delta;
                    let y = forward_pattern(specs, local, l, start);
                    let p = &mut local.layers[l];
                    if j < nw {
                        p.weight[j] = orig;
                    } else {
                        p.bias[j - nw] = orig;
                    }
                    let (y, pattern) = y?;
                    Ok((objective(&y), pattern != base))
                };
                let (hi, k_hi) = at(eps)?;
                let (lo, k_lo) = at(-eps)?;
                Ok(((hi - lo) / (2.0 * eps), k_hi || k_lo))
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let (numeric, crosses_kink): (Vec<f64>, Vec<bool>) = measured.into_iter().unzip();
    let analytic: Vec<f64> = slots
        .iter()
        .map(|&(l, j)| {
            let g = &grads.layers[l];
            if j < g.weight.len() {
                g.weight[j]
            } else {
                g.bias[j - g.weight.len()]
            }
        })
        .collect();

    let mut report = GradCheck {
        checked: slots.len(),
        max_rel_error: 0.0,
        worst: None,
        analytic,
        numeric,
        crosses_kink,
    };
    for (k, &slot) in slots.iter().enumerate() {
        let e = relative_error(report.analytic[k], report.numeric[k]);
        if report.worst.is_none() || e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst = Some(slot);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_parameters;

    #[test]
    fn dense_chain_matches_exactly_enough() {
        let specs = [LayerSpec::Dense { out_units: 4 }, LayerSpec::Sigmoid, LayerSpec::Dense { out_units: 2 }];
        let params = init_parameters(&specs, &[3], 5).unwrap();
        let x = Tensor::new(vec![3], vec![0.3, -1.2, 2.0]).unwrap();
        let r = check_gradients(&specs, &params, &x, &[1.0, -0.5], 1e-5).unwrap();
        assert_eq!(r.checked, 4 * 3 + 4 + 2 * 4 + 2);
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
    }

    #[test]
    fn kinks_are_flagged() {
        let specs = [LayerSpec::Dense { out_units: 1 }, LayerSpec::Relu];
        let mut params = init_parameters(&specs, &[1], 0).unwrap();
        params.layers[0].weight = vec![1.0];
        params.layers[0].bias = vec![-1.0];
        let x = Tensor::new(vec![1], vec![1.0]).unwrap();
        // pre-activation sits exactly on the ReLU corner
        let r = check_gradients(&specs, &params, &x, &[1.0], 1e-3).unwrap();
        assert_eq!(r.crosses_kink, vec![true, true]);
        assert_eq!(r.max_rel_error_smooth(), 0.0);
        assert!((r.numeric[0] - 0.5).abs() < 1e-9);

        params.layers[0].bias = vec![0.5];
        let r = check_gradients(&specs, &params, &x, &[1.0], 1e-3).unwrap();
        assert_eq!(r.crosses_kink, vec![false, false]);
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn wrong_direction_length_is_an_error() {
        let specs = [LayerSpec::Dense { out_units: 2 }];
        let params = init_parameters(&specs, &[3], 1).unwrap();
        let x = Tensor::new(vec![3], vec![1.0; 3]).unwrap();
        assert!(check_gradients(&specs, &params, &x, &[1.0], 1e-4).is_err());
    }

    #[test]
    fn relative_error_handles_zero() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 0.5), 0.5);
    }
}
