use super::Parameters;
use crate::error::{Error, Result};

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// Binary cross-entropy and its derivative with respect to the (clamped)
/// prediction.
pub fn bce_loss(prediction: f64, label: f64) -> (f64, f64) {
    let p = prediction.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let loss = -(label * p.ln() + (1.0 - label) * (1.0 - p).ln());
    let grad = -label / p + (1.0 - label) / (1.0 - p);
    (loss, grad)
}

/// `w ← w − lr·g` for every parameter.
pub fn sgd_step(params: &mut Parameters, grads: &Parameters, lr: f64) -> Result<()> {
    if !params.same_layout(grads) {
        return Err(Error::Shape {
            layer: 0,
            message: "gradient layout does not match parameters".into(),
        });
    }
    for (w, g) in params.iter_mut().zip(grads.iter()) {
        *w -= lr * g;
    }
    Ok(())
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters) -> Result<()> {
        if !params.same_layout(grads) {
            return Err(Error::Shape {
                layer: 0,
                message: "gradient layout does not match parameters".into(),
            });
        }
        let n = params.count();
        if self.m.len() != n {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
            self.step = 0;
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (w, &g)) in params.iter_mut().zip(grads.iter()).enumerate() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerParams;
    use proptest::prelude::*;

    fn scalar(v: f64) -> Parameters {
        Parameters {
            layers: vec![LayerParams {
                weight_shape: vec![1, 1],
                weight: vec![v],
                bias: vec![],
            }],
            seed: 0,
        }
    }

    #[test]
    fn bce_reference_values() {
        let (l, _) = bce_loss(0.5, 1.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = bce_loss(1.0, 1.0);
        assert!(l < 1e-6);
        let (l, g) = bce_loss(0.0, 1.0);
        assert!(l.is_finite() && g.is_finite());
    }

    proptest! {
        #[test]
        fn bce_derivative_matches_finite_differences(p in 0.01f64..0.99, y in 0u8..2) {
            let y = y as f64;
            let h = 1e-6;
            let numeric = (bce_loss(p + h, y).0 - bce_loss(p - h, y).0) / (2.0 * h);
            let (_, analytic) = bce_loss(p, y);
            prop_assert!((numeric - analytic).abs() < 1e-6 * analytic.abs().max(1.0));
        }

        #[test]
        fn two_steps_equal_one_summed_step(w in -1.0f64..1.0, g1 in -1.0f64..1.0, g2 in -1.0f64..1.0) {
            let lr = 6e-5;
            let mut a = scalar(w);
            sgd_step(&mut a, &scalar(g1), lr).unwrap();
            sgd_step(&mut a, &scalar(g2), lr).unwrap();
            let mut b = scalar(w);
            sgd_step(&mut b, &scalar(g1 + g2), lr).unwrap();
            prop_assert!((a.layers[0].weight[0] - b.layers[0].weight[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = scalar(1.0);
        sgd_step(&mut p, &scalar(0.5), 6e-5).unwrap();
        assert!((p.layers[0].weight[0] - 0.99997).abs() < 1e-15);

        let mut p = scalar(0.3);
        sgd_step(&mut p, &scalar(123.0), 0.0).unwrap();
        assert_eq!(p.layers[0].weight[0], 0.3);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let mut p = scalar(1.0);
        let mut g = scalar(1.0);
        g.layers[0].weight.push(0.0);
        g.layers[0].weight_shape = vec![2, 1];
        assert!(sgd_step(&mut p, &g, 0.1).is_err());
        assert!(Adam::new(0.1).step(&mut p, &g).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = scalar(1.0);
        let mut opt = Adam::new(6e-5);
        opt.step(&mut p, &scalar(0.25)).unwrap();
        assert!((p.layers[0].weight[0] - (1.0 - 6e-5)).abs() < 1e-10);
    }
}
