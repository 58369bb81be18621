use ndarray::{Array2, Zip};

use super::{Real, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for an ordered list of parameter blocks.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<Array2<T>>,
    second: Vec<Array2<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Array2<T>>) -> Self {
        let first: Vec<Array2<T>> = params
            .into_iter()
            .map(|p| Array2::zeros(p.dim()))
            .collect();
        let second = first.clone();
        Self {
            config,
            first,
            second,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Gradients are checked for finiteness
    /// before any parameter is touched.
    pub fn step(&mut self, params: &mut [&mut Array2<T>], grads: &[Array2<T>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(TensorError::InvalidArgument(format!(
                "adam expects {} blocks, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != g.dim() || p.dim() != self.first[i].dim() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    left: p.dim(),
                    right: g.dim(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFiniteGradient(i));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one = T::one();
        let correction1 = T::from_f64(1.0 - c.beta1.powi(t));
        let correction2 = T::from_f64(1.0 - c.beta2.powi(t));
        let lr = T::from_f64(c.learning_rate);
        let eps = T::from_f64(c.epsilon);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            Zip::from(&mut **p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / correction1;
                    let v_hat = *v / correction2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Array2<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&v| Real::to_f64(v).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = T::from_f64(max_norm / norm);
        grads.iter_mut().for_each(|g| g.mapv_inplace(|v| v * k));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = array![[1.0f64, -2.0], [0.5, 3.0]];
        let before = p.clone();
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        adam.step(&mut [&mut p], &[Array2::zeros((2, 2))]).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g and v_hat = g^2 after one step, so the move is
        // lr * g / (|g| + eps).
        let mut p = array![[0.0f64, 0.0]];
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        adam.step(&mut [&mut p], &[array![[0.3, -7.0]]]).unwrap();
        assert!((p[[0, 0]] + 1e-3 * 0.3 / (0.3 + 1e-8)).abs() < 1e-15);
        assert!((p[[0, 1]] - 1e-3 * 7.0 / (7.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descent_is_monotone() {
        let mut x = array![[1.0f64]];
        let mut adam = AdamState::new(AdamConfig::default(), [&x]);
        let mut prev = 1.0f64;
        for _ in 0..100 {
            let g = x.mapv(|v| 2.0 * v);
            adam.step(&mut [&mut x], &[g]).unwrap();
            assert!(x[[0, 0]].abs() < prev);
            prev = x[[0, 0]].abs();
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = array![[1.0f64]];
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        let err = adam.step(&mut [&mut p], &[array![[f64::NAN]]]).unwrap_err();
        assert_eq!(err, TensorError::NonFiniteGradient(0));
        assert_eq!(p[[0, 0]], 1.0);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![array![[3.0f64]], array![[4.0]]];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0][[0, 0]] - 0.6).abs() < 1e-12);
        assert!((g[1][[0, 0]] - 0.8).abs() < 1e-12);
    }
}
