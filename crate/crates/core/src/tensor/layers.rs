use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{Graph, Real, Result, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply<T: Real>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Linear => x,
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Tanh => g.tanh(x),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Linear => 1,
            Activation::Sigmoid => 2,
            Activation::Tanh => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Relu,
            1 => Activation::Linear,
            2 => Activation::Sigmoid,
            3 => Activation::Tanh,
            _ => return None,
        })
    }
}

fn uniform<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Array2<T> {
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
    Array2::from_shape_simple_fn((rows, cols), || T::from_f64(dist.sample(rng)))
}

/// Fully-connected layer, `weight` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weight: Array2<T>,
    pub bias: Array2<T>,
    pub activation: Activation,
}

impl<T: Real> DenseLayer<T> {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self {
            weight: uniform(output, input, limit, rng),
            bias: Array2::zeros((1, output)),
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array2::zeros((1, output)),
            activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.weight.nrows()
    }

    pub fn params(&self) -> [&Array2<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Array2<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    /// Puts the parameters on the tape, tracked or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundDense {
        let leaf = |g: &mut Graph<T>, v: &Array2<T>| {
            if trainable {
                g.param(v.clone())
            } else {
                g.constant(v.clone())
            }
        };
        BoundDense {
            weight: leaf(g, &self.weight),
            bias: leaf(g, &self.bias),
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub weight: Var,
    pub bias: Var,
    pub activation: Activation,
}

impl BoundDense {
    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }

    /// `act(x W^T + b)` for a `rows x in` input.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let z = g.matmul_t(x, self.weight)?;
        let z = g.add_row(z, self.bias)?;
        Ok(self.activation.apply(g, z))
    }
}

/// Gated recurrent unit.
///
/// ```text
/// u  = sigmoid([x, h] Wu^T + bu)
/// r  = sigmoid([x, h] Wr^T + br)
/// c  = tanh([x, r * h] Wc^T + bc)
/// h' = u * h + (1 - u) * c
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer<T> {
    pub w_update: Array2<T>,
    pub b_update: Array2<T>,
    pub w_reset: Array2<T>,
    pub b_reset: Array2<T>,
    pub w_cand: Array2<T>,
    pub b_cand: Array2<T>,
}

impl<T: Real> GruLayer<T> {
    /// Weights uniform in `+-1/sqrt(hidden)`, zero biases.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        let cols = input + hidden;
        Self {
            w_update: uniform(hidden, cols, limit, rng),
            b_update: Array2::zeros((1, hidden)),
            w_reset: uniform(hidden, cols, limit, rng),
            b_reset: Array2::zeros((1, hidden)),
            w_cand: uniform(hidden, cols, limit, rng),
            b_cand: Array2::zeros((1, hidden)),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = Array2::zeros((hidden, input + hidden));
        let b = Array2::zeros((1, hidden));
        Self {
            w_update: w.clone(),
            b_update: b.clone(),
            w_reset: w.clone(),
            b_reset: b.clone(),
            w_cand: w,
            b_cand: b,
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.w_update.nrows()
    }

    pub fn input_width(&self) -> usize {
        self.w_update.ncols() - self.hidden_width()
    }

    pub fn params(&self) -> [&Array2<T>; 6] {
        [
            &self.w_update,
            &self.b_update,
            &self.w_reset,
            &self.b_reset,
            &self.w_cand,
            &self.b_cand,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Array2<T>; 6] {
        [
            &mut self.w_update,
            &mut self.b_update,
            &mut self.w_reset,
            &mut self.b_reset,
            &mut self.w_cand,
            &mut self.b_cand,
        ]
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundGru {
        let vars = self.params().map(|p| {
            if trainable {
                g.param(p.clone())
            } else {
                g.constant(p.clone())
            }
        });
        BoundGru {
            w_update: vars[0],
            b_update: vars[1],
            w_reset: vars[2],
            b_reset: vars[3],
            w_cand: vars[4],
            b_cand: vars[5],
            input: self.input_width(),
            hidden: self.hidden_width(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    pub w_update: Var,
    pub b_update: Var,
    pub w_reset: Var,
    pub b_reset: Var,
    pub w_cand: Var,
    pub b_cand: Var,
    pub input: usize,
    pub hidden: usize,
}

impl BoundGru {
    pub fn vars(&self) -> [Var; 6] {
        [
            self.w_update,
            self.b_update,
            self.w_reset,
            self.b_reset,
            self.w_cand,
            self.b_cand,
        ]
    }

    /// One recurrence step for a `batch x input` input and `batch x hidden`
    /// state.
    pub fn step<T: Real>(&self, g: &mut Graph<T>, x: Var, h: Var) -> Result<Var> {
        let (xr, xc) = g.shape(x);
        let (hr, hc) = g.shape(h);
        if xc != self.input || hc != self.hidden || xr != hr {
            return Err(TensorError::ShapeMismatch {
                op: "gru_step",
                left: (xr, xc),
                right: (hr, hc),
            });
        }
        let xh = g.concat_cols(&[x, h])?;
        let u = g.matmul_t(xh, self.w_update)?;
        let u = g.add_row(u, self.b_update)?;
        let u = g.sigmoid(u);
        let r = g.matmul_t(xh, self.w_reset)?;
        let r = g.add_row(r, self.b_reset)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, h)?;
        let xrh = g.concat_cols(&[x, rh])?;
        let c = g.matmul_t(xrh, self.w_cand)?;
        let c = g.add_row(c, self.b_cand)?;
        let c = g.tanh(c);
        // h' = c + u * (h - c)
        let h_minus_c = g.sub(h, c)?;
        let gated = g.mul(u, h_minus_c)?;
        g.add(c, gated)
    }

    /// Runs the recurrence over a sequence; every step stays on the tape so
    /// the backward pass is full backpropagation through time.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, inputs: &[Var], h0: Var) -> Result<Vec<Var>> {
        let mut h = h0;
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            h = self.step(g, x, h)?;
            out.push(h);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradient_check, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gru_stays_at_zero() {
        let gru = GruLayer::<f64>::zeros(3, 4);
        let mut g = Graph::new();
        let b = gru.bind(&mut g, false);
        let xs: Vec<Var> = (0..5)
            .map(|t| g.constant(Array2::from_elem((2, 3), t as f64 - 1.3)))
            .collect();
        let h0 = g.constant(Array2::zeros((2, 4)));
        let hs = b.forward(&mut g, &xs, h0).unwrap();
        assert_eq!(hs.len(), 5);
        for h in hs {
            assert!(g.value(h).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn saturated_update_gate_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gru = GruLayer::<f64>::new(3, 4, &mut rng);
        gru.w_update.fill(0.0);
        gru.b_update.fill(50.0);
        let mut g = Graph::new();
        let b = gru.bind(&mut g, false);
        let x = g.constant(Array2::from_elem((1, 3), 7.0));
        let h0v = ndarray::array![[0.3, -0.2, 0.9, -0.5]];
        let h0 = g.constant(h0v.clone());
        let h1 = b.step(&mut g, x, h0).unwrap();
        for (a, e) in g.value(h1).iter().zip(h0v.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let gru = GruLayer::<f64>::zeros(3, 4);
        let mut g = Graph::new();
        let b = gru.bind(&mut g, false);
        let x = g.constant(Array2::zeros((1, 2)));
        let h = g.constant(Array2::zeros((1, 4)));
        assert!(b.step(&mut g, x, h).is_err());
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gru = GruLayer::<f64>::new(3, 4, &mut rng);
            let inputs: Vec<Array2<f64>> = (0..4)
                .map(|_| Array2::from_shape_simple_fn((2, 3), || rng.random_range(-1.0..1.0)))
                .collect();
            let h0: Array2<f64> = Array2::from_shape_simple_fn((2, 4), || rng.random_range(-0.5..0.5));
            let params: Vec<Array2<f64>> = gru.params().iter().map(|p| (*p).clone()).collect();
            let report = gradient_check(
                |g, vars| {
                    let bound = BoundGru {
                        w_update: vars[0],
                        b_update: vars[1],
                        w_reset: vars[2],
                        b_reset: vars[3],
                        w_cand: vars[4],
                        b_cand: vars[5],
                        input: 3,
                        hidden: 4,
                    };
                    let xs: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
                    let h = g.constant(h0.clone());
                    let hs = bound.forward(g, &xs, h)?;
                    let last = g.concat_rows(&hs)?;
                    let sq = g.square(last)?;
                    g.mean(sq)
                },
                &params,
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn dense_relu_mean_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layer = DenseLayer::<f64>::new(5, 3, Activation::Relu, &mut rng);
        let x: Array2<f64> = Array2::from_shape_simple_fn((4, 5), || rng.random_range(-1.0..1.0));
        let params = vec![layer.weight.clone(), layer.bias.clone()];
        let report = gradient_check(
            |g, vars| {
                let d = BoundDense {
                    weight: vars[0],
                    bias: vars[1],
                    activation: Activation::Relu,
                };
                let xv = g.constant(x.clone());
                let y = d.forward(g, xv)?;
                g.mean(y)
            },
            &params,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}
