use ndarray::Array2;
use rand::Rng;

use super::spec::NetworkSpec;
use super::{ModelError, Result};
use crate::tensor::{BoundDense, BoundGru, DenseLayer, Graph, GruLayer, Real, Var};

/// Parameters of one network laid out by its [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    pub pre: Vec<DenseLayer<T>>,
    pub gru: GruLayer<T>,
    pub post: Vec<DenseLayer<T>>,
    pub heads: Vec<DenseLayer<T>>,
}

impl<T: Real> Network<T> {
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate().map_err(ModelError::InvalidSpec)?;
        let mut width = spec.input;
        let pre = spec
            .pre_fc
            .iter()
            .map(|&w| {
                let l = DenseLayer::new(width, w, spec.hidden_activation, rng);
                width = w;
                l
            })
            .collect();
        let gru = GruLayer::new(width, spec.gru, rng);
        width = spec.gru;
        let post = spec
            .post_fc
            .iter()
            .map(|&w| {
                let l = DenseLayer::new(width, w, spec.hidden_activation, rng);
                width = w;
                l
            })
            .collect();
        let heads = (0..spec.heads)
            .map(|_| DenseLayer::new(width, spec.head_width, spec.head_activation, rng))
            .collect();
        Ok(Self {
            spec,
            pre,
            gru,
            post,
            heads,
        })
    }

    /// All parameters zero.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Self::new(spec, &mut rng)?;
        net.params_mut().into_iter().for_each(|p| p.fill(T::zero()));
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Parameter blocks in declaration order with their local names.
    pub fn named_params(&self) -> Vec<(String, &Array2<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.pre.iter().enumerate() {
            out.push((format!("pre.{i}.weight"), &l.weight));
            out.push((format!("pre.{i}.bias"), &l.bias));
        }
        let gru_names = ["w_update", "b_update", "w_reset", "b_reset", "w_cand", "b_cand"];
        for (n, p) in gru_names.iter().zip(self.gru.params()) {
            out.push((format!("gru.{n}"), p));
        }
        for (i, l) in self.post.iter().enumerate() {
            out.push((format!("post.{i}.weight"), &l.weight));
            out.push((format!("post.{i}.bias"), &l.bias));
        }
        for (i, l) in self.heads.iter().enumerate() {
            out.push((format!("head.{i}.weight"), &l.weight));
            out.push((format!("head.{i}.bias"), &l.bias));
        }
        out
    }

    pub fn params(&self) -> Vec<&Array2<T>> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    /// Same order as [`Network::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut out: Vec<&mut Array2<T>> = Vec::new();
        for l in &mut self.pre {
            out.extend(l.params_mut());
        }
        out.extend(self.gru.params_mut());
        for l in &mut self.post {
            out.extend(l.params_mut());
        }
        for l in &mut self.heads {
            out.extend(l.params_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundNetwork {
        BoundNetwork {
            pre: self.pre.iter().map(|l| l.bind(g, trainable)).collect(),
            gru: self.gru.bind(g, trainable),
            post: self.post.iter().map(|l| l.bind(g, trainable)).collect(),
            heads: self.heads.iter().map(|l| l.bind(g, trainable)).collect(),
            input: self.spec.input,
        }
    }

    /// Binds the network onto existing graph nodes, one per parameter block
    /// in [`Network::named_params`] order. Used to differentiate with respect
    /// to externally owned parameters, as gradient checks do.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundNetwork> {
        let expected = self.named_params().len();
        if vars.len() != expected {
            return Err(ModelError::WidthMismatch {
                expected,
                found: vars.len(),
            });
        }
        let mut it = vars.iter().copied();
        let dense = |l: &DenseLayer<T>, it: &mut dyn Iterator<Item = Var>| BoundDense {
            weight: it.next().expect("counted"),
            bias: it.next().expect("counted"),
            activation: l.activation,
        };
        let pre = self.pre.iter().map(|l| dense(l, &mut it)).collect();
        let g: Vec<Var> = it.by_ref().take(6).collect();
        let gru = BoundGru {
            w_update: g[0],
            b_update: g[1],
            w_reset: g[2],
            b_reset: g[3],
            w_cand: g[4],
            b_cand: g[5],
            input: self.gru.input_width(),
            hidden: self.gru.hidden_width(),
        };
        let post = self.post.iter().map(|l| dense(l, &mut it)).collect();
        let heads = self.heads.iter().map(|l| dense(l, &mut it)).collect();
        Ok(BoundNetwork {
            pre,
            gru,
            post,
            heads,
            input: self.spec.input,
        })
    }

    pub fn convert<U: Real>(&self) -> Network<U> {
        let conv = |a: &Array2<T>| a.mapv(|v| U::from_f64(v.to_f64()));
        let dense = |l: &DenseLayer<T>| DenseLayer {
            weight: conv(&l.weight),
            bias: conv(&l.bias),
            activation: l.activation,
        };
        Network {
            spec: self.spec.clone(),
            pre: self.pre.iter().map(dense).collect(),
            gru: GruLayer {
                w_update: conv(&self.gru.w_update),
                b_update: conv(&self.gru.b_update),
                w_reset: conv(&self.gru.w_reset),
                b_reset: conv(&self.gru.b_reset),
                w_cand: conv(&self.gru.w_cand),
                b_cand: conv(&self.gru.b_cand),
            },
            post: self.post.iter().map(dense).collect(),
            heads: self.heads.iter().map(dense).collect(),
        }
    }
}

/// A network whose parameters live on a [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundNetwork {
    pub pre: Vec<BoundDense>,
    pub gru: BoundGru,
    pub post: Vec<BoundDense>,
    pub heads: Vec<BoundDense>,
    input: usize,
}

impl BoundNetwork {
    /// Same order as [`Network::named_params`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.pre {
            out.extend(l.vars());
        }
        out.extend(self.gru.vars());
        for l in &self.post {
            out.extend(l.vars());
        }
        for l in &self.heads {
            out.extend(l.vars());
        }
        out
    }

    /// Runs a batch of equal-length sequences.
    ///
    /// `x` holds `steps * batch` rows in time-major order (row `t * batch + b`
    /// is step `t` of sequence `b`). The recurrent state starts at zero for
    /// every sequence. Returns one `steps * batch` x `head_width` matrix per
    /// output head, in the same row order.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var, steps: usize, batch: usize) -> Result<Vec<Var>> {
        let (rows, cols) = g.shape(x);
        if cols != self.input {
            return Err(ModelError::WidthMismatch {
                expected: self.input,
                found: cols,
            });
        }
        if steps == 0 || batch == 0 || rows != steps * batch {
            return Err(ModelError::InvalidInput(format!(
                "{rows} rows do not split into {steps} steps x {batch} sequences"
            )));
        }
        let mut h = x;
        for l in &self.pre {
            h = l.forward(g, h)?;
        }
        let step_inputs = (0..steps)
            .map(|t| g.slice_rows(h, t * batch, batch))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let h0 = g.constant(Array2::zeros((batch, self.gru.hidden)));
        let states = self.gru.forward(g, &step_inputs, h0)?;
        let mut h = g.concat_rows(&states)?;
        for l in &self.post {
            h = l.forward(g, h)?;
        }
        self.heads
            .iter()
            .map(|l| l.forward(g, h).map_err(ModelError::from))
            .collect()
    }
}
