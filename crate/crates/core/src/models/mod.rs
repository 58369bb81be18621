//! The encoder, decoder and discriminator networks and the operations that
//! run them.
//!
//! Every network is `dense* -> GRU -> dense* -> linear heads`
//! ([`NetworkSpec`]). Encoders emit a mean head and a log-variance head per
//! latent Gaussian; decoders emit the same pair over the LPS bins;
//! discriminators emit one score per frame, mean-pooled over each sequence.
//!
//! Two API levels exist. The `*_graph` functions put a computation on a
//! [`Graph`] for training. [`encode`], [`nsvae_encode`], [`decode`] and
//! [`discriminate`] are the inference wrappers: one sequence in, plain
//! arrays out, nothing tracked.

mod bundle;
mod network;
mod spec;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::signal::LpsFeatures;
use crate::tensor::{Graph, Real, TensorError, Var};

pub use bundle::{FeatureNorm, ModelBundle};
pub use network::{BoundNetwork, Network};
pub use spec::{Domain, ModelDims, NetworkSpec, Role, RoleKind};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("width mismatch: expected {expected}, found {found}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("role {role} cannot be used as {wanted}")]
    WrongRole { role: Role, wanted: &'static str },
    #[error("bundle has no {0} network")]
    MissingNetwork(Role),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Diagonal Gaussian parameterised by mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(ModelError::WidthMismatch {
                expected: mean.len(),
                found: log_var.len(),
            });
        }
        if mean.iter().chain(&log_var).any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidInput("non-finite Gaussian parameter".into()));
        }
        Ok(Self { mean, log_var })
    }

    /// `N(0, I)`.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|v| v.exp()).collect()
    }
}

/// One [`DiagGaussian`] per frame, stored as `frames x dim` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSeq {
    pub mean: Array2<f64>,
    pub log_var: Array2<f64>,
}

impl GaussianSeq {
    pub fn frames(&self) -> usize {
        self.mean.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.ncols()
    }

    pub fn frame(&self, i: usize) -> DiagGaussian {
        DiagGaussian {
            mean: self.mean.row(i).to_vec(),
            log_var: self.log_var.row(i).to_vec(),
        }
    }
}

/// A Gaussian whose parameters are nodes on a graph.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVar {
    pub mean: Var,
    pub log_var: Var,
}

/// `z = mean + exp(log_var / 2) * noise`.
pub fn reparameterize(g: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dim() {
        return Err(ModelError::WidthMismatch {
            expected: g.dim(),
            found: noise.len(),
        });
    }
    Ok(g.mean
        .iter()
        .zip(&g.log_var)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Differentiable reparameterisation; `noise` is usually a constant.
pub fn reparameterize_graph<T: Real>(g: &mut Graph<T>, gauss: GaussianVar, noise: Var) -> Result<Var> {
    let half = g.scale(gauss.log_var, T::from_f64(0.5));
    let std = g.exp(half);
    let spread = g.mul(std, noise)?;
    Ok(g.add(gauss.mean, spread)?)
}

fn norm_constants<T: Real>(g: &mut Graph<T>, norm: &FeatureNorm<T>) -> (Var, Var) {
    let neg_mean = g.constant(norm.mean.mapv(|v| -v));
    let inv_std = g.constant(norm.std.mapv(|v| T::one() / v));
    (neg_mean, inv_std)
}

/// Maps raw LPS rows into the normalised input space.
pub fn normalize_graph<T: Real>(g: &mut Graph<T>, norm: &FeatureNorm<T>, x: Var) -> Result<Var> {
    let (neg_mean, inv_std) = norm_constants(g, norm);
    let centred = g.add_row(x, neg_mean)?;
    Ok(g.mul_row(centred, inv_std)?)
}

fn expect_heads(role: Role, heads: &[Var], n: usize) -> Result<()> {
    if heads.len() != n {
        return Err(ModelError::InvalidSpec(format!(
            "{role} has {} heads, expected {n}",
            heads.len()
        )));
    }
    Ok(())
}

/// C-VAE / N-VAE encoder on raw LPS rows.
pub fn encoder_graph<T: Real>(
    g: &mut Graph<T>,
    net: &BoundNetwork,
    norm: &FeatureNorm<T>,
    x: Var,
    steps: usize,
    batch: usize,
) -> Result<GaussianVar> {
    let xn = normalize_graph(g, norm, x)?;
    let heads = net.forward(g, xn, steps, batch)?;
    expect_heads(Role::CvaeEnc, &heads, 2)?;
    Ok(GaussianVar {
        mean: heads[0],
        log_var: heads[1],
    })
}

/// NS-VAE encoder: heads are `(mu_yx, logvar_yx, mu_yd, logvar_yd)`.
pub fn nsvae_graph<T: Real>(
    g: &mut Graph<T>,
    net: &BoundNetwork,
    norm: &FeatureNorm<T>,
    y: Var,
    steps: usize,
    batch: usize,
) -> Result<(GaussianVar, GaussianVar)> {
    let yn = normalize_graph(g, norm, y)?;
    let heads = net.forward(g, yn, steps, batch)?;
    expect_heads(Role::NsvaeEnc, &heads, 4)?;
    Ok((
        GaussianVar {
            mean: heads[0],
            log_var: heads[1],
        },
        GaussianVar {
            mean: heads[2],
            log_var: heads[3],
        },
    ))
}

/// Decoder from latents to a Gaussian over raw LPS bins. The heads work in
/// the normalised space; the fixed affine map back is part of the decoder.
pub fn decoder_graph<T: Real>(
    g: &mut Graph<T>,
    net: &BoundNetwork,
    norm: &FeatureNorm<T>,
    z: Var,
    steps: usize,
    batch: usize,
) -> Result<GaussianVar> {
    let heads = net.forward(g, z, steps, batch)?;
    expect_heads(Role::CvaeDec, &heads, 2)?;
    let std = g.constant(norm.std.clone());
    let mean_row = g.constant(norm.mean.clone());
    let log_var_shift = g.constant(norm.std.mapv(|s| T::from_f64(2.0) * s.ln()));
    let scaled = g.mul_row(heads[0], std)?;
    let mean = g.add_row(scaled, mean_row)?;
    let log_var = g.add_row(heads[1], log_var_shift)?;
    Ok(GaussianVar { mean, log_var })
}

/// Averages per-row values over time for each sequence of a time-major batch.
pub fn pool_over_time<T: Real>(g: &mut Graph<T>, per_frame: Var, steps: usize, batch: usize) -> Result<Var> {
    let rows = g.shape(per_frame).0;
    if rows != steps * batch {
        return Err(ModelError::InvalidInput(format!(
            "{rows} rows do not split into {steps} x {batch}"
        )));
    }
    let w = T::from_f64(1.0 / steps as f64);
    let pool = Array2::from_shape_fn((batch, rows), |(b, r)| if r % batch == b { w } else { T::zero() });
    let pool = g.constant(pool);
    Ok(g.matmul(pool, per_frame)?)
}

/// Discriminator: one score per sequence (`batch x 1`).
pub fn discriminator_graph<T: Real>(
    g: &mut Graph<T>,
    net: &BoundNetwork,
    norm: &FeatureNorm<T>,
    x: Var,
    steps: usize,
    batch: usize,
) -> Result<Var> {
    let xn = normalize_graph(g, norm, x)?;
    let heads = net.forward(g, xn, steps, batch)?;
    expect_heads(Role::DiscSpeech, &heads, 1)?;
    pool_over_time(g, heads[0], steps, batch)
}

fn require_kind(role: Role, kind: RoleKind, wanted: &'static str) -> Result<()> {
    if role.kind() != kind {
        return Err(ModelError::WrongRole { role, wanted });
    }
    Ok(())
}

fn to_real<T: Real>(a: &Array2<f64>) -> Array2<T> {
    a.mapv(T::from_f64)
}

fn to_f64<T: Real>(a: &Array2<T>) -> Array2<f64> {
    a.mapv(|v| v.to_f64())
}

fn check_width(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(ModelError::WidthMismatch { expected, found });
    }
    Ok(())
}

fn gaussian_values<T: Real>(g: &Graph<T>, v: GaussianVar) -> GaussianSeq {
    GaussianSeq {
        mean: to_f64(g.value(v.mean)),
        log_var: to_f64(g.value(v.log_var)),
    }
}

/// Posterior over latents for every frame of one sequence.
pub fn encode<T: Real>(bundle: &ModelBundle<T>, role: Role, feats: &LpsFeatures) -> Result<GaussianSeq> {
    require_kind(role, RoleKind::Encoder, "an encoder")?;
    let net = bundle.network(role)?;
    check_width(net.spec().input, feats.bins())?;
    let mut g = Graph::new();
    let bound = net.bind(&mut g, false);
    let x = g.constant(to_real(feats.values()));
    let out = encoder_graph(&mut g, &bound, bundle.norm_for(role), x, feats.frames(), 1)?;
    Ok(gaussian_values(&g, out))
}

/// Speech and noise posteriors for every frame of a noisy sequence.
pub fn nsvae_encode<T: Real>(bundle: &ModelBundle<T>, noisy: &LpsFeatures) -> Result<(GaussianSeq, GaussianSeq)> {
    let net = bundle.network(Role::NsvaeEnc)?;
    check_width(net.spec().input, noisy.bins())?;
    let mut g = Graph::new();
    let bound = net.bind(&mut g, false);
    let y = g.constant(to_real(noisy.values()));
    let (sx, sd) = nsvae_graph(&mut g, &bound, bundle.norm_for(Role::NsvaeEnc), y, noisy.frames(), 1)?;
    Ok((gaussian_values(&g, sx), gaussian_values(&g, sd)))
}

/// Gaussian over LPS bins for every latent row of one sequence.
pub fn decode<T: Real>(bundle: &ModelBundle<T>, role: Role, z: &Array2<f64>) -> Result<GaussianSeq> {
    require_kind(role, RoleKind::Decoder, "a decoder")?;
    let net = bundle.network(role)?;
    check_width(net.spec().input, z.ncols())?;
    if z.nrows() == 0 {
        return Err(ModelError::InvalidInput("empty latent sequence".into()));
    }
    let mut g = Graph::new();
    let bound = net.bind(&mut g, false);
    let zv = g.constant(to_real(z));
    let out = decoder_graph(&mut g, &bound, bundle.norm_for(role), zv, z.nrows(), 1)?;
    Ok(gaussian_values(&g, out))
}

/// Time-pooled discriminator score of one sequence.
pub fn discriminate<T: Real>(bundle: &ModelBundle<T>, role: Role, feats: &LpsFeatures) -> Result<f64> {
    require_kind(role, RoleKind::Discriminator, "a discriminator")?;
    let net = bundle.network(role)?;
    check_width(net.spec().input, feats.bins())?;
    let mut g = Graph::new();
    let bound = net.bind(&mut g, false);
    let x = g.constant(to_real(feats.values()));
    let s = discriminator_graph(&mut g, &bound, bundle.norm_for(role), x, feats.frames(), 1)?;
    Ok(g.scalar(s).to_f64())
}

/// Interleaves equal-length `steps x width` sequences into one time-major
/// `steps * batch x width` matrix.
pub fn pack_time_major<T: Real>(seqs: &[&Array2<f64>]) -> Result<Array2<T>> {
    let first = seqs
        .first()
        .ok_or_else(|| ModelError::InvalidInput("empty batch".into()))?;
    let (steps, width) = first.dim();
    if seqs.iter().any(|s| s.dim() != (steps, width)) {
        return Err(ModelError::InvalidInput("sequences differ in shape".into()));
    }
    let batch = seqs.len();
    Ok(Array2::from_shape_fn((steps * batch, width), |(r, c)| {
        T::from_f64(seqs[r % batch][[r / batch, c]])
    }))
}

/// Inverse of [`pack_time_major`] for sequence `b`.
pub fn unpack_sequence<T: Real>(packed: &Array2<T>, batch: usize, b: usize) -> Array2<f64> {
    let steps = packed.nrows() / batch;
    Array2::from_shape_fn((steps, packed.ncols()), |(t, c)| packed[[t * batch + b, c]].to_f64())
}

/// Mean of every row of a `rows x 1` column.
pub fn column_mean<T: Real>(a: &Array2<T>) -> f64 {
    let col: Array1<f64> = a.column(0).mapv(|v| v.to_f64());
    col.mean().unwrap_or(0.0)
}
