//! Losses of the three VAEs and of the adversarial stage.
//!
//! Value-level helpers ([`kl_diag`], [`gauss_cross_entropy`],
//! [`gauss_loglik`]) work on single [`DiagGaussian`]s in `f64`. The training
//! losses build on a [`Graph`] over batches of frames: every row is one frame,
//! every per-frame quantity is summed over dimensions, and rows are averaged.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{reparameterize_graph, DiagGaussian, GaussianVar, ModelError};
use crate::tensor::{Graph, Real, TensorError, Var};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid objective config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Weight of each named loss term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TermWeights {
    pub kl_x: f64,
    pub kl_d: f64,
    pub reg_x: f64,
    pub reg_d: f64,
    pub recon: f64,
    pub adv: f64,
}

impl Default for TermWeights {
    fn default() -> Self {
        Self {
            kl_x: 1.0,
            kl_d: 1.0,
            reg_x: 1.0,
            reg_d: 1.0,
            recon: 1.0,
            adv: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    /// KL weight of the VAE losses.
    pub beta: f64,
    pub weights: TermWeights,
    /// Draws per frame for every sampled expectation.
    pub mc_samples: usize,
    /// Evaluate latent-space expectations exactly instead of by sampling.
    pub closed_form_latent_terms: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            weights: TermWeights::default(),
            mc_samples: 1,
            closed_form_latent_terms: true,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.weights;
        let all = [self.beta, w.kl_x, w.kl_d, w.reg_x, w.reg_d, w.recon, w.adv];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ObjectiveError::InvalidConfig(
                "beta and term weights must be finite and >= 0".into(),
            ));
        }
        if self.mc_samples == 0 {
            return Err(ObjectiveError::InvalidConfig("mc_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Evaluated loss: the total and each term with the weight it entered with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub terms: BTreeMap<String, f64>,
    pub weights: BTreeMap<String, f64>,
}

impl LossBreakdown {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.get(name).copied()
    }

    /// `sum(weight * term)`, which `total` equals up to rounding.
    pub fn weighted_sum(&self) -> f64 {
        self.terms.iter().map(|(k, v)| self.weights[k] * v).sum()
    }
}

/// A loss on a graph. `total` is the node to differentiate.
#[derive(Debug, Clone)]
pub struct GraphLoss {
    pub total: Var,
    pub terms: Vec<(&'static str, f64, Var)>,
}

impl GraphLoss {
    fn assemble<T: Real>(g: &mut Graph<T>, terms: Vec<(&'static str, f64, Var)>) -> Result<Self> {
        let mut total: Option<Var> = None;
        for &(_, w, v) in &terms {
            let scaled = g.scale(v, T::from_f64(w));
            total = Some(match total {
                Some(t) => g.add(t, scaled)?,
                None => scaled,
            });
        }
        let total = total.ok_or(ObjectiveError::EmptyBatch)?;
        Ok(Self { total, terms })
    }

    pub fn value<T: Real>(&self, g: &Graph<T>) -> f64 {
        g.scalar(self.total).to_f64()
    }

    pub fn breakdown<T: Real>(&self, g: &Graph<T>) -> LossBreakdown {
        let mut out = LossBreakdown {
            total: self.value(g),
            ..Default::default()
        };
        for &(name, w, v) in &self.terms {
            out.terms.insert(name.to_string(), g.scalar(v).to_f64());
            out.weights.insert(name.to_string(), w);
        }
        out
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(ObjectiveError::DimensionMismatch(a, b));
    }
    Ok(())
}

/// `KL(p || q)` between diagonal Gaussians.
pub fn kl_diag(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    check_dims(p.dim(), q.dim())?;
    Ok((0..p.dim())
        .map(|i| {
            let (lp, lq) = (p.log_var[i], q.log_var[i]);
            let d = p.mean[i] - q.mean[i];
            0.5 * (lq - lp + (lp.exp() + d * d) / lq.exp() - 1.0)
        })
        .sum())
}

/// `E_{z~p}[ln q(z)]`.
pub fn gauss_cross_entropy(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    check_dims(p.dim(), q.dim())?;
    Ok((0..p.dim())
        .map(|i| {
            let lq = q.log_var[i];
            let d = p.mean[i] - q.mean[i];
            -0.5 * (LN_2PI + lq + (p.log_var[i].exp() + d * d) / lq.exp())
        })
        .sum())
}

/// `ln g(x)`.
pub fn gauss_loglik(x: &[f64], g: &DiagGaussian) -> Result<f64> {
    check_dims(x.len(), g.dim())?;
    Ok(x.iter()
        .zip(g.mean.iter().zip(&g.log_var))
        .map(|(x, (m, lv))| -0.5 * (LN_2PI + lv + (x - m).powi(2) / lv.exp()))
        .sum())
}

/// Mean of `f` over `draws` samples of `p`, taken as antithetic pairs
/// `mean ± sigma * eps`. Odd terms of `f` around the mean cancel within each
/// pair; an odd `draws` ends with one unpaired sample.
fn antithetic_mean<R: Rng + ?Sized>(
    p: &DiagGaussian,
    draws: usize,
    rng: &mut R,
    f: impl Fn(&[f64]) -> Result<f64>,
) -> Result<f64> {
    let std: Vec<f64> = p.log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
    let (mut plus, mut minus) = (vec![0.0; p.dim()], vec![0.0; p.dim()]);
    let mut acc = 0.0;
    let mut taken = 0;
    while taken < draws {
        for i in 0..p.dim() {
            let e = std[i] * rng.sample::<f64, _>(StandardNormal);
            plus[i] = p.mean[i] + e;
            minus[i] = p.mean[i] - e;
        }
        acc += f(&plus)?;
        taken += 1;
        if taken < draws {
            acc += f(&minus)?;
            taken += 1;
        }
    }
    Ok(acc / draws as f64)
}

/// Sampled estimate of [`gauss_cross_entropy`].
pub fn mc_cross_entropy<R: Rng + ?Sized>(p: &DiagGaussian, q: &DiagGaussian, draws: usize, rng: &mut R) -> Result<f64> {
    check_dims(p.dim(), q.dim())?;
    antithetic_mean(p, draws, rng, |z| gauss_loglik(z, q))
}

/// Sampled estimate of [`kl_diag`].
pub fn mc_kl<R: Rng + ?Sized>(p: &DiagGaussian, q: &DiagGaussian, draws: usize, rng: &mut R) -> Result<f64> {
    check_dims(p.dim(), q.dim())?;
    antithetic_mean(p, draws, rng, |z| Ok(gauss_loglik(z, p)? - gauss_loglik(z, q)?))
}

// Graph versions. Inputs are `rows x dim`; outputs are `1 x 1` means over rows.

fn rows_of<T: Real>(g: &Graph<T>, v: Var) -> Result<usize> {
    let r = g.shape(v).0;
    if r == 0 {
        return Err(ObjectiveError::EmptyBatch);
    }
    Ok(r)
}

fn row_mean_of_sum<T: Real>(g: &mut Graph<T>, per_entry: Var) -> Result<Var> {
    let rows = rows_of(g, per_entry)?;
    let s = g.sum(per_entry);
    Ok(g.scale(s, T::from_f64(1.0 / rows as f64)))
}

/// `(var_p + (mean_p - mean_q)^2) / var_q` per entry.
fn spread_ratio<T: Real>(g: &mut Graph<T>, p: GaussianVar, q: GaussianVar) -> Result<Var> {
    let var_p = g.exp(p.log_var);
    let d = g.sub(p.mean, q.mean)?;
    let d2 = g.square(d)?;
    let num = g.add(var_p, d2)?;
    let neg_lq = g.neg(q.log_var);
    let inv_var_q = g.exp(neg_lq);
    Ok(g.mul(num, inv_var_q)?)
}

pub fn kl_graph<T: Real>(g: &mut Graph<T>, p: GaussianVar, q: GaussianVar) -> Result<Var> {
    let ratio = spread_ratio(g, p, q)?;
    let dl = g.sub(q.log_var, p.log_var)?;
    let e = g.add(dl, ratio)?;
    let e = g.add_scalar(e, -T::one());
    let e = g.scale(e, T::from_f64(0.5));
    row_mean_of_sum(g, e)
}

pub fn cross_entropy_graph<T: Real>(g: &mut Graph<T>, p: GaussianVar, q: GaussianVar) -> Result<Var> {
    let ratio = spread_ratio(g, p, q)?;
    let e = g.add(q.log_var, ratio)?;
    let e = g.add_scalar(e, T::from_f64(LN_2PI));
    let e = g.scale(e, T::from_f64(-0.5));
    row_mean_of_sum(g, e)
}

pub fn loglik_graph<T: Real>(g: &mut Graph<T>, x: Var, q: GaussianVar) -> Result<Var> {
    let d = g.sub(x, q.mean)?;
    let d2 = g.square(d)?;
    let neg_lv = g.neg(q.log_var);
    let inv_var = g.exp(neg_lv);
    let ratio = g.mul(d2, inv_var)?;
    let e = g.add(q.log_var, ratio)?;
    let e = g.add_scalar(e, T::from_f64(LN_2PI));
    let e = g.scale(e, T::from_f64(-0.5));
    row_mean_of_sum(g, e)
}

/// `N(0, I)` with the shape of `like`.
pub fn standard_prior<T: Real>(g: &mut Graph<T>, like: Var) -> GaussianVar {
    let shape = g.shape(like);
    let mean = g.constant(Array2::zeros(shape));
    let log_var = g.constant(Array2::zeros(shape));
    GaussianVar { mean, log_var }
}

/// Binds a value-level Gaussian sequence as graph constants.
pub fn constant_gaussian<T: Real>(g: &mut Graph<T>, mean: Array2<T>, log_var: Array2<T>) -> GaussianVar {
    GaussianVar {
        mean: g.constant(mean),
        log_var: g.constant(log_var),
    }
}

fn noise<T: Real, R: Rng + ?Sized>(g: &mut Graph<T>, shape: (usize, usize), rng: &mut R) -> Var {
    let e = Array2::from_shape_simple_fn(shape, || T::from_f64(rng.sample::<f64, _>(StandardNormal)));
    g.constant(e)
}

/// Draws `z ~ p` by the reparameterisation trick.
pub fn sample_graph<T: Real, R: Rng + ?Sized>(g: &mut Graph<T>, p: GaussianVar, rng: &mut R) -> Result<Var> {
    let shape = g.shape(p.mean);
    let eps = noise(g, shape, rng);
    Ok(reparameterize_graph(g, p, eps)?)
}

/// Mean over `draws` of `f(z)` with `z ~ p`.
fn sampled_mean<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    p: GaussianVar,
    draws: usize,
    rng: &mut R,
    mut f: impl FnMut(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for _ in 0..draws {
        let z = sample_graph(g, p, rng)?;
        let v = f(g, z)?;
        acc = Some(match acc {
            Some(a) => g.add(a, v)?,
            None => v,
        });
    }
    let acc = acc.ok_or_else(|| ObjectiveError::InvalidConfig("mc_samples must be >= 1".into()))?;
    Ok(g.scale(acc, T::from_f64(1.0 / draws as f64)))
}

/// Negative ELBO of a single VAE: `beta * KL(p(z|x) || N(0, I)) - E[ln q(x|z)]`.
///
/// `decode` maps a latent batch to the decoder's Gaussian over features.
pub fn vae_loss<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    posterior: GaussianVar,
    x: Var,
    mut decode: impl FnMut(&mut Graph<T>, Var) -> std::result::Result<GaussianVar, ModelError>,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<GraphLoss> {
    cfg.validate()?;
    let prior = standard_prior(g, posterior.mean);
    let kl = kl_graph(g, posterior, prior)?;
    let loglik = sampled_mean(g, posterior, cfg.mc_samples, rng, |g, z| {
        let q = decode(g, z)?;
        loglik_graph(g, x, q)
    })?;
    let recon = g.neg(loglik);
    GraphLoss::assemble(g, vec![("kl", cfg.beta, kl), ("recon", cfg.weights.recon, recon)])
}

/// `KL(p || t)` and `E_p[ln t] - E_p[ln N(0, I)]`.
fn supervision_terms<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    p: GaussianVar,
    target: GaussianVar,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<(Var, Var)> {
    let prior = standard_prior(g, p.mean);
    if cfg.closed_form_latent_terms {
        let kl = kl_graph(g, p, target)?;
        let ce_t = cross_entropy_graph(g, p, target)?;
        let ce_prior = cross_entropy_graph(g, p, prior)?;
        let reg = g.sub(ce_t, ce_prior)?;
        return Ok((kl, reg));
    }
    let mut kl_acc = None;
    let mut reg_acc = None;
    for _ in 0..cfg.mc_samples {
        let z = sample_graph(g, p, rng)?;
        let lp = loglik_graph(g, z, p)?;
        let lt = loglik_graph(g, z, target)?;
        let lq = loglik_graph(g, z, prior)?;
        let kl = g.sub(lp, lt)?;
        let reg = g.sub(lt, lq)?;
        kl_acc = Some(match kl_acc {
            Some(a) => g.add(a, kl)?,
            None => kl,
        });
        reg_acc = Some(match reg_acc {
            Some(a) => g.add(a, reg)?,
            None => reg,
        });
    }
    let k = T::from_f64(1.0 / cfg.mc_samples as f64);
    let kl = g.scale(kl_acc.ok_or(ObjectiveError::EmptyBatch)?, k);
    let reg = g.scale(reg_acc.ok_or(ObjectiveError::EmptyBatch)?, k);
    Ok((kl, reg))
}

/// The NS-VAE loss without a noisy-signal decoder.
///
/// `speech` and `noise` are the NS-VAE posteriors; `speech_target` and
/// `noise_target` are the clean and noise encoder posteriors, which must be
/// constants so that only the NS-VAE receives gradient.
pub fn beta_pvae_loss<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    speech: GaussianVar,
    noise: GaussianVar,
    speech_target: GaussianVar,
    noise_target: GaussianVar,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<GraphLoss> {
    cfg.validate()?;
    let (kl_x, reg_x) = supervision_terms(g, speech, speech_target, cfg, rng)?;
    let (kl_d, reg_d) = supervision_terms(g, noise, noise_target, cfg, rng)?;
    let w = cfg.weights;
    GraphLoss::assemble(
        g,
        vec![
            ("kl_x", w.kl_x, kl_x),
            ("reg_x", w.reg_x, reg_x),
            ("kl_d", w.kl_d, kl_d),
            ("reg_d", w.reg_d, reg_d),
        ],
    )
}

/// [`beta_pvae_loss`] plus the reconstruction of the noisy frames `y` from
/// concatenated speech and noise latents through `decode`.
#[allow(clippy::too_many_arguments)]
pub fn pvae_loss<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    speech: GaussianVar,
    noise: GaussianVar,
    speech_target: GaussianVar,
    noise_target: GaussianVar,
    y: Var,
    mut decode: impl FnMut(&mut Graph<T>, Var) -> std::result::Result<GaussianVar, ModelError>,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<GraphLoss> {
    let base = beta_pvae_loss(g, speech, noise, speech_target, noise_target, cfg, rng)?;
    let mut acc = None;
    for _ in 0..cfg.mc_samples {
        let zx = sample_graph(g, speech, rng)?;
        let zd = sample_graph(g, noise, rng)?;
        let z = g.concat_cols(&[zx, zd])?;
        let q = decode(g, z)?;
        let ll = loglik_graph(g, y, q)?;
        acc = Some(match acc {
            Some(a) => g.add(a, ll)?,
            None => ll,
        });
    }
    let ll = g.scale(
        acc.ok_or(ObjectiveError::EmptyBatch)?,
        T::from_f64(1.0 / cfg.mc_samples as f64),
    );
    let recon = g.neg(ll);
    let mut terms = base.terms;
    terms.push(("recon", cfg.weights.recon, recon));
    GraphLoss::assemble(g, terms)
}

fn mean_sq_offset<T: Real>(g: &mut Graph<T>, scores: Var, target: f64) -> Result<Var> {
    rows_of(g, scores)?;
    let d = g.add_scalar(scores, T::from_f64(-target));
    let d2 = g.square(d)?;
    Ok(g.mean(d2)?)
}

/// Least-squares generator loss of a decoder:
/// `w_adv * mean((D(G(z)) - 1)^2) - w_recon * E[ln q(target | z)]`.
///
/// `fake_scores` are the discriminator's scores of the decoded means; bind
/// the discriminator untracked so that it receives no gradient.
pub fn lsgan_generator_loss<T: Real>(
    g: &mut Graph<T>,
    fake_scores: Var,
    decoded: GaussianVar,
    target: Var,
    cfg: &ObjectiveConfig,
) -> Result<GraphLoss> {
    cfg.validate()?;
    let adv = mean_sq_offset(g, fake_scores, 1.0)?;
    let ll = loglik_graph(g, target, decoded)?;
    let recon = g.neg(ll);
    GraphLoss::assemble(g, vec![("adv", cfg.weights.adv, adv), ("recon", cfg.weights.recon, recon)])
}

/// Least-squares discriminator loss: `mean(D(fake)^2) + mean((D(real) - 1)^2)`.
///
/// Generated inputs must be constants so that decoders receive no gradient.
pub fn lsgan_discriminator_loss<T: Real>(g: &mut Graph<T>, fake_scores: Var, real_scores: Var) -> Result<GraphLoss> {
    let fake = mean_sq_offset(g, fake_scores, 0.0)?;
    let real = mean_sq_offset(g, real_scores, 1.0)?;
    GraphLoss::assemble(g, vec![("fake", 1.0, fake), ("real", 1.0, real)])
}

/// `0.5 * ln(2 pi)`, the per-dimension negative log-likelihood at the mean of
/// a unit-variance Gaussian.
pub const HALF_LN_2PI: f64 = 0.5 * LN_2PI;

#[cfg(test)]
mod tests;
