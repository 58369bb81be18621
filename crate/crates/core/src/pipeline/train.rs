use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::SegmentSet;
use super::{PipelineError, Result, TrainConfig};
use crate::models::{
    decoder_graph, discriminator_graph, encoder_graph, nsvae_graph, BoundNetwork, Domain, GaussianVar, ModelBundle,
    Role,
};
use crate::objectives::{
    beta_pvae_loss, constant_gaussian, lsgan_discriminator_loss, lsgan_generator_loss, pvae_loss, sample_graph,
    vae_loss, GraphLoss, LossBreakdown,
};
use crate::tensor::{clip_global_norm, AdamConfig, AdamState, Graph, Real};

/// Training stage, in the order the stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Cvae,
    Nvae,
    Nsvae,
    Adversarial,
}

impl Stage {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [Stage::Init, Stage::Cvae, Stage::Nvae, Stage::Nsvae, Stage::Adversarial]
            .get(c as usize)
            .copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Cvae => "cvae",
            Stage::Nvae => "nvae",
            Stage::Nsvae => "nsvae",
            Stage::Adversarial => "adversarial",
        }
    }
}

/// Which single-domain VAE to pretrain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VaeKind {
    Cvae,
    Nvae,
}

impl VaeKind {
    fn roles(self) -> (Role, Role) {
        match self {
            VaeKind::Cvae => (Role::CvaeEnc, Role::CvaeDec),
            VaeKind::Nvae => (Role::NvaeEnc, Role::NvaeDec),
        }
    }

    fn stage(self) -> Stage {
        match self {
            VaeKind::Cvae => Stage::Cvae,
            VaeKind::Nvae => Stage::Nvae,
        }
    }

    pub fn domain(self) -> Domain {
        self.roles().0.domain()
    }
}

/// Where a bundle is in the training sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub stage: Stage,
    pub epoch: u32,
    pub step: u64,
}

impl Default for Progress {
    fn default() -> Self {
        Self {
            stage: Stage::Init,
            epoch: 0,
            step: 0,
        }
    }
}

/// Mean losses of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    /// 1-based.
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: Option<LossBreakdown>,
    /// Discriminator losses of the adversarial stage.
    pub discriminator: Option<LossBreakdown>,
    pub steps: u64,
    pub wall_clock_s: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_s: f64,
    pub stopped_early: bool,
}

impl StageReport {
    /// Train totals, one per epoch.
    pub fn train_totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train.total).collect()
    }

    /// One train-split term per epoch.
    pub fn train_term(&self, name: &str) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.train.term(name)).collect()
    }

    pub fn progress(&self) -> Progress {
        let last = self.epochs.last();
        Progress {
            stage: self.stage,
            epoch: last.map_or(0, |e| e.epoch as u32),
            step: last.map_or(0, |e| e.steps),
        }
    }

    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("record serialises") + "\n")
            .collect()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

/// Running mean of loss breakdowns.
#[derive(Default)]
struct MeanBreakdown {
    n: usize,
    acc: Option<LossBreakdown>,
}

impl MeanBreakdown {
    fn add(&mut self, b: &LossBreakdown) {
        self.n += 1;
        match &mut self.acc {
            None => self.acc = Some(b.clone()),
            Some(a) => {
                a.total += b.total;
                for (k, v) in &b.terms {
                    *a.terms.entry(k.clone()).or_default() += v;
                }
            }
        }
    }

    fn finish(self) -> Option<LossBreakdown> {
        let n = self.n as f64;
        self.acc.map(|mut a| {
            a.total /= n;
            a.terms.values_mut().for_each(|v| *v /= n);
            a
        })
    }
}

fn stage_rng(seed: u64, stage: Stage, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stage.code() as u64) << 32) | stream);
    rng
}

fn bind<T: Real>(
    g: &mut Graph<T>,
    bundle: &ModelBundle<T>,
    roles: &[Role],
    trainable: bool,
) -> Result<BTreeMap<Role, BoundNetwork>> {
    roles
        .iter()
        .map(|&r| Ok((r, bundle.network(r)?.bind(g, trainable))))
        .collect()
}

/// Gradients of every bound network in role order, which is the order of
/// [`ModelBundle::params_of_mut`].
fn gradients<T: Real>(g: &Graph<T>, loss: &GraphLoss, bound: &BTreeMap<Role, BoundNetwork>) -> Result<Vec<Array2<T>>> {
    let mut grads = g.backward(loss.total)?;
    Ok(bound
        .values()
        .flat_map(|b| b.vars())
        .map(|v| grads.take(v).unwrap_or_else(|| Array2::zeros(g.shape(v))))
        .collect())
}

struct Optimizer<T> {
    roles: Vec<Role>,
    adam: AdamState<T>,
    clip: Option<f64>,
}

impl<T: Real> Optimizer<T> {
    fn new(bundle: &ModelBundle<T>, roles: &[Role], cfg: &TrainConfig) -> Result<Self> {
        let mut roles = roles.to_vec();
        roles.sort();
        let adam_cfg = AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        };
        let adam = AdamState::new(adam_cfg, bundle.params_of(&roles)?);
        Ok(Self {
            roles,
            adam,
            clip: cfg.clip_grad_norm,
        })
    }

    fn step(&mut self, bundle: &mut ModelBundle<T>, mut grads: Vec<Array2<T>>) -> Result<()> {
        if let Some(c) = self.clip {
            clip_global_norm(&mut grads, c);
        }
        let mut params = bundle.params_of_mut(&self.roles)?;
        self.adam.step(&mut params, &grads)?;
        Ok(())
    }
}

fn check_finite(stage: Stage, epoch: usize, step: u64, b: &LossBreakdown) -> Result<()> {
    if !b.total.is_finite() {
        return Err(PipelineError::NonFiniteLoss {
            stage: stage.name(),
            epoch,
            step,
            detail: format!("{:?}", b.terms),
        });
    }
    Ok(())
}

fn chunks(idx: &[usize], batch: usize) -> impl Iterator<Item = &[usize]> {
    idx.chunks(batch)
}

/// Runs the epoch loop shared by all stages: shuffled batches through
/// `train_step`, ordered validation batches through `eval`, patience-based
/// early stopping on the validation total.
fn run_epochs<S>(
    stage: Stage,
    train: &SegmentSet,
    val: Option<&SegmentSet>,
    cfg: &TrainConfig,
    state: &mut S,
    mut train_step: impl FnMut(&mut S, &[usize], &mut ChaCha8Rng) -> Result<(LossBreakdown, Option<LossBreakdown>)>,
    mut eval: impl FnMut(&mut S, &SegmentSet, &[usize], &mut ChaCha8Rng) -> Result<LossBreakdown>,
) -> Result<StageReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let hash = cfg.hash();
    let start = Instant::now();
    let mut rng = stage_rng(cfg.seed, stage, 0);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = StageReport {
        stage,
        config_hash: hash.clone(),
        epochs: Vec::new(),
        wall_clock_s: 0.0,
        stopped_early: false,
    };
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut steps = 0u64;
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut mean = MeanBreakdown::default();
        let mut disc = MeanBreakdown::default();
        for batch in chunks(&order, cfg.batch_size) {
            let (b, d) = train_step(state, batch, &mut rng)?;
            steps += 1;
            check_finite(stage, epoch, steps, &b)?;
            mean.add(&b);
            if let Some(d) = d {
                disc.add(&d);
            }
        }
        let val_mean = match val.filter(|v| !v.is_empty()) {
            Some(v) => {
                let mut vrng = stage_rng(cfg.seed, stage, epoch as u64);
                let idx: Vec<usize> = (0..v.len()).collect();
                let mut m = MeanBreakdown::default();
                for batch in chunks(&idx, cfg.batch_size) {
                    m.add(&eval(state, v, batch, &mut vrng)?);
                }
                m.finish()
            }
            None => None,
        };
        let rec = EpochRecord {
            stage,
            epoch,
            train: mean.finish().expect("non-empty epoch"),
            val: val_mean,
            discriminator: disc.finish(),
            steps,
            wall_clock_s: t0.elapsed().as_secs_f64(),
            config_hash: hash.clone(),
        };
        info!(
            "{} epoch {epoch}: train {:.4} val {} ({:.1}s)",
            stage.name(),
            rec.train.total,
            rec.val.as_ref().map_or("-".to_string(), |v| format!("{:.4}", v.total)),
            rec.wall_clock_s
        );
        let val_total = rec.val.as_ref().map(|v| v.total);
        report.epochs.push(rec);
        if let Some(v) = val_total {
            if v < best {
                best = v;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience && epoch < cfg.epochs {
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}

fn vae_batch_loss<T: Real>(
    g: &mut Graph<T>,
    bundle: &ModelBundle<T>,
    kind: VaeKind,
    set: &SegmentSet,
    idx: &[usize],
    cfg: &TrainConfig,
    trainable: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(GraphLoss, BTreeMap<Role, BoundNetwork>)> {
    let (er, dr) = kind.roles();
    let bound = bind(g, bundle, &[er, dr], trainable)?;
    let (steps, b) = (set.frames(), idx.len());
    let x = g.constant(set.batch::<T>(idx, kind.domain())?);
    let post = encoder_graph(g, &bound[&er], bundle.norm_for(er), x, steps, b)?;
    let dec = &bound[&dr];
    let dnorm = bundle.norm_for(dr);
    let loss = vae_loss(g, post, x, |g, z| decoder_graph(g, dec, dnorm, z, steps, b), &cfg.objective, rng)?;
    Ok((loss, bound))
}

/// Pretrains the C-VAE or N-VAE on its own domain. The domain's feature
/// normalisation is fitted on `train` first.
pub fn train_vae<T: Real>(
    bundle: &mut ModelBundle<T>,
    kind: VaeKind,
    train: &SegmentSet,
    val: Option<&SegmentSet>,
    cfg: &TrainConfig,
) -> Result<StageReport> {
    train.require(&[kind.domain()])?;
    if let Some(v) = val.filter(|v| !v.is_empty()) {
        v.require(&[kind.domain()])?;
    }
    bundle.set_norm(kind.domain(), train.fit_norm(kind.domain())?)?;
    let (er, dr) = kind.roles();
    let opt = Optimizer::new(bundle, &[er, dr], cfg)?;
    let mut state = (bundle, opt);
    run_epochs(
        kind.stage(),
        train,
        val,
        cfg,
        &mut state,
        |(bundle, opt), idx, rng| {
            let mut g = Graph::new();
            let (loss, bound) = vae_batch_loss(&mut g, bundle, kind, train, idx, cfg, true, rng)?;
            let breakdown = loss.breakdown(&g);
            if breakdown.total.is_finite() {
                let grads = gradients(&g, &loss, &bound)?;
                opt.step(bundle, grads)?;
            }
            Ok((breakdown, None))
        },
        |(bundle, _), set, idx, rng| {
            let mut g = Graph::new();
            let (loss, _) = vae_batch_loss(&mut g, bundle, kind, set, idx, cfg, false, rng)?;
            Ok(loss.breakdown(&g))
        },
    )
}

/// Frozen-encoder posteriors of one domain for every segment, stored as
/// `(mean, log_var)` per segment.
type TargetCache<T> = Vec<(Array2<T>, Array2<T>)>;

fn encoder_targets<T: Real>(
    bundle: &ModelBundle<T>,
    role: Role,
    set: &SegmentSet,
    chunk: usize,
) -> Result<TargetCache<T>> {
    let mut out = Vec::with_capacity(set.len());
    let idx: Vec<usize> = (0..set.len()).collect();
    let steps = set.frames();
    for batch in idx.chunks(chunk) {
        let mut g = Graph::new();
        let bound = bundle.network(role)?.bind(&mut g, false);
        let x = g.constant(set.batch::<T>(batch, role.domain())?);
        let post = encoder_graph(&mut g, &bound, bundle.norm_for(role), x, steps, batch.len())?;
        let (m, lv) = (g.value(post.mean), g.value(post.log_var));
        for k in 0..batch.len() {
            let pick = |a: &Array2<T>| Array2::from_shape_fn((steps, a.ncols()), |(t, c)| a[[t * batch.len() + k, c]]);
            out.push((pick(m), pick(lv)));
        }
    }
    Ok(out)
}

fn gather<T: Real>(cache: &TargetCache<T>, idx: &[usize], log_var: bool) -> Array2<T> {
    let first = &cache[idx[0]].0;
    let (steps, width) = first.dim();
    let b = idx.len();
    Array2::from_shape_fn((steps * b, width), |(r, c)| {
        let (m, lv) = &cache[idx[r % b]];
        if log_var {
            lv[[r / b, c]]
        } else {
            m[[r / b, c]]
        }
    })
}

fn target_gaussian<T: Real>(g: &mut Graph<T>, cache: &TargetCache<T>, idx: &[usize]) -> GaussianVar {
    constant_gaussian(g, gather(cache, idx, false), gather(cache, idx, true))
}

struct NsvaeData<T> {
    speech: TargetCache<T>,
    noise: TargetCache<T>,
}

impl<T: Real> NsvaeData<T> {
    fn new(bundle: &ModelBundle<T>, set: &SegmentSet, chunk: usize) -> Result<Self> {
        set.require(&Domain::ALL)?;
        Ok(Self {
            speech: encoder_targets(bundle, Role::CvaeEnc, set, chunk)?,
            noise: encoder_targets(bundle, Role::NvaeEnc, set, chunk)?,
        })
    }
}

fn nsvae_roles<T: Real>(bundle: &ModelBundle<T>, cfg: &TrainConfig) -> Result<Vec<Role>> {
    if cfg.ns_decoder {
        if !bundle.has(Role::NsvaeDec) {
            return Err(PipelineError::Model(crate::models::ModelError::MissingNetwork(Role::NsvaeDec)));
        }
        Ok(vec![Role::NsvaeEnc, Role::NsvaeDec])
    } else {
        Ok(vec![Role::NsvaeEnc])
    }
}

#[allow(clippy::too_many_arguments)]
fn nsvae_batch_loss<T: Real>(
    g: &mut Graph<T>,
    bundle: &ModelBundle<T>,
    data: &NsvaeData<T>,
    set: &SegmentSet,
    idx: &[usize],
    cfg: &TrainConfig,
    trainable: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(GraphLoss, BTreeMap<Role, BoundNetwork>)> {
    let roles = nsvae_roles(bundle, cfg)?;
    let bound = bind(g, bundle, &roles, trainable)?;
    let (steps, b) = (set.frames(), idx.len());
    let y = g.constant(set.batch::<T>(idx, Domain::Noisy)?);
    let (sx, sd) = nsvae_graph(g, &bound[&Role::NsvaeEnc], bundle.norm_for(Role::NsvaeEnc), y, steps, b)?;
    let tx = target_gaussian(g, &data.speech, idx);
    let td = target_gaussian(g, &data.noise, idx);
    let loss = match bound.get(&Role::NsvaeDec) {
        Some(dec) => {
            let norm = bundle.norm_for(Role::NsvaeDec);
            pvae_loss(
                g,
                sx,
                sd,
                tx,
                td,
                y,
                |g, z| decoder_graph(g, dec, norm, z, steps, b),
                &cfg.objective,
                rng,
            )?
        }
        None => beta_pvae_loss(g, sx, sd, tx, td, &cfg.objective, rng)?,
    };
    Ok((loss, bound))
}

/// Trains the NS-VAE encoder (and the optional joint decoder) against the
/// frozen C-VAE and N-VAE encoders. No other parameter changes. The noisy
/// feature normalisation is fitted on `train` first.
pub fn train_nsvae<T: Real>(
    bundle: &mut ModelBundle<T>,
    train: &SegmentSet,
    val: Option<&SegmentSet>,
    cfg: &TrainConfig,
) -> Result<StageReport> {
    let train_data = NsvaeData::new(bundle, train, cfg.batch_size.max(16))?;
    let val = val.filter(|v| !v.is_empty());
    let val_data = val.map(|v| NsvaeData::new(bundle, v, cfg.batch_size.max(16))).transpose()?;
    bundle.set_norm(Domain::Noisy, train.fit_norm(Domain::Noisy)?)?;
    let roles = nsvae_roles(bundle, cfg)?;
    let opt = Optimizer::new(bundle, &roles, cfg)?;
    let mut state = (bundle, opt);
    run_epochs(
        Stage::Nsvae,
        train,
        val,
        cfg,
        &mut state,
        |(bundle, opt), idx, rng| {
            let mut g = Graph::new();
            let (loss, bound) = nsvae_batch_loss(&mut g, bundle, &train_data, train, idx, cfg, true, rng)?;
            let breakdown = loss.breakdown(&g);
            if breakdown.total.is_finite() {
                let grads = gradients(&g, &loss, &bound)?;
                opt.step(bundle, grads)?;
            }
            Ok((breakdown, None))
        },
        |(bundle, _), set, idx, rng| {
            let data = val_data.as_ref().expect("validation targets exist");
            let mut g = Graph::new();
            let (loss, _) = nsvae_batch_loss(&mut g, bundle, data, set, idx, cfg, false, rng)?;
            Ok(loss.breakdown(&g))
        },
    )
}

/// Latent draws for one adversarial batch: NS-encode the noisy input with
/// the frozen encoder and reparameterise.
fn draw_latents<T: Real>(
    bundle: &ModelBundle<T>,
    set: &SegmentSet,
    idx: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<T>, Array2<T>)> {
    let mut g = Graph::new();
    let enc = bundle.network(Role::NsvaeEnc)?.bind(&mut g, false);
    let y = g.constant(set.batch::<T>(idx, Domain::Noisy)?);
    let (sx, sd) = nsvae_graph(&mut g, &enc, bundle.norm_for(Role::NsvaeEnc), y, set.frames(), idx.len())?;
    let zx = sample_graph(&mut g, sx, rng)?;
    let zd = sample_graph(&mut g, sd, rng)?;
    Ok((g.value(zx).clone(), g.value(zd).clone()))
}

const PAIRS: [(Role, Role, Domain); 2] = [
    (Role::CvaeDec, Role::DiscSpeech, Domain::Clean),
    (Role::NvaeDec, Role::DiscNoise, Domain::Noise),
];
const DECODERS: [Role; 2] = [Role::CvaeDec, Role::NvaeDec];
const DISCRIMINATORS: [Role; 2] = [Role::DiscSpeech, Role::DiscNoise];

fn discriminator_loss<T: Real>(
    g: &mut Graph<T>,
    bundle: &ModelBundle<T>,
    set: &SegmentSet,
    idx: &[usize],
    z: [&Array2<T>; 2],
    trainable: bool,
) -> Result<(GraphLoss, BTreeMap<Role, BoundNetwork>)> {
    let (steps, b) = (set.frames(), idx.len());
    let decs = bind(g, bundle, &DECODERS, false)?;
    let discs = bind(g, bundle, &DISCRIMINATORS, trainable)?;
    let mut parts = Vec::new();
    for ((dr, cr, domain), z) in PAIRS.into_iter().zip(z) {
        let zv = g.constant(z.clone());
        let fake = decoder_graph(g, &decs[&dr], bundle.norm_for(dr), zv, steps, b)?;
        let real = g.constant(set.batch::<T>(idx, domain)?);
        let norm = bundle.norm_for(cr);
        let fs = discriminator_graph(g, &discs[&cr], norm, fake.mean, steps, b)?;
        let rs = discriminator_graph(g, &discs[&cr], norm, real, steps, b)?;
        parts.push(lsgan_discriminator_loss(g, fs, rs)?);
    }
    Ok((sum_losses(g, parts)?, discs))
}

fn generator_loss<T: Real>(
    g: &mut Graph<T>,
    bundle: &ModelBundle<T>,
    set: &SegmentSet,
    idx: &[usize],
    z: [&Array2<T>; 2],
    cfg: &TrainConfig,
    trainable: bool,
) -> Result<(GraphLoss, BTreeMap<Role, BoundNetwork>)> {
    let (steps, b) = (set.frames(), idx.len());
    let decs = bind(g, bundle, &DECODERS, trainable)?;
    let discs = bind(g, bundle, &DISCRIMINATORS, false)?;
    let mut parts = Vec::new();
    for ((dr, cr, domain), z) in PAIRS.into_iter().zip(z) {
        let zv = g.constant(z.clone());
        let q = decoder_graph(g, &decs[&dr], bundle.norm_for(dr), zv, steps, b)?;
        let fs = discriminator_graph(g, &discs[&cr], bundle.norm_for(cr), q.mean, steps, b)?;
        let target = g.constant(set.batch::<T>(idx, domain)?);
        parts.push(lsgan_generator_loss(g, fs, q, target, &cfg.objective)?);
    }
    Ok((sum_losses(g, parts)?, decs))
}

/// Adds losses with identical term layouts term by term.
fn sum_losses<T: Real>(g: &mut Graph<T>, parts: Vec<GraphLoss>) -> Result<GraphLoss> {
    let mut it = parts.into_iter();
    let mut acc = it.next().ok_or(PipelineError::EmptyCorpus)?;
    for p in it {
        acc.total = g.add(acc.total, p.total)?;
        for (a, b) in acc.terms.iter_mut().zip(p.terms) {
            a.2 = g.add(a.2, b.2)?;
        }
    }
    Ok(acc)
}

/// Refines both decoders against their discriminators. Per batch: one
/// discriminator update, then one decoder update. Encoders stay frozen and
/// the optimiser state starts fresh.
pub fn train_adversarial<T: Real>(
    bundle: &mut ModelBundle<T>,
    train: &SegmentSet,
    val: Option<&SegmentSet>,
    cfg: &TrainConfig,
) -> Result<StageReport> {
    train.require(&Domain::ALL)?;
    let val = val.filter(|v| !v.is_empty());
    if let Some(v) = val {
        v.require(&Domain::ALL)?;
    }
    let gen_opt = Optimizer::new(bundle, &DECODERS, cfg)?;
    let disc_opt = Optimizer::new(bundle, &DISCRIMINATORS, cfg)?;
    let mut state = (bundle, gen_opt, disc_opt);
    run_epochs(
        Stage::Adversarial,
        train,
        val,
        cfg,
        &mut state,
        |(bundle, gen_opt, disc_opt), idx, rng| {
            let (zx, zd) = draw_latents(bundle, train, idx, rng)?;

            let mut g = Graph::new();
            let (dloss, discs) = discriminator_loss(&mut g, bundle, train, idx, [&zx, &zd], true)?;
            let dbreak = dloss.breakdown(&g);
            if dbreak.total.is_finite() {
                let grads = gradients(&g, &dloss, &discs)?;
                disc_opt.step(bundle, grads)?;
            }

            let mut g = Graph::new();
            let (gloss, decs) = generator_loss(&mut g, bundle, train, idx, [&zx, &zd], cfg, true)?;
            let gbreak = gloss.breakdown(&g);
            if gbreak.total.is_finite() {
                let grads = gradients(&g, &gloss, &decs)?;
                gen_opt.step(bundle, grads)?;
            }
            Ok((gbreak, Some(dbreak)))
        },
        |(bundle, _, _), set, idx, rng| {
            let (zx, zd) = draw_latents(bundle, set, idx, rng)?;
            let mut g = Graph::new();
            let (gloss, _) = generator_loss(&mut g, bundle, set, idx, [&zx, &zd], cfg, false)?;
            Ok(gloss.breakdown(&g))
        },
    )
}
