//! Finite-difference checks of every differentiable building block.
//!
//! Each case draws its inputs from a seed, so a failing case can be rerun on
//! its own. Network cases run at toy widths and subsample large blocks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Result;
use crate::models::{
    decoder_graph, discriminator_graph, encoder_graph, nsvae_graph, FeatureNorm, GaussianVar, ModelDims, Network,
    NetworkSpec, Role,
};
use crate::objectives::{
    beta_pvae_loss, lsgan_discriminator_loss, lsgan_generator_loss, pvae_loss, vae_loss, ObjectiveConfig,
};
use crate::tensor::{
    gradient_check, Activation, BoundDense, BoundGru, GradCheckOptions, GradCheckReport, Graph, GruLayer, Real,
    TensorError, Var,
};

/// Entries checked per parameter block in the network cases.
pub const NETWORK_ENTRIES_PER_BLOCK: usize = 6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckCase {
    pub name: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

impl GradCheckCase {
    fn new(name: impl Into<String>, seed: u64, r: &GradCheckReport) -> Self {
        Self {
            name: name.into(),
            seed,
            max_rel_error: r.max_rel_error,
            checked: r.checked,
            passed: r.passed,
        }
    }
}

/// Names of the cases [`run_suite`] produces for each seed.
pub fn case_names() -> Vec<String> {
    let mut names: Vec<String> = ["linear", "relu", "sigmoid", "tanh"]
        .iter()
        .map(|a| format!("dense.{a}"))
        .collect();
    names.push("gru".into());
    names.extend(NETWORK_ROLES.iter().map(|r| format!("network.{}", r.name())));
    names.extend(LOSSES.iter().map(|l| format!("loss.{l}")));
    names
}

const NETWORK_ROLES: [Role; 8] = [
    Role::CvaeEnc,
    Role::NvaeEnc,
    Role::NsvaeEnc,
    Role::CvaeDec,
    Role::NvaeDec,
    Role::NsvaeDec,
    Role::DiscSpeech,
    Role::DiscNoise,
];

const LOSSES: [&str; 6] = ["vae", "beta_pvae", "beta_pvae_sampled", "pvae", "lsgan_gen", "lsgan_disc"];

/// Runs every case for every seed. `opts.max_entries_per_block` applies to
/// the small cases; network cases cap it at [`NETWORK_ENTRIES_PER_BLOCK`].
pub fn run_suite(seeds: &[u64], opts: &GradCheckOptions) -> Result<Vec<GradCheckCase>> {
    let mut out = Vec::new();
    for &seed in seeds {
        for act in [Activation::Linear, Activation::Relu, Activation::Sigmoid, Activation::Tanh] {
            let name = format!("dense.{}", format!("{act:?}").to_lowercase());
            out.push(GradCheckCase::new(name, seed, &dense_case(act, seed, opts)?));
        }
        out.push(GradCheckCase::new("gru", seed, &gru_case(seed, opts)?));
        let net_opts = GradCheckOptions {
            max_entries_per_block: Some(
                opts.max_entries_per_block
                    .map_or(NETWORK_ENTRIES_PER_BLOCK, |m| m.min(NETWORK_ENTRIES_PER_BLOCK)),
            ),
            ..*opts
        };
        for role in NETWORK_ROLES {
            let name = format!("network.{}", role.name());
            out.push(GradCheckCase::new(name, seed, &network_case(role, seed, &net_opts)?));
        }
        for loss in LOSSES {
            out.push(GradCheckCase::new(format!("loss.{loss}"), seed, &loss_case(loss, seed, opts)?));
        }
    }
    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lim: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-lim..lim))
}

fn err<E: std::fmt::Display>(e: E) -> TensorError {
    TensorError::InvalidArgument(e.to_string())
}

fn mean_square(g: &mut Graph<f64>, v: Var) -> crate::tensor::Result<Var> {
    let sq = g.square(v)?;
    g.mean(sq)
}

fn dense_case(act: Activation, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, 4, 5, 1.0);
    let params = vec![uniform(&mut rng, 3, 5, 0.8), uniform(&mut rng, 1, 3, 0.3)];
    Ok(gradient_check(
        |g, v| {
            let d = BoundDense {
                weight: v[0],
                bias: v[1],
                activation: act,
            };
            let xv = g.constant(x.clone());
            let y = d.forward(g, xv)?;
            mean_square(g, y)
        },
        &params,
        opts,
    )?)
}

fn gru_case(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (input, hidden, steps, batch) = (3, 4, 5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Array2<f64>> = (0..steps).map(|_| uniform(&mut rng, batch, input, 1.0)).collect();
    let h0 = uniform(&mut rng, batch, hidden, 0.5);
    let gru = GruLayer::<f64>::new(input, hidden, &mut rng);
    let params: Vec<Array2<f64>> = gru.params().into_iter().cloned().collect();
    Ok(gradient_check(
        |g, v| {
            let gru = BoundGru {
                w_update: v[0],
                b_update: v[1],
                w_reset: v[2],
                b_reset: v[3],
                w_cand: v[4],
                b_cand: v[5],
                input,
                hidden,
            };
            let inputs: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
            let h = g.constant(h0.clone());
            let hs = gru.forward(g, &inputs, h)?;
            let all = g.concat_rows(&hs)?;
            mean_square(g, all)
        },
        &params,
        opts,
    )?)
}

fn random_norm(rng: &mut ChaCha8Rng, features: usize) -> FeatureNorm<f64> {
    let mean: Vec<f64> = (0..features).map(|_| rng.random_range(-8.0..2.0)).collect();
    let std: Vec<f64> = (0..features).map(|_| rng.random_range(0.5..3.0)).collect();
    FeatureNorm::from_vecs(&mean, &std).expect("positive spreads")
}

fn network_case(role: Role, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let dims = ModelDims::toy();
    let (steps, batch) = (3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let net = Network::<f64>::new(NetworkSpec::for_role(role, &dims), &mut rng)?;
    let norm = random_norm(&mut rng, dims.features);
    let input = net.spec().input;
    let x = if input == dims.features {
        Array2::from_shape_fn((steps * batch, input), |(_, f)| {
            Real::to_f64(norm.mean[[0, f]]) + rng.random_range(-2.0..2.0)
        })
    } else {
        uniform(&mut rng, steps * batch, input, 1.5)
    };
    let params: Vec<Array2<f64>> = net.params().into_iter().cloned().collect();
    Ok(gradient_check(
        |g, v| {
            let bound = net.bind_vars(v).map_err(err)?;
            let xv = g.constant(x.clone());
            let outs: Vec<Var> = match role {
                Role::CvaeEnc | Role::NvaeEnc => {
                    let p = encoder_graph(g, &bound, &norm, xv, steps, batch).map_err(err)?;
                    vec![p.mean, p.log_var]
                }
                Role::NsvaeEnc => {
                    let (a, b) = nsvae_graph(g, &bound, &norm, xv, steps, batch).map_err(err)?;
                    vec![a.mean, a.log_var, b.mean, b.log_var]
                }
                Role::CvaeDec | Role::NvaeDec | Role::NsvaeDec => {
                    let q = decoder_graph(g, &bound, &norm, xv, steps, batch).map_err(err)?;
                    vec![q.mean, q.log_var]
                }
                Role::DiscSpeech | Role::DiscNoise => {
                    vec![discriminator_graph(g, &bound, &norm, xv, steps, batch).map_err(err)?]
                }
            };
            let cat = g.concat_cols(&outs)?;
            // Decoder outputs live on the LPS scale; shrink them so that the
            // loss stays O(1).
            let scaled = g.scale(cat, 0.1);
            mean_square(g, scaled)
        },
        &params,
        opts,
    )?)
}

fn gaussian(v: &[Var], at: usize) -> GaussianVar {
    GaussianVar {
        mean: v[at],
        log_var: v[at + 1],
    }
}

fn loss_case(loss: &str, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (rows, latent, features) = (4, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x51ed));
    let x = uniform(&mut rng, rows, features, 2.0);
    let targets: Vec<Array2<f64>> = (0..4).map(|_| uniform(&mut rng, rows, latent, 1.0)).collect();
    let real_scores = uniform(&mut rng, rows, 1, 1.0);
    let sampled = ObjectiveConfig {
        closed_form_latent_terms: false,
        mc_samples: 2,
        ..Default::default()
    };
    let mut weighted = ObjectiveConfig::default();
    weighted.weights.reg_x = 0.5;
    weighted.weights.reg_d = 0.25;
    weighted.weights.adv = 0.7;

    // Posterior blocks, then a linear decoder (weight, log-variance row).
    let mut params: Vec<Array2<f64>> = (0..4).map(|_| uniform(&mut rng, rows, latent, 1.0)).collect();
    let dec_in = if loss == "pvae" { 2 * latent } else { latent };
    params.push(uniform(&mut rng, dec_in, features, 0.8));
    params.push(uniform(&mut rng, 1, features, 0.5));

    let decode = |g: &mut Graph<f64>, z: Var, w: Var, lv: Var| -> std::result::Result<GaussianVar, crate::models::ModelError> {
        let mean = g.matmul(z, w)?;
        let zeros = g.constant(Array2::zeros((g.shape(z).0, features)));
        let log_var = g.add_row(zeros, lv)?;
        Ok(GaussianVar { mean, log_var })
    };

    Ok(gradient_check(
        |g, v| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let t: Vec<Var> = targets.iter().map(|a| g.constant(a.clone())).collect();
            let (tx, td) = (gaussian(&t, 0), gaussian(&t, 2));
            let (px, pd) = (gaussian(v, 0), gaussian(v, 2));
            let xv = g.constant(x.clone());
            let total = match loss {
                "vae" => vae_loss(g, px, xv, |g, z| decode(g, z, v[4], v[5]), &sampled, &mut r).map_err(err)?,
                "beta_pvae" => beta_pvae_loss(g, px, pd, tx, td, &weighted, &mut r).map_err(err)?,
                "beta_pvae_sampled" => beta_pvae_loss(g, px, pd, tx, td, &sampled, &mut r).map_err(err)?,
                "pvae" => pvae_loss(g, px, pd, tx, td, xv, |g, z| decode(g, z, v[4], v[5]), &weighted, &mut r)
                    .map_err(err)?,
                "lsgan_gen" => {
                    let q = decode(g, v[0], v[4], v[5]).map_err(err)?;
                    let scores = g.slice_cols(v[1], 0, 1)?;
                    lsgan_generator_loss(g, scores, q, xv, &weighted).map_err(err)?
                }
                "lsgan_disc" => {
                    let fake = g.slice_cols(v[2], 0, 1)?;
                    let shift = g.slice_cols(v[3], 1, 1)?;
                    let real = g.constant(real_scores.clone());
                    let real = g.add(real, shift)?;
                    lsgan_discriminator_loss(g, fake, real).map_err(err)?
                }
                other => return Err(TensorError::InvalidArgument(format!("unknown loss '{other}'"))),
            }
            .total;
            // Touch every block so unused ones report a zero gradient
            // rather than a missing one.
            let mut acc = total;
            for &p in v {
                let s = g.sum(p);
                let s = g.scale(s, 0.0);
                acc = g.add(acc, s)?;
            }
            Ok(acc)
        },
        &params,
        opts,
    )?)
}
