use super::*;
use crate::tensor::{gradient_check, GradCheckOptions};
use ndarray::array;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gauss(mean: &[f64], log_var: &[f64]) -> DiagGaussian {
    DiagGaussian::new(mean.to_vec(), log_var.to_vec()).unwrap()
}

fn random_gauss(rng: &mut ChaCha8Rng, dim: usize) -> DiagGaussian {
    let mean = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
    let log_var = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    DiagGaussian::new(mean, log_var).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

#[test]
fn log_two_pi_constant() {
    assert!((LN_2PI - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
}

#[test]
fn kl_hand_values() {
    let s = DiagGaussian::standard(3);
    assert_eq!(kl_diag(&s, &s).unwrap(), 0.0);
    let shifted = gauss(&[1.0, 1.0], &[0.0, 0.0]);
    assert!((kl_diag(&shifted, &DiagGaussian::standard(2)).unwrap() - 1.0).abs() < 1e-15);
    let wide = gauss(&[0.0], &[4f64.ln()]);
    let expected = 0.5 * (-(4f64.ln()) + 4.0 - 1.0);
    assert!((kl_diag(&wide, &DiagGaussian::standard(1)).unwrap() - expected).abs() < 1e-15);
    assert!((expected - 0.8069).abs() < 1e-4);
    assert!(kl_diag(&s, &DiagGaussian::standard(2)).is_err());
}

#[test]
fn cross_entropy_hand_values() {
    let s = DiagGaussian::standard(4);
    let per_dim = -0.5 * (LN_2PI + 1.0);
    assert!((gauss_cross_entropy(&s, &s).unwrap() - 4.0 * per_dim).abs() < 1e-12);
    assert!((per_dim + 1.4189).abs() < 1e-4);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_gauss(&mut rng, 5);
    let q = random_gauss(&mut rng, 5);
    let lhs = gauss_cross_entropy(&p, &p).unwrap() - gauss_cross_entropy(&p, &q).unwrap();
    assert!((lhs - kl_diag(&p, &q).unwrap()).abs() < 1e-12);
}

#[test]
fn loglik_hand_values() {
    let g = gauss(&[0.3, -0.2], &[0.0, 0.0]);
    let at_mean = gauss_loglik(&[0.3, -0.2], &g).unwrap();
    assert!((at_mean + LN_2PI).abs() < 1e-15);
    let wider = gauss(&[0.3, -0.2], &[2f64.ln(), 2f64.ln()]);
    let drop = at_mean - gauss_loglik(&[0.3, -0.2], &wider).unwrap();
    assert!((drop - 2.0 * 0.5 * 2f64.ln()).abs() < 1e-12);
    let mut prev = at_mean;
    for k in 1..6 {
        let v = gauss_loglik(&[0.3 + 0.2 * k as f64, -0.2], &g).unwrap();
        assert!(v < prev);
        prev = v;
    }
}

#[test]
fn monte_carlo_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let p = random_gauss(&mut rng, 4);
    let q = random_gauss(&mut rng, 4);
    let ce = gauss_cross_entropy(&p, &q).unwrap();
    let mc = mc_cross_entropy(&p, &q, 100_000, &mut rng).unwrap();
    assert!(((mc - ce) / ce).abs() < 0.01, "{mc} vs {ce}");
}

#[test]
fn graph_terms_match_value_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (rows, dim) = (3, 4);
    let pm = random_matrix(&mut rng, rows, dim, -1.0, 1.0);
    let pl = random_matrix(&mut rng, rows, dim, -1.0, 1.0);
    let qm = random_matrix(&mut rng, rows, dim, -1.0, 1.0);
    let ql = random_matrix(&mut rng, rows, dim, -1.0, 1.0);
    let x = random_matrix(&mut rng, rows, dim, -1.0, 1.0);
    let mut g = Graph::<f64>::new();
    let p = constant_gaussian(&mut g, pm.clone(), pl.clone());
    let q = constant_gaussian(&mut g, qm.clone(), ql.clone());
    let xv = g.constant(x.clone());
    let kl = kl_graph(&mut g, p, q).unwrap();
    let ce = cross_entropy_graph(&mut g, p, q).unwrap();
    let ll = loglik_graph(&mut g, xv, q).unwrap();

    let row = |m: &Array2<f64>, l: &Array2<f64>, r: usize| gauss(&m.row(r).to_vec(), &l.row(r).to_vec());
    let mean_over = |f: &dyn Fn(usize) -> f64| (0..rows).map(f).sum::<f64>() / rows as f64;
    let kl_ref = mean_over(&|r| kl_diag(&row(&pm, &pl, r), &row(&qm, &ql, r)).unwrap());
    let ce_ref = mean_over(&|r| gauss_cross_entropy(&row(&pm, &pl, r), &row(&qm, &ql, r)).unwrap());
    let ll_ref = mean_over(&|r| gauss_loglik(&x.row(r).to_vec(), &row(&qm, &ql, r)).unwrap());
    assert!((g.scalar(kl) - kl_ref).abs() < 1e-12);
    assert!((g.scalar(ce) - ce_ref).abs() < 1e-12);
    assert!((g.scalar(ll) - ll_ref).abs() < 1e-12);
}

/// Decoder stub returning fixed mean and log-variance constants.
fn fixed_decoder(mean: Array2<f64>, log_var: Array2<f64>) -> impl FnMut(&mut Graph<f64>, Var) -> std::result::Result<GaussianVar, ModelError> {
    move |g, _z| Ok(constant_gaussian(g, mean.clone(), log_var.clone()))
}

#[test]
fn vae_loss_cases() {
    let (rows, latent, feat) = (4, 3, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_matrix(&mut rng, rows, feat, -2.0, 2.0);
    let pm = random_matrix(&mut rng, rows, latent, -1.0, 1.0);
    let pl = random_matrix(&mut rng, rows, latent, -1.0, 1.0);

    // Encoder at the prior and an exact unit-variance decoder.
    let mut g = Graph::<f64>::new();
    let post = constant_gaussian(&mut g, Array2::zeros((rows, latent)), Array2::zeros((rows, latent)));
    let xv = g.constant(x.clone());
    let dec = fixed_decoder(x.clone(), Array2::zeros((rows, feat)));
    let loss = vae_loss(&mut g, post, xv, dec, &ObjectiveConfig::default(), &mut rng).unwrap();
    let b = loss.breakdown(&g);
    assert!((b.total - 0.5 * feat as f64 * LN_2PI).abs() < 1e-12);
    assert_eq!(b.term("kl"), Some(0.0));

    let eval = |beta: f64, rng: &mut ChaCha8Rng| {
        let mut g = Graph::<f64>::new();
        let post = constant_gaussian(&mut g, pm.clone(), pl.clone());
        let xv = g.constant(x.clone());
        let dec = fixed_decoder(x.mapv(|v| v * 0.5), Array2::from_elem((rows, feat), 0.3));
        let cfg = ObjectiveConfig {
            beta,
            ..Default::default()
        };
        vae_loss(&mut g, post, xv, dec, &cfg, rng).unwrap().breakdown(&g)
    };
    let b0 = eval(0.0, &mut rng);
    assert!((b0.total - b0.term("recon").unwrap()).abs() < 1e-12);
    let b1 = eval(1.0, &mut rng);
    let b2 = eval(2.0, &mut rng);
    assert!((b1.total - (b2.total - b1.term("kl").unwrap())).abs() < 1e-12);
    for b in [b0, b1, b2] {
        assert!((b.total - b.weighted_sum()).abs() < 1e-9);
    }
}

fn pvae_inputs(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> [Array2<f64>; 8] {
    std::array::from_fn(|_| random_matrix(rng, rows, dim, -1.0, 1.0))
}

#[test]
fn beta_pvae_zero_at_shared_prior() {
    let mut g = Graph::<f64>::new();
    let z = || (Array2::zeros((2, 3)), Array2::zeros((2, 3)));
    let sx = constant_gaussian(&mut g, z().0, z().1);
    let sd = constant_gaussian(&mut g, z().0, z().1);
    let tx = constant_gaussian(&mut g, z().0, z().1);
    let td = constant_gaussian(&mut g, z().0, z().1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let l = beta_pvae_loss(&mut g, sx, sd, tx, td, &ObjectiveConfig::default(), &mut rng).unwrap();
    let b = l.breakdown(&g);
    assert!(b.total.abs() < 1e-12);
    assert!(b.terms.values().all(|v| v.abs() < 1e-12));
}

#[test]
fn beta_pvae_telescopes_to_prior_kl() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let [a, b, c, d, e, f, h, i] = pvae_inputs(&mut rng, 3, 4);
        let mut g = Graph::<f64>::new();
        let sx = constant_gaussian(&mut g, a, b);
        let sd = constant_gaussian(&mut g, c, d);
        let tx = constant_gaussian(&mut g, e, f);
        let td = constant_gaussian(&mut g, h, i);
        let l = beta_pvae_loss(&mut g, sx, sd, tx, td, &ObjectiveConfig::default(), &mut rng).unwrap();
        let px = standard_prior(&mut g, sx.mean);
        let kx = kl_graph(&mut g, sx, px).unwrap();
        let kd = kl_graph(&mut g, sd, px).unwrap();
        let expected = g.scalar(kx) + g.scalar(kd);
        assert!((l.value(&g) - expected).abs() < 1e-9);
    }
}

#[test]
fn beta_pvae_sampled_mode_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let [a, b, c, d, e, f, h, i] = pvae_inputs(&mut rng, 1, 3);
    let eval = |closed: bool, draws: usize, rng: &mut ChaCha8Rng| {
        let mut g = Graph::<f64>::new();
        let sx = constant_gaussian(&mut g, a.clone(), b.clone());
        let sd = constant_gaussian(&mut g, c.clone(), d.clone());
        let tx = constant_gaussian(&mut g, e.clone(), f.clone());
        let td = constant_gaussian(&mut g, h.clone(), i.clone());
        let cfg = ObjectiveConfig {
            closed_form_latent_terms: closed,
            mc_samples: draws,
            ..Default::default()
        };
        beta_pvae_loss(&mut g, sx, sd, tx, td, &cfg, rng).unwrap().value(&g)
    };
    let exact = eval(true, 1, &mut rng);
    // One graph with 1e5 draws of a 1x3 batch is cheap enough.
    let sampled = eval(false, 100_000, &mut rng);
    assert!(((sampled - exact) / exact).abs() < 0.01, "{sampled} vs {exact}");
}

#[test]
fn pvae_reduces_to_beta_pvae() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let [a, b, c, d, e, f, h, i] = pvae_inputs(&mut rng, 2, 3);
    let y = random_matrix(&mut rng, 2, 5, -1.0, 1.0);
    let run = |recon_w: f64, with_dec: bool, rng: &mut ChaCha8Rng| {
        let mut g = Graph::<f64>::new();
        let sx = constant_gaussian(&mut g, a.clone(), b.clone());
        let sd = constant_gaussian(&mut g, c.clone(), d.clone());
        let tx = constant_gaussian(&mut g, e.clone(), f.clone());
        let td = constant_gaussian(&mut g, h.clone(), i.clone());
        let yv = g.constant(y.clone());
        let mut cfg = ObjectiveConfig::default();
        cfg.weights.recon = recon_w;
        let l = if with_dec {
            let dec = fixed_decoder(y.clone(), Array2::zeros(y.dim()));
            pvae_loss(&mut g, sx, sd, tx, td, yv, dec, &cfg, rng).unwrap()
        } else {
            beta_pvae_loss(&mut g, sx, sd, tx, td, &cfg, rng).unwrap()
        };
        l.breakdown(&g)
    };
    let base = run(1.0, false, &mut rng);
    let zero = run(0.0, true, &mut rng);
    assert!((zero.total - base.total).abs() < 1e-12);
    let full = run(1.0, true, &mut rng);
    assert!((full.term("recon").unwrap() - 0.5 * 5.0 * LN_2PI).abs() < 1e-12);
}

#[test]
fn lsgan_hand_values() {
    let score = |g: &mut Graph<f64>, v: f64, n: usize| g.constant(Array2::from_elem((n, 1), v));
    let x = array![[0.1, 0.2], [0.3, 0.4]];
    let eval_gen = |s: f64| {
        let mut g = Graph::<f64>::new();
        let fake = score(&mut g, s, 3);
        let dec = constant_gaussian(&mut g, x.clone(), Array2::zeros((2, 2)));
        let t = g.constant(x.clone());
        lsgan_generator_loss(&mut g, fake, dec, t, &ObjectiveConfig::default())
            .unwrap()
            .breakdown(&g)
    };
    let one = eval_gen(1.0);
    assert_eq!(one.term("adv"), Some(0.0));
    assert!((one.total - one.term("recon").unwrap()).abs() < 1e-15);
    let zero = eval_gen(0.0);
    assert!((zero.total - 1.0 - zero.term("recon").unwrap()).abs() < 1e-12);
    assert!((eval_gen(0.5).term("adv").unwrap() - 0.25).abs() < 1e-15);

    let eval_disc = |f: f64, r: f64| {
        let mut g = Graph::<f64>::new();
        let fake = score(&mut g, f, 4);
        let real = score(&mut g, r, 2);
        lsgan_discriminator_loss(&mut g, fake, real).unwrap().value(&g)
    };
    assert!((eval_disc(0.5, 0.5) - 0.5).abs() < 1e-15);
    assert_eq!(eval_disc(0.0, 1.0), 0.0);
    assert_eq!(eval_disc(1.0, 0.0), 2.0);

    let mut g = Graph::<f64>::new();
    let empty = g.constant(Array2::zeros((0, 1)));
    let real = score(&mut g, 1.0, 2);
    assert!(matches!(
        lsgan_discriminator_loss(&mut g, empty, real),
        Err(ObjectiveError::EmptyBatch)
    ));
}

#[test]
fn invalid_config_is_rejected() {
    let mut cfg = ObjectiveConfig::default();
    cfg.weights.kl_x = -1.0;
    assert!(cfg.validate().is_err());
    let cfg = ObjectiveConfig {
        mc_samples: 0,
        ..Default::default()
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn loss_gradients_match_finite_differences() {
    let opts = GradCheckOptions::default();
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let params: Vec<Array2<f64>> = (0..4).map(|_| random_matrix(&mut rng, 2, 3, -1.0, 1.0)).collect();
        let x = random_matrix(&mut rng, 2, 3, -1.0, 1.0);

        let report = gradient_check(
            |g, v| {
                let p = GaussianVar { mean: v[0], log_var: v[1] };
                let q = GaussianVar { mean: v[2], log_var: v[3] };
                let t = g.constant(x.clone());
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let cfg = ObjectiveConfig {
                    closed_form_latent_terms: false,
                    mc_samples: 2,
                    ..Default::default()
                };
                let a = beta_pvae_loss(g, p, q, q, p, &cfg, &mut r).map_err(to_tensor)?;
                let b = vae_loss(g, p, t, |_, _| Ok(q), &cfg, &mut r).map_err(to_tensor)?;
                let s = g.add(a.total, b.total)?;
                let k = kl_graph(g, q, p).map_err(to_tensor)?;
                g.add(s, k)
            },
            &params,
            &opts,
        )
        .unwrap();
        assert!(report.passed, "seed {seed}: {report:?}");
    }
}

fn to_tensor(e: ObjectiveError) -> TensorError {
    TensorError::InvalidArgument(e.to_string())
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_zero_only_on_coincidence(
        mean in proptest::collection::vec(-3.0f64..3.0, 1..6),
        seed in any::<u64>(),
        eps in 1e-3f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = mean.len();
        let log_var: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = DiagGaussian::new(mean.clone(), log_var.clone()).unwrap();
        prop_assert!(kl_diag(&p, &p).unwrap().abs() < 1e-12);
        let mut m2 = mean.clone();
        m2[rng.random_range(0..dim)] += eps;
        let q = DiagGaussian::new(m2, log_var.clone()).unwrap();
        prop_assert!(kl_diag(&p, &q).unwrap() > 0.0);
        let mut l2 = log_var;
        l2[rng.random_range(0..dim)] -= eps;
        let q = DiagGaussian::new(mean, l2).unwrap();
        prop_assert!(kl_diag(&p, &q).unwrap() > 0.0);
    }

    #[test]
    fn telescoping_holds_for_arbitrary_gaussians(seed in any::<u64>(), dim in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_gauss(&mut rng, dim);
        let t = random_gauss(&mut rng, dim);
        let q = random_gauss(&mut rng, dim);
        let lhs = kl_diag(&p, &t).unwrap() + gauss_cross_entropy(&p, &t).unwrap()
            - gauss_cross_entropy(&p, &q).unwrap();
        prop_assert!((lhs - kl_diag(&p, &q).unwrap()).abs() < 1e-9);
    }
}
