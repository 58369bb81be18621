use vaegan_core::data::{generate_utterance, CorpusConfig, Split, Utterance};
use vaegan_core::models::{ModelBundle, ModelDims, Role};
use vaegan_core::pipeline::{
    enhance, load_checkpoint, load_checkpoint_for, param_hash, save_checkpoint, train_adversarial, train_nsvae,
    train_vae, EnhanceMode, PipelineError, SegmentSet, Stage, TrainConfig, VaeKind,
};

fn corpus(train: usize, val: usize) -> (Vec<Utterance>, Vec<Utterance>) {
    let cfg = CorpusConfig {
        train,
        val,
        test: 0,
        ..CorpusConfig::toy()
    };
    let gen = |s: Split| (0..cfg.count(s)).map(|i| generate_utterance(&cfg, s, i).unwrap()).collect();
    (gen(Split::Train), gen(Split::Val))
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 4,
        segment_frames: 31,
        ..TrainConfig::toy()
    }
}

fn sets(cfg: &TrainConfig) -> (SegmentSet, SegmentSet) {
    let (tr, va) = corpus(6, 2);
    (
        SegmentSet::from_utterances(&tr, cfg.segment_frames).unwrap(),
        SegmentSet::from_utterances(&va, cfg.segment_frames).unwrap(),
    )
}

fn all_roles<T: vaegan_core::tensor::Real>(b: &ModelBundle<T>) -> Vec<Role> {
    b.roles().collect()
}

fn trained(cfg: &TrainConfig, tr: &SegmentSet, va: &SegmentSet) -> ModelBundle<f64> {
    let mut b = ModelBundle::<f64>::new(cfg.dims, cfg.ns_decoder, cfg.seed).unwrap();
    train_vae(&mut b, VaeKind::Cvae, tr, Some(va), cfg).unwrap();
    train_vae(&mut b, VaeKind::Nvae, tr, Some(va), cfg).unwrap();
    train_nsvae(&mut b, tr, Some(va), cfg).unwrap();
    train_adversarial(&mut b, tr, Some(va), cfg).unwrap();
    b
}

#[test]
fn zero_learning_rate_leaves_every_parameter_alone() {
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..small_cfg()
    };
    let (tr, va) = sets(&cfg);
    let mut b = ModelBundle::<f64>::new(cfg.dims, cfg.ns_decoder, cfg.seed).unwrap();
    let roles = all_roles(&b);
    let before = param_hash(&b, &roles).unwrap();
    let r = train_vae(&mut b, VaeKind::Cvae, &tr, Some(&va), &cfg).unwrap();
    train_vae(&mut b, VaeKind::Nvae, &tr, Some(&va), &cfg).unwrap();
    train_nsvae(&mut b, &tr, Some(&va), &cfg).unwrap();
    train_adversarial(&mut b, &tr, Some(&va), &cfg).unwrap();
    assert_eq!(param_hash(&b, &roles).unwrap(), before);
    assert!(r.epochs[0].train.total.is_finite());
}

#[test]
fn stages_touch_only_their_own_networks() {
    let cfg = small_cfg();
    let (tr, va) = sets(&cfg);
    let mut b = ModelBundle::<f64>::new(cfg.dims, cfg.ns_decoder, cfg.seed).unwrap();
    let hash = |b: &ModelBundle<f64>, r: &[Role]| param_hash(b, r).unwrap();
    let others = |own: &[Role]| -> Vec<Role> { Role::CORE.into_iter().filter(|r| !own.contains(r)).collect() };

    let steps: [(&[Role], Stage); 4] = [
        (&[Role::CvaeEnc, Role::CvaeDec], Stage::Cvae),
        (&[Role::NvaeEnc, Role::NvaeDec], Stage::Nvae),
        (&[Role::NsvaeEnc], Stage::Nsvae),
        (&[Role::CvaeDec, Role::NvaeDec, Role::DiscSpeech, Role::DiscNoise], Stage::Adversarial),
    ];
    for (own, stage) in steps {
        let frozen = others(own);
        let (f0, o0) = (hash(&b, &frozen), hash(&b, own));
        let report = match stage {
            Stage::Cvae => train_vae(&mut b, VaeKind::Cvae, &tr, Some(&va), &cfg),
            Stage::Nvae => train_vae(&mut b, VaeKind::Nvae, &tr, Some(&va), &cfg),
            Stage::Nsvae => train_nsvae(&mut b, &tr, Some(&va), &cfg),
            _ => train_adversarial(&mut b, &tr, Some(&va), &cfg),
        }
        .unwrap();
        assert_eq!(report.stage, stage);
        assert_eq!(hash(&b, &frozen), f0, "{stage:?} changed a frozen network");
        assert_ne!(hash(&b, own), o0, "{stage:?} did not train");
    }
}

#[test]
fn nsvae_needs_trained_targets_in_the_corpus() {
    let cfg = small_cfg();
    let (tr, _) = corpus(2, 0);
    let noisy_only: Vec<_> = tr.iter().map(|u| u.noisy.clone()).collect();
    let set = SegmentSet::from_waveforms(vaegan_core::models::Domain::Noisy, &noisy_only, cfg.segment_frames).unwrap();
    let mut b = ModelBundle::<f32>::new(cfg.dims, false, 0).unwrap();
    assert!(matches!(
        train_nsvae(&mut b, &set, None, &cfg),
        Err(PipelineError::Unpaired(_))
    ));
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let cfg = small_cfg();
    let (tr, va) = sets(&cfg);
    let a = trained(&cfg, &tr, &va);
    let b = trained(&cfg, &tr, &va);
    assert_eq!(a, b);
    let other = trained(&TrainConfig { seed: 1, ..cfg.clone() }, &tr, &va);
    assert_ne!(param_hash(&a, &all_roles(&a)).unwrap(), param_hash(&other, &all_roles(&other)).unwrap());
}

#[test]
fn checkpoint_files_round_trip_and_reject_damage() {
    let cfg = small_cfg();
    let (tr, va) = sets(&cfg);
    let mut b = ModelBundle::<f32>::new(cfg.dims, true, 3).unwrap();
    let r = train_vae(&mut b, VaeKind::Cvae, &tr, Some(&va), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_checkpoint(&b, r.progress(), 3, &path).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.bundle, b);
    assert_eq!(ck.progress, r.progress());
    assert_eq!(ck.seed, 3);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);

    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(PipelineError::Corrupt(_))), "cut at {cut}");
    }
    let mut bumped = bytes.clone();
    bumped[8] = 99;
    std::fs::write(&path, &bumped).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(PipelineError::VersionMismatch { found: 99, .. })
    ));

    std::fs::write(&path, &bytes).unwrap();
    let wider = ModelDims { latent: 8, ..cfg.dims };
    assert!(matches!(
        load_checkpoint_for(&path, &wider),
        Err(PipelineError::ShapeMismatch { .. })
    ));
}

#[test]
fn trained_bundle_enhances_to_finite_audio() {
    let cfg = small_cfg();
    let (tr, va) = sets(&cfg);
    let b = trained(&cfg, &tr, &va);
    let (_, val) = corpus(0, 1);
    for mode in [EnhanceMode::L, EnhanceMode::M] {
        let out = enhance(&b, &val[0].noisy, mode).unwrap();
        assert_eq!(out.speech.len(), val[0].noisy.len());
        assert!(out.speech.samples().iter().chain(out.noise.samples()).all(|v| v.is_finite()));
    }
}
