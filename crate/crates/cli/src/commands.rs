use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;
use vaegan_core::data::{build_corpus, Manifest, Split, Utterance, MANIFEST_FILE};
use vaegan_core::metrics::{aggregate, render_table, resample, si_sdr, stoi, EvalMode, EvalRecord};
use vaegan_core::models::ModelBundle;
use vaegan_core::pipeline::gradcheck::{case_names, run_suite};
use vaegan_core::pipeline::{
    enhance, load_checkpoint_for, save_checkpoint, train_adversarial, train_nsvae, train_vae, EnhanceMode,
    SegmentSet, Stage, StageReport, VaeKind,
};
use vaegan_core::signal::{
    apply_mask, ideal_ratio_mask, istft, lps, stft, StftConfig, Waveform, IRM_EXPONENT, LPS_FLOOR,
    SAMPLE_RATE,
};
use vaegan_core::signal::wav::{read_wav, write_wav};
use vaegan_core::tensor::{GradCheckOptions, Real};

use crate::config::RunConfig;
use crate::{Cli, Command, Precision, TrainArgs, UsageError};

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::resolve(cli.preset, cli.config.as_deref(), &cli.overrides, cli.seed)
        .map_err(|e| UsageError(format!("{e:#}")))?;
    eprintln!("# effective config\n{}", cfg.to_toml());
    match cli.command {
        Command::Synth { out } => synth(&cfg, &out),
        Command::TrainCvae(a) => train(&cfg, &a, Stage::Cvae, cli.precision),
        Command::TrainNvae(a) => train(&cfg, &a, Stage::Nvae, cli.precision),
        Command::TrainNsvae(a) => train(&cfg, &a, Stage::Nsvae, cli.precision),
        Command::TrainGan(a) => train(&cfg, &a, Stage::Adversarial, cli.precision),
        Command::Enhance {
            ckpt,
            input,
            mode,
            out,
            noise_out,
            resample,
        } => match cli.precision {
            Precision::F32 => enhance_file::<f32>(&cfg, &ckpt, &input, mode, &out, noise_out.as_deref(), resample),
            Precision::F64 => enhance_file::<f64>(&cfg, &ckpt, &input, mode, &out, noise_out.as_deref(), resample),
        },
        Command::Eval {
            ckpt,
            corpus,
            split,
            report,
            limit,
        } => {
            let report = report.unwrap_or_else(|| ckpt.with_file_name("eval.jsonl"));
            match cli.precision {
                Precision::F32 => eval::<f32>(&cfg, &ckpt, &corpus, split.into(), &report, limit),
                Precision::F64 => eval::<f64>(&cfg, &ckpt, &corpus, split.into(), &report, limit),
            }
        }
        Command::Gradcheck { seeds, report } => gradcheck(seeds, report.as_deref()),
    }
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let m = build_corpus(&cfg.corpus, out).with_context(|| format!("building corpus in {}", out.display()))?;
    for s in Split::ALL {
        info!("{}: {} utterances", s.name(), m.split(s).count());
    }
    println!("{}", out.join(MANIFEST_FILE).display());
    Ok(())
}

fn load_split(corpus: &Path, split: Split) -> Result<Vec<Utterance>> {
    let manifest = Manifest::load(corpus.join(MANIFEST_FILE))
        .with_context(|| format!("loading manifest from {}", corpus.display()))?;
    Ok(manifest.read_split(split)?)
}

fn load_bundle<T: Real>(cfg: &RunConfig, path: &Path) -> Result<ModelBundle<T>> {
    let ck = load_checkpoint_for(path, &cfg.train.dims).with_context(|| format!("loading {}", path.display()))?;
    Ok(ck.bundle.convert())
}

fn train(cfg: &RunConfig, args: &TrainArgs, stage: Stage, precision: Precision) -> Result<()> {
    match precision {
        Precision::F32 => train_as::<f32>(cfg, args, stage),
        Precision::F64 => train_as::<f64>(cfg, args, stage),
    }
}

fn train_as<T: Real>(cfg: &RunConfig, args: &TrainArgs, stage: Stage) -> Result<()> {
    let tc = &cfg.train;
    let mut bundle = match &args.init {
        Some(p) => load_bundle::<T>(cfg, p)?,
        None if matches!(stage, Stage::Cvae | Stage::Nvae) => ModelBundle::new(tc.dims, tc.ns_decoder, tc.seed)?,
        None => {
            return Err(UsageError(format!(
                "{} needs --init with trained speech and noise VAEs",
                stage.name()
            ))
            .into())
        }
    };
    let train_set = SegmentSet::from_utterances(&load_split(&args.corpus, Split::Train)?, tc.segment_frames)?;
    let val_utts = load_split(&args.corpus, Split::Val)?;
    let val_set = SegmentSet::from_utterances(&val_utts, tc.segment_frames)?;
    let val = (!val_set.is_empty()).then_some(&val_set);
    info!(
        "{}: {} training segments of {} frames, config {}",
        stage.name(),
        train_set.len(),
        tc.segment_frames,
        tc.hash()
    );
    let report = match stage {
        Stage::Cvae => train_vae(&mut bundle, VaeKind::Cvae, &train_set, val, tc)?,
        Stage::Nvae => train_vae(&mut bundle, VaeKind::Nvae, &train_set, val, tc)?,
        Stage::Nsvae => train_nsvae(&mut bundle, &train_set, val, tc)?,
        Stage::Adversarial => train_adversarial(&mut bundle, &train_set, val, tc)?,
        Stage::Init => unreachable!("no command trains the init stage"),
    };
    save_checkpoint(&bundle, report.progress(), tc.seed, &args.out)?;
    let report_path = args.report.clone().unwrap_or_else(|| sibling(&args.out, stage.name(), "jsonl"));
    write_stage_report(&report_path, cfg, &report)?;
    info!(
        "{} done in {:.1}s over {} epochs; checkpoint {}, report {}",
        stage.name(),
        report.wall_clock_s,
        report.epochs.len(),
        args.out.display(),
        report_path.display()
    );
    Ok(())
}

/// `dir/stem.tag.ext` for a file `dir/stem.*`.
fn sibling(path: &Path, tag: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{tag}.{ext}"))
}

#[derive(Serialize)]
struct Header<'a> {
    config: &'a RunConfig,
    config_hash: String,
}

fn write_stage_report(path: &Path, cfg: &RunConfig, report: &StageReport) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    let header = Header {
        config: cfg,
        config_hash: cfg.train.hash(),
    };
    writeln!(f, "{}", serde_json::to_string(&header)?)?;
    f.write_all(report.to_jsonl().as_bytes())?;
    f.flush()?;
    Ok(())
}

fn read_input(path: &Path, allow_resample: bool) -> Result<Waveform> {
    let w = read_wav(path, None).with_context(|| format!("reading {}", path.display()))?;
    if w.sample_rate() == SAMPLE_RATE {
        return Ok(w);
    }
    if !allow_resample {
        bail!(
            "{} is at {} Hz; the models expect {SAMPLE_RATE} Hz (pass --resample to convert)",
            path.display(),
            w.sample_rate()
        );
    }
    let s = resample(w.samples(), w.sample_rate(), SAMPLE_RATE);
    Ok(Waveform::new(s, SAMPLE_RATE)?)
}

/// Writes to a hidden sibling first so that `path` is either absent or
/// complete.
fn write_wav_atomic(path: &Path, w: &Waveform) -> Result<()> {
    let name = path
        .file_name()
        .with_context(|| format!("{} is not a file path", path.display()))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let res = write_wav(&tmp, w).map_err(anyhow::Error::from).and_then(|_| {
        std::fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))
    });
    if res.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    res
}

fn enhance_file<T: Real>(
    cfg: &RunConfig,
    ckpt: &Path,
    input: &Path,
    mode: EnhanceMode,
    out: &Path,
    noise_out: Option<&Path>,
    allow_resample: bool,
) -> Result<()> {
    let bundle = load_bundle::<T>(cfg, ckpt)?;
    let noisy = read_input(input, allow_resample)?;
    let est = enhance(&bundle, &noisy, mode)?;
    write_wav_atomic(out, &est.speech)?;
    if let Some(p) = noise_out {
        write_wav_atomic(p, &est.noise)?;
    }
    info!("enhanced {} ({:.2} s, mode {mode:?})", input.display(), noisy.duration_s());
    Ok(())
}

/// Noisy input masked by the ratio mask of the true components.
fn oracle(u: &Utterance) -> Result<Waveform> {
    let c = StftConfig::default();
    let spec = stft(&u.noisy, &c)?;
    let x = lps(&stft(&u.clean, &c)?, LPS_FLOOR)?;
    let d = lps(&stft(&u.noise, &c)?, LPS_FLOOR)?;
    let m = ideal_ratio_mask(&x, &d, IRM_EXPONENT)?;
    Ok(istft(&apply_mask(&m, &spec)?)?.fit_to_len(u.noisy.len())?)
}

fn eval<T: Real>(
    cfg: &RunConfig,
    ckpt: &Path,
    corpus: &Path,
    split: Split,
    report: &Path,
    limit: Option<usize>,
) -> Result<()> {
    let bundle = load_bundle::<T>(cfg, ckpt)?;
    let mut utts = load_split(corpus, split)?;
    if let Some(n) = limit {
        utts.truncate(n);
    }
    if utts.is_empty() {
        bail!("{} split of {} is empty", split.name(), corpus.display());
    }
    let mut records = Vec::new();
    for u in &utts {
        let outputs = [
            (EvalMode::Noisy, u.noisy.clone()),
            (EvalMode::L, enhance(&bundle, &u.noisy, EnhanceMode::L)?.speech),
            (EvalMode::M, enhance(&bundle, &u.noisy, EnhanceMode::M)?.speech),
            (EvalMode::Oracle, oracle(u)?),
        ];
        for (mode, est) in outputs {
            records.push(EvalRecord {
                utterance_id: u.id.clone(),
                snr_bucket_db: u.mix.snr_db.round() as i32,
                si_sdr_db: si_sdr(&u.clean, &est)?,
                stoi: stoi(&u.clean, &est)?,
                mode,
            });
        }
    }
    let mut f = BufWriter::new(File::create(report).with_context(|| format!("creating {}", report.display()))?);
    writeln!(
        f,
        "{}",
        serde_json::to_string(&Header {
            config: cfg,
            config_hash: cfg.train.hash()
        })?
    )?;
    for r in &records {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    f.flush()?;
    let table = render_table(&aggregate(&records)?);
    std::fs::write(report.with_extension("txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn gradcheck(seeds: u64, report: Option<&Path>) -> Result<()> {
    let seeds: Vec<u64> = (0..seeds).collect();
    let cases = run_suite(&seeds, &GradCheckOptions::default())?;
    if let Some(p) = report {
        let mut f = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
        for c in &cases {
            writeln!(f, "{}", serde_json::to_string(c)?)?;
        }
        f.flush()?;
    }
    let mut failed = 0;
    for name in case_names() {
        let of: Vec<_> = cases.iter().filter(|c| c.name == name).collect();
        let worst = of.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
        let bad = of.iter().filter(|c| !c.passed).count();
        failed += bad;
        let tag = if bad == 0 { "ok  " } else { "FAIL" };
        println!("{tag} {name:<28} seeds {:>3}  max rel err {worst:.2e}", of.len());
    }
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", cases.len());
    }
    println!("all {} gradient checks passed", cases.len());
    Ok(())
}
